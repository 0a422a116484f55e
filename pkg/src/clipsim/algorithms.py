"""The optimizer steps behind a single interface: clipped SGD, the
shift-clipping (error-feedback) variant, its double-momentum extension with
optional privacy noise, the ideal-shift variant, and a momentum-SGD baseline.

All per-worker state is held in (n_workers, d) arrays.  Per-worker work is
mapped over workers (optionally on a thread pool) and reduced in fixed worker
order, so results are independent of scheduling.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    StreamFamily,
    TAU_UNBOUNDED,
    as_vector,
    clip_rows,
    gaussian_vector,
    l2,
)
from .diagnostics import RunRecord
from .errors import DivergenceError, InvalidParameterError, StateError
from .oracles import three_point_atoms

ALGORITHMS = ("clip_sgd", "clip21_sgd", "clip21_sgd2m", "clip21_ideal", "sgdm")


@dataclass
class HyperParams:
    gamma: float
    tau: float
    beta: float = 1.0
    beta_hat: float = 1.0
    sigma_omega: float = 0.0

    def validate(self):
        if not self.gamma > 0:
            raise InvalidParameterError(f"gamma must be positive, got {self.gamma}")
        if not self.tau > 0:
            raise InvalidParameterError(f"tau must be positive, got {self.tau}")
        if not 0.0 < self.beta <= 1.0:
            raise InvalidParameterError(f"beta must lie in (0, 1], got {self.beta}")
        if not 0.0 < self.beta_hat <= 1.0:
            raise InvalidParameterError(
                f"beta_hat must lie in (0, 1], got {self.beta_hat}"
            )
        if self.sigma_omega < 0:
            raise InvalidParameterError(
                f"sigma_omega must be nonnegative, got {self.sigma_omega}"
            )
        return self


@dataclass
class OptimizerState:
    x: np.ndarray                 # iterate, (d,)
    g: np.ndarray                 # server direction, (d,)
    g_i: np.ndarray               # per-worker shifts, (n, d)
    v_i: np.ndarray | None        # per-worker momentum buffers, (n, d)
    omega_sum: np.ndarray         # running mean privacy noise, (d,)
    t: int = 0

    def check(self, problem):
        n, d = problem.n_workers, problem.d
        if self.x.shape != (d,) or self.g.shape != (d,) or self.g_i.shape != (n, d):
            raise StateError(
                f"state shapes {self.x.shape}/{self.g.shape}/{self.g_i.shape} "
                f"do not match problem (n={n}, d={d})"
            )
        if self.v_i is not None and self.v_i.shape != (n, d):
            raise StateError(f"momentum buffer shape {self.v_i.shape} != ({n}, {d})")
        return self


def _map_workers(fn, n, pool):
    if pool is None:
        return [fn(i) for i in range(n)]
    return list(pool.map(fn, range(n)))


def _stack_draws(oracle, problem, x, t, pool):
    rows = _map_workers(lambda i: oracle.draw(problem, i, x, t), problem.n_workers, pool)
    return np.stack(rows)


def _dp_noise_rows(oracle, problem, sigma_omega, pool):
    rows = _map_workers(
        lambda i: gaussian_vector(oracle.streams.dp(i), problem.d, sigma_omega),
        problem.n_workers,
        pool,
    )
    return np.stack(rows)


def init_state(algorithm, problem, oracle, hp, x0=None):
    """Default initialization: x = x0 (zeros if omitted), g = v = 0.

    The ideal-shift variant applies its shift rule once at x0 (consuming the
    step-0 draws) so its recursion starts from g^0 = grad + clipped noise.
    """
    if algorithm not in ALGORITHMS:
        raise InvalidParameterError(f"unknown algorithm {algorithm!r}")
    n, d = problem.n_workers, problem.d
    x = np.zeros(d) if x0 is None else as_vector(x0, d).copy()
    needs_v = algorithm in ("clip21_sgd2m", "sgdm")
    state = OptimizerState(
        x=x,
        g=np.zeros(d),
        g_i=np.zeros((n, d)),
        v_i=np.zeros((n, d)) if needs_v else None,
        omega_sum=np.zeros(d),
        t=0,
    )
    if algorithm == "clip21_ideal":
        exact = problem.worker_grads(x)
        draws = _stack_draws(oracle, problem, x, 0, None)
        c = clip_rows(draws - exact, hp.tau)
        state.g_i = exact + c
        state.g = state.g_i.mean(axis=0)
    return state.check(problem)


def clip_sgd_step(state, problem, oracle, hp, pool=None):
    """Clip each worker's stochastic gradient, average, step.

    With sigma_omega > 0, privacy noise is added to the clipped gradients
    (an extension: the base method has no noise term)."""
    t = state.t
    draws = _stack_draws(oracle, problem, state.x, t, pool)
    norms = l2(draws)
    c = clip_rows(draws, hp.tau)
    omega_sum = state.omega_sum
    if hp.sigma_omega > 0:
        omega = _dp_noise_rows(oracle, problem, hp.sigma_omega, pool)
        c = c + omega
        omega_sum = omega_sum + omega.mean(axis=0)
    g = c.mean(axis=0)
    x_new = state.x - hp.gamma * g
    new = OptimizerState(x=x_new, g=g, g_i=c, v_i=None, omega_sum=omega_sum, t=t + 1)
    return new, int((norms > hp.tau).sum())


def clip21_sgd_step(state, problem, oracle, hp, pool=None):
    """Move with the stale direction, then clip the difference between the new
    stochastic gradient and each worker's shift."""
    t = state.t
    x_new = state.x - hp.gamma * state.g
    draws = _stack_draws(oracle, problem, x_new, t + 1, pool)
    diff = draws - state.g_i
    norms = l2(diff)
    c = clip_rows(diff, hp.tau)
    g_i_new = state.g_i + c
    g_new = state.g + c.mean(axis=0)
    new = OptimizerState(
        x=x_new, g=g_new, g_i=g_i_new, v_i=None, omega_sum=state.omega_sum, t=t + 1
    )
    return new, int((norms > hp.tau).sum())


def clip21_sgd2m_step(state, problem, oracle, hp, pool=None):
    """Momentum buffer on each worker, clipped shift difference, damped server
    accumulation, optional additive privacy noise on the communicated value."""
    t = state.t
    x_new = state.x - hp.gamma * state.g
    draws = _stack_draws(oracle, problem, x_new, t + 1, pool)
    v_new = (1.0 - hp.beta) * state.v_i + hp.beta * draws
    diff = v_new - state.g_i
    norms = l2(diff)
    clipped = clip_rows(diff, hp.tau)
    if hp.sigma_omega > 0:
        omega = _dp_noise_rows(oracle, problem, hp.sigma_omega, pool)
        c = clipped + omega
        omega_sum_new = state.omega_sum + omega.mean(axis=0)
    else:
        c = clipped
        omega_sum_new = state.omega_sum
    g_i_new = state.g_i + hp.beta_hat * clipped
    g_new = state.g + hp.beta_hat * c.mean(axis=0)
    new = OptimizerState(
        x=x_new, g=g_new, g_i=g_i_new, v_i=v_new, omega_sum=omega_sum_new, t=t + 1
    )
    return new, int((norms > hp.tau).sum())


def clip21_ideal_step(state, problem, oracle, hp, pool=None):
    """Shift by the exact local gradient instead of the learned one; needs a
    problem that exposes exact per-worker gradients."""
    t = state.t
    x_new = state.x - hp.gamma * state.g
    exact = problem.worker_grads(x_new)
    draws = _stack_draws(oracle, problem, x_new, t + 1, pool)
    noise = draws - exact
    norms = l2(noise)
    c = clip_rows(noise, hp.tau)
    g_i_new = exact + c
    g_new = g_i_new.mean(axis=0)
    new = OptimizerState(
        x=x_new, g=g_new, g_i=g_i_new, v_i=None, omega_sum=state.omega_sum, t=t + 1
    )
    return new, int((norms > hp.tau).sum())


def sgdm_step(state, problem, oracle, hp, pool=None):
    """Heavy-ball baseline: the double-momentum method with the first momentum
    off, clipping inactive, and no privacy noise. Shares that code path so the
    reduction holds bitwise."""
    eff = replace(hp, beta=1.0, tau=TAU_UNBOUNDED, sigma_omega=0.0)
    return clip21_sgd2m_step(state, problem, oracle, eff, pool)


STEP_FUNCS = {
    "clip_sgd": clip_sgd_step,
    "clip21_sgd": clip21_sgd_step,
    "clip21_sgd2m": clip21_sgd2m_step,
    "clip21_ideal": clip21_ideal_step,
    "sgdm": sgdm_step,
}


@dataclass
class RunResult:
    initial: RunRecord
    records: list
    state: OptimizerState
    iterates: list | None = None

    @property
    def final_x(self):
        return self.state.x


def _record(t, state, problem, clip_active, lyapunov_fn, spend_fn, wall_ns):
    gnorm = l2(problem.grad(state.x))
    f_gap = None
    if problem.f_star is not None:
        f_gap = problem.value(state.x) - problem.f_star
    lyap = lyapunov_fn(state) if lyapunov_fn is not None else None
    eps_spent, delta_spent = spend_fn(t) if spend_fn is not None else (0.0, 0.0)
    return RunRecord(
        t=t,
        grad_norm_sq=float(gnorm * gnorm),
        f_gap=f_gap,
        lyapunov=lyap,
        clip_active=clip_active,
        eps_spent=eps_spent,
        delta_spent=delta_spent,
        wall_ns=wall_ns,
    )


def run(
    algorithm,
    problem,
    oracle,
    hp,
    T,
    x0=None,
    threads=1,
    lyapunov_fn=None,
    spend_fn=None,
    record_iterates=False,
):
    """Apply `algorithm` for T steps from the default initialization.

    Emits one record per step (t = 1..T) plus an initial record at t = 0; all
    gradient metrics use exact gradients regardless of the oracle.  Raises
    DivergenceError naming the step if any state vector becomes non-finite.
    """
    if T < 1:
        raise InvalidParameterError(f"T must be >= 1, got {T}")
    hp.validate()
    step = STEP_FUNCS[algorithm]
    # materialise streams up front in worker order: deterministic creation
    for i in range(problem.n_workers):
        oracle.streams.batch(i)
        oracle.streams.dp(i)
    state = init_state(algorithm, problem, oracle, hp, x0)
    initial = _record(0, state, problem, 0, lyapunov_fn, None, 0)
    records = []
    iterates = [state.x.copy()] if record_iterates else None

    pool = ThreadPoolExecutor(max_workers=threads) if threads and threads > 1 else None
    try:
        for k in range(1, T + 1):
            t0 = time.perf_counter_ns()
            state, clip_active = step(state, problem, oracle, hp, pool)
            wall = time.perf_counter_ns() - t0
            if not (np.isfinite(state.x).all() and np.isfinite(state.g).all()):
                raise DivergenceError(k)
            records.append(
                _record(k, state, problem, clip_active, lyapunov_fn, spend_fn, wall)
            )
            if record_iterates:
                iterates.append(state.x.copy())
    finally:
        if pool is not None:
            pool.shutdown()
    return RunResult(initial=initial, records=records, state=state, iterates=iterates)


def run_ideal_quadratic_replicas(L, gamma, tau, sigma, x0, T, seeds, batch_size=1):
    """Vectorised Monte-Carlo replicas of the ideal-shift variant on the
    isotropic quadratic with three-point noise, one replica per seed.

    Performs the same floating-point operations per replica as the generic
    path (single worker, d = 2), so trajectories match it bitwise; exists
    because ten thousand independent replicas are far too slow step by step.
    Returns the (n_seeds, 2) array of final iterates.
    """
    x0 = as_vector(x0, 2)
    atoms = three_point_atoms(sigma)
    seeds = list(seeds)
    S = len(seeds)
    idx = np.empty((S, T + 1, batch_size), dtype=np.int64)
    for s, seed in enumerate(seeds):
        fam = StreamFamily(int(seed))
        idx[s] = fam.batch(0).generator.integers(0, 3, size=(T + 1, batch_size))

    def direction(x, noise2):
        grad = L * x
        draw = grad.copy()
        draw[:, :2] += noise2
        c = clip_rows(draw - grad, tau)
        return grad + c

    x = np.tile(x0, (S, 1))
    g = direction(x, atoms[idx[:, 0]].mean(axis=1))
    for t in range(1, T + 1):
        x = x - gamma * g
        g = direction(x, atoms[idx[:, t]].mean(axis=1))
    return x
