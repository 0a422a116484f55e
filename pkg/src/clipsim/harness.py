"""Experiment orchestration: run configs, grid tuning, sweeps over the
clipping level / noise ratio / worker count, and CSV emission."""

from __future__ import annotations

import itertools
import logging
import os
from dataclasses import dataclass, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import calibration, diagnostics, problems
from .algorithms import ALGORITHMS, HyperParams, run
from .errors import ConfigurationError, DivergenceError
from .oracles import ORACLE_KINDS, GradientOracle

log = logging.getLogger(__name__)

CSV_HEADER = "t,grad_norm_sq,f_gap,lyapunov,clip_active,eps_spent,delta_spent"

TUNING_GAMMAS = tuple(2.0**k for k in range(-5, 6))
TUNING_BETAS = (0.1, 0.5, 0.9)
TUNING_BETA_HATS = (0.01, 0.1, 0.5)
DP_TAU_GRID = (1e-4, 1e-3, 1e-2, 1e-1)
SWEEP_AXES = ("tau", "ratio", "workers")

# delta' per step used to invert the Gaussian mechanism when a run adds
# privacy noise without an explicit (epsilon, delta) target
DEFAULT_DELTA_TILDE = 1e-8


@dataclass
class RunConfig:
    problem_kind: str = "quadratic"      # chen | quadratic | logreg
    dataset: str | None = None
    lam: float = 1e-3
    n_workers: int = 1
    partition_seed: int = 0
    normalize: bool = True
    L: float = 1.0
    d: int = 2
    x0: list | None = None
    oracle_kind: str = "exact"
    sigma: float = 0.0
    batch_fraction: float | None = None
    batch_size: int = 1
    algorithm: str = "clip21_sgd2m"
    auto: bool = False
    gamma: float | None = None
    tau: float | None = None
    beta: float = 1.0
    beta_hat: float = 1.0
    sigma_omega: float = 0.0
    ratio: float | None = None           # sets sigma_omega = ratio * tau
    T: int = 1000
    seed: int = 0
    out: str | None = None
    threads: int = 1
    dp_epsilon: float | None = None
    dp_delta: float | None = None
    dp_auto_sigma: bool = False          # derive sigma_omega from the target
    lyapunov: bool = False
    f_reference: float | None = None

    def validate(self):
        bad = []
        if self.problem_kind not in ("chen", "quadratic", "logreg"):
            bad.append(f"problem.kind={self.problem_kind!r}")
        if self.problem_kind == "logreg":
            if not self.dataset:
                bad.append("problem.dataset missing for logreg")
            elif not os.path.exists(self.dataset):
                bad.append(f"problem.dataset={self.dataset!r} does not exist")
        if self.oracle_kind not in ORACLE_KINDS:
            bad.append(f"oracle.kind={self.oracle_kind!r}")
        if self.algorithm not in ALGORITHMS:
            bad.append(f"algorithm.name={self.algorithm!r}")
        if self.T < 1:
            bad.append(f"run.T={self.T}")
        if not self.auto:
            if self.gamma is None or not self.gamma > 0:
                bad.append(f"params.gamma={self.gamma}")
        if self.tau is None or not self.tau > 0:
            bad.append(f"params.tau={self.tau}")
        if self.ratio is not None and self.ratio < 0:
            bad.append(f"params.ratio={self.ratio}")
        if self.threads < 1:
            bad.append(f"run.workers={self.threads}")
        if (self.dp_epsilon is None) != (self.dp_delta is None):
            bad.append("dp.epsilon and dp.delta must be given together")
        if bad:
            raise ConfigurationError("invalid config fields: " + ", ".join(bad))
        sigma_omega = self.resolved_sigma_omega()
        if sigma_omega > 0 and self.algorithm in ("clip21_sgd", "clip21_ideal", "sgdm"):
            raise ConfigurationError(
                f"{self.algorithm} has no privacy-noise term; use clip21_sgd2m "
                "(native) or clip_sgd (documented extension)"
            )
        if sigma_omega > 0 and self.algorithm == "clip_sgd":
            log.warning(
                "clip_sgd has no privacy-noise line in its base form; "
                "proceeding with noise added to the clipped gradients"
            )
        return self

    def resolved_sigma_omega(self):
        if self.dp_auto_sigma:
            if self.dp_epsilon is None or self.dp_delta is None:
                raise ConfigurationError("dp.auto_sigma needs dp.epsilon and dp.delta")
            return calibration.dp_sigma(self.tau, self.dp_epsilon, self.dp_delta, self.T)
        if self.ratio is not None:
            return self.ratio * self.tau
        return self.sigma_omega


def load_config(path):
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    prob = raw.get("problem", {})
    orac = raw.get("oracle", {})
    alg = raw.get("algorithm", {})
    par = raw.get("params", {})
    runsec = raw.get("run", {})
    dp = raw.get("dp", {})
    diag = raw.get("diagnostics", {})
    cfg = RunConfig(
        problem_kind=prob.get("kind", "quadratic"),
        dataset=prob.get("dataset"),
        lam=prob.get("lambda", 1e-3),
        n_workers=prob.get("n_workers", 1),
        partition_seed=prob.get("partition_seed", 0),
        normalize=prob.get("normalize", True),
        L=prob.get("L", 1.0),
        d=prob.get("d", 2),
        x0=prob.get("x0"),
        oracle_kind=orac.get("kind", "exact"),
        sigma=orac.get("sigma", 0.0),
        batch_fraction=orac.get("batch_fraction"),
        batch_size=orac.get("batch_size", 1),
        algorithm=alg.get("name", "clip21_sgd2m"),
        auto=par.get("auto", False),
        gamma=par.get("gamma"),
        tau=par.get("tau"),
        beta=par.get("beta", 1.0),
        beta_hat=par.get("beta_hat", 1.0),
        sigma_omega=par.get("sigma_omega", 0.0),
        ratio=par.get("ratio"),
        T=runsec.get("T", 1000),
        seed=runsec.get("seed", 0),
        out=runsec.get("out"),
        threads=runsec.get("workers", 1),
        dp_epsilon=dp.get("epsilon"),
        dp_delta=dp.get("delta"),
        dp_auto_sigma=dp.get("auto_sigma", False),
        lyapunov=diag.get("lyapunov", False),
        f_reference=diag.get("f_reference"),
    )
    return cfg.validate()


# problems are immutable once built; sweeps reuse them across grid cells
_problem_cache = {}


def build_problem(cfg):
    key = (
        cfg.problem_kind, cfg.dataset, cfg.lam, cfg.n_workers,
        cfg.partition_seed, cfg.normalize, cfg.L, cfg.d,
    )
    if key in _problem_cache:
        return _problem_cache[key]
    if cfg.problem_kind == "chen":
        prob = problems.chen_example()
    elif cfg.problem_kind == "quadratic":
        prob = problems.scaled_quadratic(cfg.L, d=cfg.d, n_workers=cfg.n_workers)
    else:
        data = problems.load_libsvm(cfg.dataset)
        if data.m == 0:
            raise ConfigurationError(f"dataset {cfg.dataset} has no rows")
        if cfg.normalize:
            data = problems.normalize_rows(data)
        shards = problems.partition(data, cfg.n_workers, cfg.partition_seed)
        prob = problems.nonconvex_logreg(shards, cfg.lam)
    _problem_cache[key] = prob
    return prob


def build_oracle(cfg, seed):
    return GradientOracle(
        cfg.oracle_kind,
        seed,
        sigma=cfg.sigma,
        batch_fraction=cfg.batch_fraction,
        batch_size=cfg.batch_size,
    )


def resolve_params(cfg, problem, x0):
    """Hyperparameters from the config; "auto" derives the stepsize and
    momentum from the theory rules at the configured clipping level."""
    sigma_omega = cfg.resolved_sigma_omega()
    if not cfg.auto:
        return HyperParams(
            gamma=cfg.gamma,
            tau=cfg.tau,
            beta=cfg.beta,
            beta_hat=cfg.beta_hat,
            sigma_omega=sigma_omega,
        ).validate()
    tau = cfg.tau
    if cfg.oracle_kind == "exact":
        B = calibration.gradient_scale_bound(problem, x0)
        out = calibration.deterministic_params(
            problem.L, B, tau, cfg.beta_hat, problem=problem, x0=x0,
            f_reference=cfg.f_reference,
        )
        return HyperParams(
            gamma=out.gamma, tau=tau, beta=out.beta, beta_hat=out.beta_hat,
            sigma_omega=sigma_omega,
        ).validate()
    consts = calibration.theory_constants(
        cfg.sigma, sigma_omega, cfg.T, problem.n_workers, problem.d, alpha=0.1
    )
    B = calibration.gradient_scale_bound(
        problem, x0, stochastic=True, b=consts.b, tau=tau
    )
    eta = tau / B
    # a one-pass upper bound on the initial potential: its gamma-dependent
    # terms are maximal at the stepsize cap
    delta = calibration.initial_potential(
        problem, x0, gamma=1.0 / (12.0 * problem.L), beta=0.5,
        beta_hat=min(cfg.beta_hat, 1.0), eta=eta, f_reference=cfg.f_reference,
    )
    out = calibration.stochastic_params(
        problem.L, delta, B, tau, consts.b, consts.a, problem.n_workers,
        cfg.T, cfg.sigma, beta_hat_request=cfg.beta_hat, alpha=consts.alpha,
        c=consts.c,
    )
    return HyperParams(
        gamma=out.gamma, tau=tau, beta=out.beta, beta_hat=out.beta_hat,
        sigma_omega=sigma_omega,
    ).validate()


def _spend_fn(cfg, hp):
    if hp.sigma_omega <= 0:
        return None
    if cfg.dp_epsilon is not None:
        eps_t, delta_t = calibration.per_step_privacy(
            cfg.dp_epsilon, cfg.dp_delta, cfg.T
        )
        delta_prime = cfg.dp_delta
    else:
        delta_t = DEFAULT_DELTA_TILDE
        eps_t = calibration.gaussian_mechanism_epsilon(hp.sigma_omega, hp.tau, delta_t)
        delta_prime = cfg.T * delta_t

    def spend(t):
        return calibration.advanced_composition(eps_t, delta_t, t, delta_prime)

    return spend


def run_config(cfg, seed=None, threads=None):
    """Execute one configured run; deterministic given (config, seed).

    Returns (result, summary) where summary carries the final averaged
    gradient norm (last-100 convention) and the total privacy spend.
    """
    cfg.validate()
    seed = cfg.seed if seed is None else seed
    threads = cfg.threads if threads is None else threads
    problem = build_problem(cfg)
    x0 = None if cfg.x0 is None else np.asarray(cfg.x0, dtype=np.float64)
    start = np.zeros(problem.d) if x0 is None else x0
    oracle = build_oracle(cfg, seed)
    hp = resolve_params(cfg, problem, start)

    lyap_fn = None
    if cfg.lyapunov:
        B = calibration.gradient_scale_bound(problem, start)
        eta = hp.tau / B if B > hp.tau else 1.0
        f_ref = cfg.f_reference
        if f_ref is None:
            f_ref = problem.f_star if problem.f_star is not None else problem.f_lower_bound
        if f_ref is None:
            raise ConfigurationError(
                "diagnostics.lyapunov needs f_reference for this problem"
            )
        lyap_fn = lambda st: (
            diagnostics.lyapunov(st, problem, hp, eta, f_reference=f_ref)
            if st.v_i is not None
            else None
        )

    result = run(
        cfg.algorithm,
        problem,
        oracle,
        hp,
        cfg.T,
        x0=x0,
        threads=threads,
        lyapunov_fn=lyap_fn,
        spend_fn=_spend_fn(cfg, hp),
    )
    last = result.records[-1]
    summary = {
        "algorithm": cfg.algorithm,
        "T": cfg.T,
        "seed": seed,
        "gamma": hp.gamma,
        "tau": hp.tau,
        "beta": hp.beta,
        "beta_hat": hp.beta_hat,
        "sigma_omega": hp.sigma_omega,
        "final_grad_norm": diagnostics.final_metric(result.records),
        "final_grad_norm_sq": diagnostics.final_metric_sq(result.records),
        "eps_spent": last.eps_spent,
        "delta_spent": last.delta_spent,
    }
    if cfg.out:
        emit_csv([result.initial] + result.records, cfg.out)
    return result, summary


# ---------------------------------------------------------------------------
# sweeps and grid tuning
# ---------------------------------------------------------------------------


@dataclass
class SweepSpec:
    base: RunConfig
    axis: str                       # tau | ratio | workers
    values: list
    algorithms: tuple = ("clip_sgd", "clip21_sgd", "clip21_sgd2m")
    n_seeds: int = 3
    gammas: tuple = TUNING_GAMMAS
    betas: tuple = TUNING_BETAS
    beta_hats: tuple = TUNING_BETA_HATS
    dp_taus: tuple = DP_TAU_GRID

    def validate(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigurationError(f"axis must be one of {SWEEP_AXES}")
        if not self.values:
            raise ConfigurationError("sweep values must be nonempty")
        if not (self.gammas and self.n_seeds >= 1):
            raise ConfigurationError("tuning grid and seed count must be nonempty")
        return self


def _cell_config(base, axis, value, algorithm, gamma, beta, beta_hat, tau=None):
    cfg = replace(
        base, algorithm=algorithm, auto=False, gamma=gamma, beta=beta,
        beta_hat=beta_hat, out=None,
    )
    if axis == "tau":
        cfg = replace(cfg, tau=value, ratio=None, sigma_omega=0.0)
    elif axis == "ratio":
        cfg = replace(cfg, tau=tau, ratio=value)
    else:  # workers
        cfg = replace(cfg, n_workers=int(value), ratio=None, sigma_omega=0.0)
    return cfg


def _grid(spec, algorithm):
    has_momentum = algorithm == "clip21_sgd2m"
    betas = spec.betas if has_momentum else (1.0,)
    if spec.axis == "ratio" and has_momentum:
        beta_hats = spec.beta_hats
    else:
        beta_hats = (1.0,)
    taus = spec.dp_taus if spec.axis == "ratio" else (None,)
    return itertools.product(spec.gammas, betas, beta_hats, taus)


def sweep(spec):
    """Grid-tune each algorithm at each axis value and report the best cell.

    Selection is the pure argmin of the seed-averaged final gradient norm,
    ties broken toward smaller gamma, then beta, then beta_hat (then tau in
    ratio sweeps).  Rows come out in deterministic (value, algorithm) order.
    """
    spec.validate()
    seeds = [spec.base.seed + k for k in range(spec.n_seeds)]
    rows = []
    for value in spec.values:
        for algorithm in spec.algorithms:
            best = None
            for gamma, beta, beta_hat, tau in _grid(spec, algorithm):
                cfg = _cell_config(
                    spec.base, spec.axis, value, algorithm, gamma, beta, beta_hat, tau
                )
                metrics = []
                try:
                    for s in seeds:
                        _, summary = run_config(cfg, seed=s)
                        metrics.append(summary["final_grad_norm"])
                except DivergenceError:
                    # an over-aggressive grid cell blowing up just loses the
                    # argmin; structural errors still propagate
                    continue
                mean = float(np.mean(metrics))
                spread = float(np.max(metrics) - np.min(metrics))
                key = (mean, gamma, beta, beta_hat, tau if tau is not None else 0.0)
                if best is None or key < best[0]:
                    best = (key, gamma, beta, beta_hat, tau, mean, spread)
            if best is None:
                raise ConfigurationError(
                    f"no grid cell finished for {algorithm} at {spec.axis}={value}"
                )
            _, gamma, beta, beta_hat, tau, mean, spread = best
            rows.append(
                {
                    "axis": spec.axis,
                    "value": value,
                    "algorithm": algorithm,
                    "gamma": gamma,
                    "beta": beta,
                    "beta_hat": beta_hat,
                    "tau": tau if tau is not None else value,
                    "final_metric": mean,
                    "seed_spread": spread,
                }
            )
    return rows


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def emit_csv(records, path):
    """Write metric rows as delimited text with 17 significant digits so a
    round-trip parse recovers every float bitwise."""
    lines = [CSV_HEADER]
    for r in records:
        lines.append(
            ",".join(
                [
                    str(r.t),
                    _fmt(r.grad_norm_sq),
                    _fmt(r.f_gap),
                    _fmt(r.lyapunov),
                    str(r.clip_active),
                    _fmt(r.eps_spent),
                    _fmt(r.delta_spent),
                ]
            )
        )
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def emit_table_csv(rows, path):
    header = "axis,value,algorithm,gamma,beta,beta_hat,tau,final_metric,seed_spread"
    lines = [header]
    for r in rows:
        lines.append(
            ",".join(
                [
                    r["axis"],
                    _fmt(r["value"]),
                    r["algorithm"],
                    _fmt(r["gamma"]),
                    _fmt(r["beta"]),
                    _fmt(r["beta_hat"]),
                    _fmt(r["tau"]),
                    _fmt(r["final_metric"]),
                    _fmt(r["seed_spread"]),
                ]
            )
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_csv(path):
    """Round-trip reader for emitted metric CSVs (used by tests and plots)."""
    from .diagnostics import RunRecord

    records = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ConfigurationError(f"unexpected CSV header in {path}")
        for line in fh:
            parts = line.rstrip("\n").split(",")
            records.append(
                RunRecord(
                    t=int(parts[0]),
                    grad_norm_sq=float(parts[1]),
                    f_gap=float(parts[2]) if parts[2] else None,
                    lyapunov=float(parts[3]) if parts[3] else None,
                    clip_active=int(parts[4]),
                    eps_spent=float(parts[5]) if parts[5] else 0.0,
                    delta_spent=float(parts[6]) if parts[6] else 0.0,
                )
            )
    return records
