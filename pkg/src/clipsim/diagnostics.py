"""Runtime instrumentation: per-iteration metrics, the composite potential
driving the descent analysis, smoothness sanity checks, and the
non-convergence floor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import l2
from .errors import DiagnosticUnavailableError, InvalidParameterError


@dataclass
class RunRecord:
    """One iteration's metrics row.

    grad_norm_sq always comes from exact gradients, never oracle draws;
    f_gap and lyapunov are None when the optimal value is unknown.
    """

    t: int
    grad_norm_sq: float
    f_gap: float | None
    lyapunov: float | None
    clip_active: int
    eps_spent: float
    delta_spent: float
    wall_ns: int = 0


def lyapunov(state, problem, hp, eta, f_reference=None):
    """Composite potential

        f(x) - f*  +  (2 gamma / (beta_hat eta)) mean_i ||g_i - v_i||^2
                   +  (8 gamma beta / (beta_hat^2 eta^2)) mean_i ||v_i - grad_i||^2
                   +  (2 gamma / beta) ||mean_i v_i - grad f||^2

    with eta = tau / B.  f_reference overrides problem.f_star; any valid lower
    bound works for descent checks since the potential only shifts by a
    constant.
    """
    if not 0 < eta:
        raise InvalidParameterError(f"eta must be positive, got {eta}")
    f_ref = f_reference if f_reference is not None else problem.f_star
    if f_ref is None:
        raise DiagnosticUnavailableError(
            "lyapunov needs the optimal value (or a lower bound) as reference"
        )
    if state.v_i is None:
        raise DiagnosticUnavailableError("lyapunov needs momentum buffers in state")
    x = state.x
    grads = problem.worker_grads(x)
    gap = problem.value(x) - f_ref
    gv = float(np.mean(l2(state.g_i - state.v_i) ** 2))
    vg = float(np.mean(l2(state.v_i - grads) ** 2))
    v_bar = state.v_i.mean(axis=0)
    pm = float(l2(v_bar - grads.mean(axis=0)) ** 2)
    bh = hp.beta_hat
    return float(
        gap
        + (2.0 * hp.gamma / (bh * eta)) * gv
        + (8.0 * hp.gamma * hp.beta / (bh * bh * eta * eta)) * vg
        + (2.0 * hp.gamma / hp.beta) * pm
    )


def smoothness_gradient_bound_check(problem, x, f_reference=None):
    """True iff ||grad f(x)||^2 <= 2 L (f(x) - f*) at x, using the problem's
    recorded smoothness constant; a sanity test of that constant."""
    f_ref = f_reference if f_reference is not None else problem.f_star
    if f_ref is None:
        raise DiagnosticUnavailableError(
            "smoothness check needs the optimal value as reference"
        )
    g = problem.grad(x)
    lhs = float(l2(g) ** 2)
    rhs = 2.0 * problem.L * (problem.value(x) - f_ref)
    return lhs <= rhs * (1.0 + 1e-12) + 1e-15


def nonconvergence_floor(grad_norm_sq_x0, tau):
    """Lower bound (1/2) min(||grad f(x0)||^2, tau^2 / 45) that the mean
    squared gradient norm of the ideal-shift variant cannot beat under the
    three-point noise."""
    if grad_norm_sq_x0 < 0 or tau < 0:
        raise InvalidParameterError("inputs must be nonnegative")
    return 0.5 * min(grad_norm_sq_x0, tau * tau / 45.0)


def central_difference_gradient(f, x, h=1e-6):
    """Central finite-difference gradient of a scalar function; the
    independent oracle for gradient-correctness checks."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for j in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        g[j] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def final_metric(records, window=100):
    """Final gradient norm: mean of ||grad f(x^t)|| over the last `window`
    recorded iterations."""
    tail = records[-window:] if window else records
    return float(np.mean([np.sqrt(r.grad_norm_sq) for r in tail]))


def final_metric_sq(records, window=100):
    """Mean of ||grad f(x^t)||^2 over the last `window` recorded iterations."""
    tail = records[-window:] if window else records
    return float(np.mean([r.grad_norm_sq for r in tail]))
