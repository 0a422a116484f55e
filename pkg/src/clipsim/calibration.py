"""Theory-driven parameter computation: stepsize/momentum rules for the
deterministic and stochastic regimes, the analysis constants, privacy-noise
calibration, and the (epsilon, delta) accountant built on advanced
composition."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import l2
from .errors import DiagnosticUnavailableError, InvalidParameterError


@dataclass
class TheoryConstants:
    """Concentration radii and scale bounds used by the stochastic analysis.

    a bounds the running privacy-noise average, b a single worker's gradient
    noise, c the worker-averaged noise; B is the gradient-scale bound and
    eta = tau / B.
    """

    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    B: float | None = None
    eta: float | None = None
    Delta: float | None = None
    alpha: float = 0.1


def theory_constants(sigma, sigma_omega, T, n, d, alpha):
    """Closed forms:

        a   = (sqrt(2) + 2 sqrt(3 log(6(T+1)/alpha))) sqrt(d) sigma_omega sqrt(T/n)
        b^2 = 2 sigma^2 log(12 (T+1) n / alpha)
        c^2 = (sqrt(2) + 2 sqrt(3 log(6(T+1)/alpha)))^2 sigma^2
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha}")
    if T < 1 or n < 1:
        raise InvalidParameterError("T and n must be >= 1")
    if sigma < 0 or sigma_omega < 0:
        raise InvalidParameterError("noise scales must be nonnegative")
    spread = math.sqrt(2.0) + 2.0 * math.sqrt(3.0 * math.log(6.0 * (T + 1) / alpha))
    a = spread * math.sqrt(d) * sigma_omega * math.sqrt(T / n)
    b = sigma * math.sqrt(2.0 * math.log(12.0 * (T + 1) * n / alpha))
    c = spread * sigma
    return TheoryConstants(a=a, b=b, c=c, alpha=alpha)


def gradient_scale_bound(problem, x0, stochastic=False, b=0.0, tau=None):
    """Gradient-scale bound B at the start point.

    Deterministic convention: max_i ||grad f_i(x0)||.  Stochastic convention
    (proof-level): max(3 tau, max_i ||grad f_i(x0)|| + b).
    """
    gmax = float(l2(problem.worker_grads(x0)).max())
    if not stochastic:
        return gmax
    if tau is None:
        raise InvalidParameterError("stochastic scale bound needs tau")
    return max(3.0 * tau, gmax + b)


def initial_potential(problem, x0, gamma, beta, beta_hat, eta, f_reference=None):
    """The potential at the default initialization (shifts and momentum zero):

        f(x0) - f* + (8 gamma beta / (beta_hat^2 eta^2)) mean_i ||grad f_i(x0)||^2
                   + (2 gamma / beta) ||grad f(x0)||^2
    """
    f_ref = f_reference if f_reference is not None else problem.f_star
    if f_ref is None:
        f_ref = problem.f_lower_bound
    if f_ref is None:
        raise DiagnosticUnavailableError(
            "initial potential needs the optimal value or a lower bound"
        )
    grads = problem.worker_grads(x0)
    mean_sq = float(np.mean(l2(grads) ** 2))
    full_sq = float(l2(grads.mean(axis=0)) ** 2)
    gap = problem.value(x0) - f_ref
    return (
        gap
        + (8.0 * gamma * beta / (beta_hat**2 * eta**2)) * mean_sq
        + (2.0 * gamma / beta) * full_sq
    )


@dataclass
class CalibrationResult:
    gamma: float
    beta: float
    beta_hat: float
    eta: float
    B: float
    Delta: float | None = None
    vacuous: bool = False         # set when B <= tau (clipping regime vacuous)
    regime: str = "deterministic"
    binding: dict = field(default_factory=dict)


def deterministic_params(
    L,
    B,
    tau,
    beta_hat,
    delta=None,
    problem=None,
    x0=None,
    f_reference=None,
    rel_tol=1e-12,
):
    """Largest stepsize satisfying the full-batch restrictions, with
    beta = 4 L gamma:

      gamma <= min(1/(12 L), tau/(12 B L)),
      5/8 - (32 beta^2 + 96) L^2 gamma^2 / (beta_hat^2 eta^2) >= 0,
      (8/3) beta sqrt(L Delta) <= beta_hat tau / 4,
      (7/4) beta (B - tau)     <= beta_hat tau / 4,

    where eta = tau / B and Delta >= the initial potential.  Delta may be
    supplied, or computed from (problem, x0) at each candidate stepsize.
    The feasible set is an interval, so the maximum is found by bisection.
    """
    if not (L > 0 and tau > 0):
        raise InvalidParameterError("L and tau must be positive")
    if not 0.0 < beta_hat <= 1.0:
        raise InvalidParameterError(f"beta_hat must lie in (0, 1], got {beta_hat}")
    if B <= tau:
        gamma = 1.0 / (12.0 * L)
        return CalibrationResult(
            gamma=gamma, beta=4.0 * L * gamma, beta_hat=beta_hat,
            eta=1.0, B=B, Delta=delta, vacuous=True,
        )
    eta = tau / B
    if beta_hat > 1.0 / (2.0 * eta):
        raise InvalidParameterError(
            f"beta_hat = {beta_hat} violates beta_hat <= 1/(2 eta) = {1/(2*eta):.6g}"
        )
    if delta is None and (problem is None or x0 is None):
        raise InvalidParameterError("supply Delta or (problem, x0) to derive it")

    def resolve_delta(gamma, beta):
        if delta is not None:
            return delta
        return initial_potential(problem, x0, gamma, beta, beta_hat, eta, f_reference)

    def feasible(gamma):
        beta = 4.0 * L * gamma
        if beta > 1.0:
            return False
        D = resolve_delta(gamma, beta)
        quad = 5.0 / 8.0 - (32.0 * beta**2 + 96.0) * (L * gamma) ** 2 / (
            beta_hat**2 * eta**2
        )
        if quad < 0:
            return False
        if (8.0 / 3.0) * beta * math.sqrt(L * D) > beta_hat * tau / 4.0:
            return False
        if (7.0 / 4.0) * beta * (B - tau) > beta_hat * tau / 4.0:
            return False
        return True

    hi = min(1.0 / (12.0 * L), tau / (12.0 * B * L))
    if feasible(hi):
        gamma = hi
    else:
        lo = 0.0
        g = hi
        while g - lo > rel_tol * hi:
            mid = 0.5 * (lo + g)
            if feasible(mid):
                lo = mid
            else:
                g = mid
        gamma = lo
    beta = 4.0 * L * gamma
    D = resolve_delta(gamma, beta)
    return CalibrationResult(
        gamma=gamma, beta=beta, beta_hat=beta_hat, eta=eta, B=B, Delta=D,
        regime="deterministic",
    )


def _stochastic_beta_bounds(L, Delta, B, tau, b, c, n, T, sigma, beta_hat, eta, alpha):
    """The eight concentration-driven upper bounds on the momentum parameter.

    b1^2 = 3 log(14 (T+1) / alpha).  Bounds that lose their driver (e.g.
    sigma = 0) evaluate to +inf.
    """
    inf = math.inf
    b1 = math.sqrt(3.0 * math.log(14.0 * (T + 1) / alpha))
    sqLD = math.sqrt(L * Delta)
    root_n = math.sqrt(n)
    root_T = math.sqrt(T)
    k = 16.0 * math.sqrt(2.0) * (1.0 + b1) * sigma * root_T
    bounds = {}
    if b > 0:
        bounds["b_cubed"] = (L * Delta * beta_hat * eta / (8.0 * T * b * b)) ** (1 / 3)
        bounds["b_quartic"] = (
            L * Delta * beta_hat**2 * eta**2 / (32.0 * T * b * b)
        ) ** 0.25
    else:
        bounds["b_cubed"] = bounds["b_quartic"] = inf
    bounds["c_sq"] = (
        math.sqrt(L * Delta * n / (8.0 * T * c * c)) if c > 0 else inf
    )
    if sigma > 0:
        gain3 = math.sqrt(9.0 * L * Delta) + 1.5 * (B - tau) + 1.5 * b
        gain5 = 3.0 * sqLD + 1.5 * (B - tau) + 1.5 * b
        gain47 = 11.0 * sqLD + 3.0 * (B - tau + b)
        bounds["shift_noise"] = math.sqrt(
            3.0 * L * Delta * root_n * beta_hat * eta / (k * B)
        )
        bounds["buffer_noise"] = (
            3.0 * L * Delta * beta_hat * eta * root_n / (k * gain3)
        ) ** (1 / 3)
        bounds["drift_noise"] = (
            9.0 * L * Delta * beta_hat * eta * root_n / (0.5 * k * gain47)
        ) ** 0.25
        bounds["buffer_noise_sq"] = (
            3.0 * L * Delta * beta_hat**2 * eta**2 * root_n / (4.0 * k * gain5)
        ) ** (1 / 3)
        bounds["mean_buffer_noise"] = 3.0 * L * Delta * root_n / (k * gain5)
        bounds["drift_noise_sq"] = (
            9.0 * L * Delta * beta_hat**2 * eta**2 * root_n / (2.0 * k * gain47)
        ) ** 0.25
        bounds["mean_drift_noise"] = math.sqrt(
            9.0 * L * Delta * root_n * 16.0 / (k * gain47)
        )
    else:
        for name in (
            "shift_noise",
            "buffer_noise",
            "drift_noise",
            "buffer_noise_sq",
            "mean_buffer_noise",
            "drift_noise_sq",
            "mean_drift_noise",
        ):
            bounds[name] = inf
    return bounds


def stochastic_params(
    L,
    Delta,
    B,
    tau,
    b,
    a,
    n,
    T,
    sigma,
    beta_hat_request=1.0,
    alpha=0.1,
    c=None,
):
    """Parameters for the noisy regime: beta_hat is capped by sqrt(L Delta)/a
    when privacy noise is present, beta is the largest value under all
    concentration bounds plus

        beta <= 3 beta_hat tau / (64 sqrt(L Delta)),
        beta <= beta_hat tau / (14 (B - tau)),
        beta <= beta_hat tau / (22 b),

    gamma = beta / (6 L), and the quadratic restriction
    1/3 >= (32 beta^2 + 96) L^2 gamma^2 / (beta_hat^2 eta^2) shrinks gamma
    (and beta with it) if violated.
    """
    if sigma == 0.0 and b == 0.0:
        # no stochastic noise at all: the full-batch rule applies
        bh = min(beta_hat_request, 1.0)
        out = deterministic_params(L, B, tau, bh, delta=Delta)
        out.regime = "deterministic-fallback"
        return out
    if not (L > 0 and tau > 0 and Delta > 0):
        raise InvalidParameterError("L, tau, Delta must be positive")
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha}")
    if c is None:
        spread = math.sqrt(2.0) + 2.0 * math.sqrt(
            3.0 * math.log(6.0 * (T + 1) / alpha)
        )
        c = spread * sigma
    if B <= tau:
        raise InvalidParameterError(
            "stochastic calibration needs B > tau; use the stochastic scale "
            "bound max(3 tau, max_i||grad f_i(x0)|| + b)"
        )
    eta = tau / B
    sqLD = math.sqrt(L * Delta)
    beta_hat = min(beta_hat_request, 1.0)
    if a > 0:
        beta_hat = min(beta_hat, sqLD / a)

    bounds = _stochastic_beta_bounds(
        L, Delta, B, tau, b, c, n, T, sigma, beta_hat, eta, alpha
    )
    bounds["momentum_potential"] = 3.0 * beta_hat * tau / (64.0 * sqLD)
    bounds["momentum_scale"] = beta_hat * tau / (14.0 * (B - tau))
    bounds["momentum_noise"] = beta_hat * tau / (22.0 * b) if b > 0 else math.inf
    bounds["stepsize_cap"] = 0.5  # beta = 6 L gamma with 12 L gamma <= 1
    bounds["unit"] = 1.0
    beta = min(bounds.values())
    binding = min(bounds, key=bounds.get)

    # quadratic restriction with gamma = beta/(6L):
    # 8 beta^4 + 24 beta^2 <= 3 beta_hat^2 eta^2
    limit = 3.0 * beta_hat**2 * eta**2
    if 8.0 * beta**4 + 24.0 * beta**2 > limit:
        u = (-24.0 + math.sqrt(576.0 + 32.0 * limit)) / 16.0
        beta = math.sqrt(u)
        binding = "quadratic"
    gamma = beta / (6.0 * L)
    return CalibrationResult(
        gamma=gamma,
        beta=beta,
        beta_hat=beta_hat,
        eta=eta,
        B=B,
        Delta=Delta,
        regime="stochastic",
        binding={"beta": binding, "bounds": bounds},
    )


# ---------------------------------------------------------------------------
# privacy accounting
# ---------------------------------------------------------------------------


@dataclass
class PrivacySpend:
    epsilon: float = 0.0
    delta: float = 0.0
    steps_accounted: int = 0


def dp_sigma(tau, epsilon, delta, T):
    """Privacy-noise scale (8 tau / epsilon) sqrt(T log(5T/(4 delta)) log(1/delta))
    making T steps (epsilon, delta)-differentially private under advanced
    composition; requires epsilon, delta in (0, 1)."""
    if not 0.0 < epsilon < 1.0 or not 0.0 < delta < 1.0:
        raise InvalidParameterError("epsilon and delta must lie in (0, 1)")
    if not tau > 0:
        raise InvalidParameterError(f"tau must be positive, got {tau}")
    if T < 1:
        raise InvalidParameterError(f"T must be >= 1, got {T}")
    return (8.0 * tau / epsilon) * math.sqrt(
        T * math.log(5.0 * T / (4.0 * delta)) * math.log(1.0 / delta)
    )


def per_step_privacy(epsilon, delta, T):
    """Per-step budget whose T-fold advanced composition stays within
    (epsilon, 2 delta): eps_tilde = epsilon / (2 sqrt(2 T log(1/delta))),
    delta_tilde = delta / T.

    Composition itself is valid for any positive epsilon, so the domain is
    wider than dp_sigma's (whose noise formula needs epsilon < 1).
    """
    if epsilon <= 0 or not 0.0 < delta < 1.0:
        raise InvalidParameterError("epsilon must be positive and delta in (0, 1)")
    eps_tilde = epsilon / (2.0 * math.sqrt(2.0 * T * math.log(1.0 / delta)))
    return eps_tilde, delta / T


def advanced_composition(eps_tilde, delta_tilde, k, delta_prime):
    """Total budget of k adaptive (eps_tilde, delta_tilde) mechanisms:

        eps   = sqrt(2 k log(1/delta')) eps_tilde + k eps_tilde (e^eps_tilde - 1)
        delta = k delta_tilde + delta'
    """
    if k == 0:
        return 0.0, 0.0
    eps = math.sqrt(2.0 * k * math.log(1.0 / delta_prime)) * eps_tilde + k * eps_tilde * (
        math.exp(eps_tilde) - 1.0
    )
    return eps, k * delta_tilde + delta_prime


def account(spend, per_step, T, delta_prime=None):
    """Extend a running ledger by T steps at the given per-step budget.

    delta' defaults to T * delta_tilde, which recovers the target delta when
    per_step came from per_step_privacy (so the total is <= (epsilon, 2 delta)).
    """
    eps_tilde, delta_tilde = per_step
    if eps_tilde <= 0 or delta_tilde <= 0:
        raise InvalidParameterError("per-step parameters must be positive")
    steps = spend.steps_accounted + T
    dp = delta_prime if delta_prime is not None else steps * delta_tilde
    eps, delta = advanced_composition(eps_tilde, delta_tilde, steps, dp)
    return PrivacySpend(epsilon=eps, delta=delta, steps_accounted=steps)


def gaussian_mechanism_epsilon(sigma_omega, tau, delta_tilde):
    """Per-step epsilon of the Gaussian mechanism at noise scale sigma_omega
    for a message of sensitivity 2 tau (one sample changes a clipped update by
    at most the ball diameter)."""
    if sigma_omega <= 0:
        raise InvalidParameterError("sigma_omega must be positive")
    if not 0.0 < delta_tilde < 1.0:
        raise InvalidParameterError("delta_tilde must lie in (0, 1)")
    return 2.0 * tau * math.sqrt(2.0 * math.log(1.25 / delta_tilde)) / sigma_omega
