"""Dense vector arithmetic, seeded random substreams, and the clipping operator.

Vectors are plain 1-D float64 numpy arrays; per-worker collections are 2-D
arrays with one row per worker.  All norms are Euclidean.  The row-wise helpers
are bitwise-consistent with their 1-D counterparts so that vectorised code
paths reproduce scalar ones exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError

# Purpose tags for per-worker random substreams.
PURPOSE_BATCH = 0  # stochastic-gradient noise / minibatch sampling
PURPOSE_DP = 1     # additive privacy noise

# Finite stand-in for "no clipping": no vector produced by a sane run gets
# anywhere near this norm, so the identity branch is always taken.
TAU_UNBOUNDED = 1e18


def as_vector(x, d=None):
    """Coerce to a float64 1-D array, optionally checking its length."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise InvalidParameterError(f"expected a 1-D vector, got shape {v.shape}")
    if d is not None and v.shape[0] != d:
        raise InvalidParameterError(f"expected length {d}, got {v.shape[0]}")
    return v


def l2(x):
    """Euclidean norm over the last axis.

    Uses the same reduction for 1-D and row-wise input so both produce
    bit-identical values on identical rows.
    """
    x = np.asarray(x, dtype=np.float64)
    return np.sqrt((x * x).sum(axis=-1))


def _shrink_onto_ball(y, tau):
    """Post-correct rounding so the scaled vector's norm never exceeds tau.

    Rescaling can reach a rounding fixed point an ulp above tau, so shave an
    ulp off every coordinate until the norm is inside the ball (at most a few
    iterations; strictly decreasing, hence guaranteed to terminate).
    """
    while l2(y) > tau:
        y = np.nextafter(y, 0.0)
    return y


def clip(x, tau):
    """Project x onto the Euclidean ball of radius tau.

    Returns x itself (bitwise) when ||x|| <= tau, else (tau/||x||) x.  The
    scaled branch is corrected by at most a few ulps so the result's norm is
    <= tau exactly, which makes the operator bitwise idempotent.
    """
    if not tau > 0:
        raise InvalidParameterError(f"clipping level must be positive, got {tau}")
    x = np.asarray(x, dtype=np.float64)
    nrm = l2(x)
    if nrm <= tau:
        return x
    return _shrink_onto_ball((tau * x) / nrm, tau)


def clip_rows(X, tau):
    """Row-wise clip of a (n, d) array; bitwise-equal to clip() per row."""
    if not tau > 0:
        raise InvalidParameterError(f"clipping level must be positive, got {tau}")
    X = np.asarray(X, dtype=np.float64)
    norms = l2(X)
    over = norms > tau
    if not over.any():
        return X
    out = X.copy()
    scaled = (tau * X[over]) / norms[over, None]
    # same ulp correction as the 1-D operator, applied only to offending rows
    while True:
        bad = l2(scaled) > tau
        if not bad.any():
            break
        scaled[bad] = np.nextafter(scaled[bad], 0.0)
    out[over] = scaled
    return out


def clip_residual_norm(x, tau):
    """||clip(x, tau) - x||; equals max(||x|| - tau, 0) up to a few ulps."""
    return float(l2(clip(x, tau) - np.asarray(x, dtype=np.float64)))


@dataclass
class RngStream:
    """A single-owner random substream keyed by (seed, worker, purpose).

    Identical keys reproduce identical draw sequences regardless of what other
    streams did, so per-worker computations can be scheduled in any order.
    """

    seed: int
    worker: int
    purpose: int = PURPOSE_BATCH
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.worker, self.purpose))
        self.generator = np.random.default_rng(ss)


class StreamFamily:
    """Lazily materialised per-(worker, purpose) substreams under one seed."""

    def __init__(self, seed):
        self.seed = int(seed)
        self._streams = {}

    def stream(self, worker, purpose):
        key = (int(worker), int(purpose))
        if key not in self._streams:
            self._streams[key] = RngStream(self.seed, key[0], key[1])
        return self._streams[key]

    def batch(self, worker):
        return self.stream(worker, PURPOSE_BATCH)

    def dp(self, worker):
        return self.stream(worker, PURPOSE_DP)


def gaussian_vector(rng, d, sigma):
    """Draw d iid N(0, sigma^2) samples; sigma == 0 yields zeros without
    consuming any randomness (keeps sibling streams unaffected)."""
    if sigma < 0:
        raise InvalidParameterError(f"sigma must be nonnegative, got {sigma}")
    if sigma == 0.0:
        return np.zeros(d)
    return sigma * rng.generator.standard_normal(d)
