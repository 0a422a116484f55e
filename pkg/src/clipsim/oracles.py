"""Stochastic gradient sources per worker: exact, additive-Gaussian, minibatch,
and the adversarial three-point noise used by the non-convergence construction."""

from __future__ import annotations

import math

import numpy as np

from .core import StreamFamily, as_vector, clip
from .errors import ConfigurationError, InvalidParameterError

ORACLE_KINDS = ("exact", "gaussian", "minibatch", "three_point")


def three_point_atoms(sigma):
    """The three noise atoms (3,0), (0,4), (-3,-4) scaled by sqrt(3 sigma^2/100).

    They sum to zero, so a uniform draw is unbiased; their norms are
    {3, 4, 5} * sigma*sqrt(3)/10.
    """
    s = math.sqrt(3.0 * sigma * sigma / 100.0)
    return np.array([[3.0, 0.0], [0.0, 4.0], [-3.0, -4.0]]) * s


def three_point_clipped_mean(sigma, tau):
    """Closed-form mean of clip_tau over the three-point distribution,
    (2 tau/15, tau/15), valid while clipping is active on every atom
    (tau < 3 sigma sqrt(3)/10)."""
    if not tau > 0:
        raise InvalidParameterError(f"tau must be positive, got {tau}")
    threshold = 3.0 * sigma * math.sqrt(3.0) / 10.0
    if not tau < threshold:
        raise InvalidParameterError(
            f"closed form needs tau < {threshold:.6g} (smallest atom norm), got {tau}"
        )
    return np.array([2.0 * tau / 15.0, tau / 15.0])


class GradientOracle:
    """Seeded, replayable per-worker stochastic gradient source.

    One instance serves all workers of a problem; each worker draws from its
    own substream, so draws for different workers commute with scheduling.

    kinds:
      exact        -- returns the true local gradient
      gaussian     -- true gradient plus N(0, sigma^2 I) noise, fresh per
                      (worker, step)
      minibatch    -- mean gradient over ceil(batch_fraction * m_i) rows
                      sampled uniformly without replacement each step
      three_point  -- true gradient plus the mean of batch_size uniform draws
                      from the three scaled atoms, embedded in the first two
                      coordinates
    """

    def __init__(self, kind, seed, sigma=0.0, batch_fraction=None, batch_size=1):
        if kind not in ORACLE_KINDS:
            raise InvalidParameterError(f"unknown oracle kind {kind!r}")
        if kind == "minibatch":
            if batch_fraction is None or not 0.0 < batch_fraction <= 1.0:
                raise InvalidParameterError(
                    f"batch_fraction must lie in (0, 1], got {batch_fraction}"
                )
        if kind in ("gaussian", "three_point") and sigma < 0:
            raise InvalidParameterError(f"sigma must be nonnegative, got {sigma}")
        if kind == "three_point" and batch_size < 1:
            raise InvalidParameterError(f"batch_size must be >= 1, got {batch_size}")
        self.kind = kind
        self.seed = int(seed)
        self.sigma = float(sigma)
        self.batch_fraction = batch_fraction
        self.batch_size = int(batch_size)
        self.streams = StreamFamily(self.seed)
        self._atoms = three_point_atoms(self.sigma) if kind == "three_point" else None

    def fresh(self, seed=None):
        """A new oracle with untouched streams (same parameters)."""
        return GradientOracle(
            self.kind,
            self.seed if seed is None else seed,
            sigma=self.sigma,
            batch_fraction=self.batch_fraction,
            batch_size=self.batch_size,
        )

    def draw(self, problem, worker, x, t):
        """One stochastic gradient for `worker` at iterate x, step t."""
        if not 0 <= worker < problem.n_workers:
            raise InvalidParameterError(f"worker {worker} out of range")
        if t < 0:
            raise InvalidParameterError(f"step index must be >= 0, got {t}")
        x = as_vector(x, problem.d)
        if self.kind == "exact":
            return problem.worker_grad(worker, x)
        gen = self.streams.batch(worker).generator
        if self.kind == "gaussian":
            noise = self.sigma * gen.standard_normal(problem.d)
            return problem.worker_grad(worker, x) + noise
        if self.kind == "minibatch":
            m = problem.worker_row_count(worker)
            k = math.ceil(self.batch_fraction * m)
            if k >= m:
                # full batch: identical code path as the exact gradient
                return problem.worker_grad(worker, x)
            rows = np.sort(gen.choice(m, size=k, replace=False))
            return problem.worker_grad(worker, x, rows=rows)
        # three_point
        if problem.d < 2:
            raise ConfigurationError("three-point noise needs dimension >= 2")
        idx = gen.integers(0, 3, size=self.batch_size)
        noise2 = self._atoms[idx].mean(axis=0)
        g = problem.worker_grad(worker, x).copy()
        g[:2] += noise2
        return g

    def noise_indices(self, worker, count):
        """Pre-draw `count` three-point atom indices from the worker's stream.

        The sequence is bitwise identical to `count` successive draw() calls
        with batch_size 1 (numpy generates bounded integers one at a time in
        both cases).  Used by vectorised Monte-Carlo replicas.
        """
        if self.kind != "three_point":
            raise ConfigurationError("noise_indices is only for three_point oracles")
        gen = self.streams.batch(worker).generator
        return gen.integers(0, 3, size=(count, self.batch_size))


def clipped_three_point_mc_mean(sigma, tau, n_samples, seed):
    """Monte-Carlo mean of clip_tau over the three-point distribution.

    Draws atom indices from a batch substream and gathers the exactly-clipped
    atoms, so the estimate exercises the real clipping operator.
    """
    atoms = three_point_atoms(sigma)
    clipped = np.stack([clip(a, tau) for a in atoms])
    gen = StreamFamily(seed).batch(0).generator
    idx = gen.integers(0, 3, size=int(n_samples))
    return clipped[idx].mean(axis=0)
