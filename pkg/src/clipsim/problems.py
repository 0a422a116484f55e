"""Objective instances: analytic counterexample problems and sparse logistic
regression with a non-convex regularizer, plus LibSVM ingestion and worker
partitioning."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import as_vector, l2
from .errors import (
    ConfigurationError,
    DatasetParseError,
    InvalidParameterError,
    UnsupportedDatasetError,
)


class Problem:
    """A finite-sum objective f(x) = (1/n) sum_i f_i(x) split across workers.

    Subclasses provide per-worker values and gradients; the mean value and
    gradient are always reduced in fixed worker order so results do not depend
    on evaluation scheduling.
    """

    d: int
    n_workers: int
    L: float
    f_star: float | None = None
    # A certified lower bound on f, usable in place of f_star for diagnostics
    # that are invariant to constant shifts (the descent check is).
    f_lower_bound: float | None = None

    def worker_value(self, i, x):
        raise NotImplementedError

    def worker_grad(self, i, x):
        raise NotImplementedError

    def value(self, x):
        vals = [self.worker_value(i, x) for i in range(self.n_workers)]
        return float(np.mean(vals))

    def grad(self, x):
        g = np.stack([self.worker_grad(i, x) for i in range(self.n_workers)])
        return g.mean(axis=0)

    def worker_grads(self, x):
        return np.stack([self.worker_grad(i, x) for i in range(self.n_workers)])

    def worker_row_count(self, i):
        raise ConfigurationError(
            f"{type(self).__name__} is not dataset-backed; minibatch oracles need rows"
        )


class ShiftedQuadratics(Problem):
    """Worker i holds f_i(x) = 1/2 ||x - c_i||^2 for fixed centers c_i."""

    def __init__(self, centers):
        centers = np.asarray(centers, dtype=np.float64)
        if centers.ndim == 1:
            centers = centers[:, None]
        self.centers = centers
        self.n_workers, self.d = centers.shape
        self.L = 1.0
        mean_c = centers.mean(axis=0)
        # f(x) = 1/2||x - mean_c||^2 + const; minimum at mean_c
        self.x_star = mean_c
        self.f_star = float(
            0.5 * np.mean([l2(c - mean_c) ** 2 for c in centers])
        )
        self.f_lower_bound = self.f_star

    def worker_value(self, i, x):
        diff = as_vector(x, self.d) - self.centers[i]
        return float(0.5 * (diff * diff).sum())

    def worker_grad(self, i, x):
        return as_vector(x, self.d) - self.centers[i]


def chen_example():
    """Two 1-D quadratics with centers +-3; the mean objective has its unique
    stationary point at 0 with value 9/2, yet clipped GD with tau = 1 stalls
    anywhere in [-2, 2]."""
    return ShiftedQuadratics(np.array([3.0, -3.0]))


class ScaledQuadratic(Problem):
    """Every worker holds f_i(x) = (L/2) ||x||^2.

    The curvature is frozen at construction; self.L is reported metadata (so
    diagnostics can detect a deliberately wrong smoothness estimate).
    """

    def __init__(self, L, d, n_workers):
        if not L > 0:
            raise InvalidParameterError(f"L must be positive, got {L}")
        self.curvature = float(L)
        self.L = float(L)
        self.d = int(d)
        self.n_workers = int(n_workers)
        self.f_star = 0.0
        self.f_lower_bound = 0.0
        self.x_star = np.zeros(self.d)

    def worker_value(self, i, x):
        x = as_vector(x, self.d)
        return float(0.5 * self.curvature * (x * x).sum())

    def worker_grad(self, i, x):
        return self.curvature * as_vector(x, self.d)


def scaled_quadratic(L, d=2, n_workers=1):
    return ScaledQuadratic(L, d, n_workers)


@dataclass
class SparseDataset:
    """Rows of (index, value) pairs with +-1 labels.

    Feature indices are 0-based and strictly increasing within a row.
    """

    row_indices: list = field(default_factory=list)  # list of int64 arrays
    row_values: list = field(default_factory=list)   # list of float64 arrays
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0))
    d: int = 0

    @property
    def m(self):
        return len(self.row_indices)

    def to_csr(self):
        indptr = np.zeros(self.m + 1, dtype=np.int64)
        for i, idx in enumerate(self.row_indices):
            indptr[i + 1] = indptr[i] + len(idx)
        if self.m:
            indices = np.concatenate(self.row_indices) if indptr[-1] else np.zeros(0, dtype=np.int64)
            data = np.concatenate(self.row_values) if indptr[-1] else np.zeros(0)
        else:
            indices = np.zeros(0, dtype=np.int64)
            data = np.zeros(0)
        return sp.csr_matrix((data, indices, indptr), shape=(self.m, self.d))

    def row_checksum(self):
        """Order-independent fingerprint of the (row, label) multiset."""
        keys = sorted(
            (tuple(idx.tolist()), tuple(val.tolist()), float(lab))
            for idx, val, lab in zip(self.row_indices, self.row_values, self.labels)
        )
        return hash(tuple(keys))


def load_libsvm(path):
    """Parse a LibSVM-format text file: "<label> <idx>:<val> ..." per line,
    1-based strictly increasing indices.  Any two distinct raw labels map to
    -1/+1 by sorted order; more than two distinct labels is unsupported."""
    raw_labels = []
    row_indices = []
    row_values = []
    max_idx = -1
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                label = float(parts[0])
            except ValueError:
                raise DatasetParseError(f"bad label {parts[0]!r}", line_no) from None
            idx = []
            val = []
            prev = 0
            for tok in parts[1:]:
                try:
                    si, sv = tok.split(":", 1)
                    j = int(si)
                    v = float(sv)
                except ValueError:
                    raise DatasetParseError(f"bad feature token {tok!r}", line_no) from None
                if j < 1:
                    raise DatasetParseError(f"feature index {j} is not 1-based", line_no)
                if j <= prev:
                    raise DatasetParseError(
                        f"feature indices must be strictly increasing, got {j} after {prev}",
                        line_no,
                    )
                prev = j
                idx.append(j - 1)
                val.append(v)
            if idx:
                max_idx = max(max_idx, idx[-1])
            raw_labels.append(label)
            row_indices.append(np.asarray(idx, dtype=np.int64))
            row_values.append(np.asarray(val, dtype=np.float64))

    distinct = sorted(set(raw_labels))
    if len(distinct) > 2:
        raise UnsupportedDatasetError(
            f"expected a two-class dataset, got labels {distinct}"
        )
    mapping = {lab: (-1.0 if k == 0 else 1.0) for k, lab in enumerate(distinct)}
    labels = np.asarray([mapping[lab] for lab in raw_labels], dtype=np.float64)
    return SparseDataset(row_indices, row_values, labels, d=max_idx + 1)


def normalize_rows(data):
    """Scale every nonempty row to unit Euclidean norm; zero rows are kept
    unchanged (dropping them would silently change the loss scale)."""
    out_vals = []
    for val in data.row_values:
        nrm = l2(val) if len(val) else 0.0
        out_vals.append(val / nrm if nrm > 0 else val.copy())
    return SparseDataset(
        [idx.copy() for idx in data.row_indices],
        out_vals,
        data.labels.copy(),
        d=data.d,
    )


def partition(data, n_workers, seed):
    """Shuffle rows by seed, then deal them contiguously into n_workers shards
    whose sizes differ by at most one.  The union of shards is the original
    multiset of rows."""
    if n_workers < 1:
        raise InvalidParameterError(f"n_workers must be >= 1, got {n_workers}")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0xDA7A,)))
    order = rng.permutation(data.m)
    base, extra = divmod(data.m, n_workers)
    shards = []
    pos = 0
    for w in range(n_workers):
        size = base + (1 if w < extra else 0)
        take = order[pos : pos + size]
        pos += size
        shards.append(
            SparseDataset(
                [data.row_indices[i] for i in take],
                [data.row_values[i] for i in take],
                data.labels[take].copy(),
                d=data.d,
            )
        )
    return shards


class NonconvexLogReg(Problem):
    """Per-worker logistic loss with the bounded non-convex penalty
    lam * sum_l x_l^2 / (1 + x_l^2).

    The smoothness constant is the closed-form bound
    (1/4) max_i ||A_i||_F^2 / m_i + 2 lam, which upper-bounds every worker's
    Hessian norm (calibration only needs an upper bound).
    """

    def __init__(self, shards, lam):
        if lam < 0:
            raise InvalidParameterError(f"lambda must be nonnegative, got {lam}")
        dims = {s.d for s in shards}
        if len(dims) != 1:
            raise ConfigurationError(f"shards disagree on dimension: {sorted(dims)}")
        if any(s.m == 0 for s in shards):
            raise ConfigurationError("every worker needs at least one row")
        self.lam = float(lam)
        self.d = dims.pop()
        self.n_workers = len(shards)
        self.shards = shards
        self._A = [s.to_csr() for s in shards]
        self._b = [s.labels for s in shards]
        fro = max(
            (A.data * A.data).sum() / A.shape[0] if A.nnz else 0.0 for A in self._A
        )
        self.L = float(0.25 * fro + 2.0 * self.lam)
        self.f_star = None
        self.f_lower_bound = 0.0  # both loss terms are nonnegative

    def _margins(self, i, x, rows=None):
        A, b = self._A[i], self._b[i]
        if rows is not None:
            A, b = A[rows], b[rows]
        return A @ x, b

    def worker_value(self, i, x, rows=None):
        x = as_vector(x, self.d)
        z, b = self._margins(i, x, rows)
        # log(1 + exp(-b z)) via logaddexp for overflow safety
        loss = np.logaddexp(0.0, -b * z).mean()
        reg = self.lam * ((x * x) / (1.0 + x * x)).sum()
        return float(loss + reg)

    def worker_grad(self, i, x, rows=None):
        x = as_vector(x, self.d)
        A, b = self._A[i], self._b[i]
        if rows is not None:
            A, b = A[rows], b[rows]
        z = A @ x
        # d/dz log(1+exp(-bz)) = -b * sigmoid(-b z)
        s = _sigmoid(-b * z)
        loss_grad = A.T @ (-b * s) / A.shape[0]
        xx = x * x
        reg_grad = self.lam * (2.0 * x) / ((1.0 + xx) * (1.0 + xx))
        return loss_grad + reg_grad

    def worker_row_count(self, i):
        return self._A[i].shape[0]


def _sigmoid(t):
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def nonconvex_logreg(data_shards, lam):
    return NonconvexLogReg(data_shards, lam)
