#!/usr/bin/env python3
"""Generate the small synthetic LibSVM-format datasets shipped under data/.

Two-class rows with sparse positive features, a planted linear separator, and
10% label noise.  Fixed seeds; rerunning reproduces the committed files.
"""

import os

import numpy as np


def make(path, m, d, density, seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(d)
    lines = []
    for _ in range(m):
        nnz = max(1, rng.binomial(d, density))
        idx = np.sort(rng.choice(d, size=nnz, replace=False))
        val = np.round(rng.uniform(0.1, 1.0, size=nnz), 6)
        margin = sum(w[j] * v for j, v in zip(idx, val))
        label = 1 if margin > 0 else -1
        if rng.random() < 0.1:
            label = -label
        feats = " ".join(f"{j + 1}:{v:g}" for j, v in zip(idx, val))
        lines.append(f"{label:+d} {feats}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {path}: {m} rows, d={d}")


if __name__ == "__main__":
    here = os.path.join(os.path.dirname(__file__), "..", "data")
    os.makedirs(here, exist_ok=True)
    make(os.path.join(here, "synthetic_a.libsvm"), m=48, d=24, density=0.3, seed=20240601)
    make(os.path.join(here, "synthetic_b.libsvm"), m=60, d=40, density=0.2, seed=20240602)
