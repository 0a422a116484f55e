"""Figure rendering for the report path: convergence traces and sweep
summaries written as PNG files alongside the delimited output."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

ALG_STYLES = {
    "clip_sgd": dict(color="tab:orange", marker="s"),
    "clip21_sgd": dict(color="tab:blue", marker="o"),
    "clip21_sgd2m": dict(color="tab:green", marker="^"),
    "clip21_ideal": dict(color="tab:purple", marker="d"),
    "sgdm": dict(color="tab:gray", marker="x"),
}


def _ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def save_run_figures(records, out_dir, stem, title=None):
    """Gradient-norm (and, when known, suboptimality) traces for one run."""
    _ensure_dir(out_dir)
    t = [r.t for r in records]
    gns = [r.grad_norm_sq for r in records]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    axes[0].semilogy(t, gns, color="tab:blue", lw=1.0)
    axes[0].set_xlabel("iteration")
    axes[0].set_ylabel(r"$\|\nabla f(x^t)\|^2$")
    gaps = [r.f_gap for r in records]
    if all(g is not None for g in gaps) and any(g > 0 for g in gaps):
        axes[1].semilogy(t, gaps, color="tab:red", lw=1.0)
        axes[1].set_ylabel(r"$f(x^t) - f^*$")
    else:
        axes[1].plot(t, [r.clip_active for r in records], color="tab:gray", lw=1.0)
        axes[1].set_ylabel("workers clipping")
    axes[1].set_xlabel("iteration")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    path = os.path.join(out_dir, f"{stem}.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_sweep_figure(rows, out_dir, stem, title=None):
    """Final metric vs axis value, one line per algorithm (log-log)."""
    _ensure_dir(out_dir)
    axis = rows[0]["axis"] if rows else "value"
    fig, ax = plt.subplots(figsize=(4.8, 3.4))
    for alg in sorted({r["algorithm"] for r in rows}):
        pts = sorted(
            [(r["value"], r["final_metric"], r["seed_spread"]) for r in rows if r["algorithm"] == alg]
        )
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        err = [p[2] / 2.0 for p in pts]
        style = ALG_STYLES.get(alg, {})
        ax.errorbar(xs, ys, yerr=err, label=alg, lw=1.2, capsize=2, **style)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(axis)
    ax.set_ylabel("final gradient norm (last-100 mean)")
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    path = os.path.join(out_dir, f"{stem}.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_trace_comparison(traces, out_dir, stem, ylabel, title=None):
    """Overlay of labelled (t, value) traces, e.g. two algorithms on the same
    counterexample."""
    _ensure_dir(out_dir)
    fig, ax = plt.subplots(figsize=(4.8, 3.4))
    for label, (t, vals) in traces.items():
        base = label.split()[0]
        style = dict(ALG_STYLES.get(base, {}))
        style.pop("marker", None)
        ax.semilogy(t, np.maximum(vals, 1e-300), label=label, lw=1.0, **style)
    ax.set_xlabel("iteration")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    path = os.path.join(out_dir, f"{stem}.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
