"""Command-line front end: run, sweep, counterexample, and calibrate.

Exit codes: 0 success, 1 validation/configuration error, 2 divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

import numpy as np

from . import calibration, harness
from .algorithms import HyperParams, run, run_ideal_quadratic_replicas
from .core import l2
from .diagnostics import nonconvergence_floor
from .errors import ClipSimError, DivergenceError
from .oracles import GradientOracle
from .problems import chen_example, scaled_quadratic

log = logging.getLogger("clipsim")


def _parser():
    p = argparse.ArgumentParser(
        prog="clipsim",
        description="Deterministic simulator for clipped distributed optimization",
    )
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="execute one configured run")
    pr.add_argument("--config", required=True)
    pr.add_argument("--seed", type=int, default=None)
    pr.add_argument("--out", default=None, help="metrics CSV path")
    pr.add_argument("--threads", type=int, default=None, help="worker-thread count")
    pr.add_argument("--figures", default=None, help="directory for rendered figures")

    ps = sub.add_parser("sweep", help="grid-tuned sweep along one axis")
    ps.add_argument("--config", required=True)
    ps.add_argument("--axis", required=True, choices=list(harness.SWEEP_AXES))
    ps.add_argument("--values", required=True, help="comma-separated axis values")
    ps.add_argument("--out", default=None, help="summary-table CSV path")
    ps.add_argument("--seeds", type=int, default=3)
    ps.add_argument("--figures", default=None)

    pc = sub.add_parser("counterexample", help="reproduce a stall/floor construction")
    pc.add_argument("--which", required=True, choices=["chen", "theorem1", "figure1"])
    pc.add_argument("--seeds", type=int, default=None)
    pc.add_argument("--T", type=int, default=None)
    pc.add_argument("--out", default=None)
    pc.add_argument("--figures", default=None)

    pk = sub.add_parser("calibrate", help="privacy-noise scale and composed spend")
    pk.add_argument("--tau", type=float, required=True)
    pk.add_argument("--eps", type=float, required=True)
    pk.add_argument("--delta", type=float, required=True)
    pk.add_argument("--T", type=int, required=True)
    return p


def _cmd_run(args):
    cfg = harness.load_config(args.config)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    result, summary = harness.run_config(cfg, seed=args.seed, threads=args.threads)
    for key in ("algorithm", "T", "seed", "gamma", "tau", "beta", "beta_hat",
                "sigma_omega", "final_grad_norm", "eps_spent", "delta_spent"):
        print(f"{key}: {summary[key]}")
    if args.figures:
        from .plots import save_run_figures

        path = save_run_figures(
            [result.initial] + result.records,
            args.figures,
            f"run_{summary['algorithm']}_seed{summary['seed']}",
            title=f"{summary['algorithm']} (tau={summary['tau']:g})",
        )
        print(f"figure: {path}")
    return 0


def _cmd_sweep(args):
    base = harness.load_config(args.config)
    values = [float(v) for v in args.values.split(",") if v]
    spec = harness.SweepSpec(base=base, axis=args.axis, values=values, n_seeds=args.seeds)
    rows = harness.sweep(spec)
    print("axis,value,algorithm,gamma,beta,beta_hat,tau,final_metric,seed_spread")
    for r in rows:
        print(
            f"{r['axis']},{r['value']:g},{r['algorithm']},{r['gamma']:g},"
            f"{r['beta']:g},{r['beta_hat']:g},{r['tau']:g},"
            f"{r['final_metric']:.6g},{r['seed_spread']:.3g}"
        )
    if args.out:
        harness.emit_table_csv(rows, args.out)
    if args.figures:
        from .plots import save_sweep_figure

        path = save_sweep_figure(rows, args.figures, f"sweep_{args.axis}")
        print(f"figure: {path}")
    return 0


def _cmd_counterexample(args):
    if args.which == "chen":
        return _counterexample_chen(args)
    if args.which == "theorem1":
        return _counterexample_theorem1(args)
    return _counterexample_figure1(args)


def _counterexample_chen(args):
    """Clipped GD freezes on the two-quadratic instance for any start in
    [-2, 2] at clipping level 1."""
    T = args.T or 1000
    problem = chen_example()
    hp = HyperParams(gamma=0.1, tau=1.0)
    worst = 0.0
    records = None
    for x0 in (-2.0, -1.0, 0.0, 1.0, 2.0):
        oracle = GradientOracle("exact", seed=0)
        res = run("clip_sgd", problem, oracle, hp, T, x0=np.array([x0]),
                  record_iterates=True)
        drift = max(abs(float(x[0]) - x0) for x in res.iterates)
        worst = max(worst, drift)
        print(f"x0={x0:+.1f}: max |x^t - x0| over {T} steps = {drift:.3e}")
        if x0 == 0.0:
            records = [res.initial] + res.records
    print(f"stalled: {worst == 0.0}")
    if args.out and records:
        harness.emit_csv(records, args.out)
    if args.figures and records:
        from .plots import save_run_figures

        save_run_figures(records, args.figures, "counterexample_chen",
                         title="clipped GD stall (tau=1)")
    return 0


def _counterexample_theorem1(args):
    """Monte-Carlo check that the ideal-shift variant cannot beat the
    gradient-norm floor under three-point noise."""
    seeds = args.seeds or 10_000
    T = args.T or 1000
    L, sigma, tau = 2.0, 5.0, 0.1
    gamma = 1.0 / (2.0 * L)
    x0 = np.array([0.0, -1.0])
    finals = run_ideal_quadratic_replicas(L, gamma, tau, sigma, x0, T, range(seeds))
    mean_sq = float(np.mean(l2(L * finals) ** 2))
    grad0_sq = float(l2(L * x0) ** 2)
    floor = nonconvergence_floor(grad0_sq, tau)
    print(f"seeds: {seeds}, T: {T}, gamma: {gamma:g}, tau: {tau:g}, sigma: {sigma:g}")
    print(f"mean ||grad f(x^T)||^2 : {mean_sq:.6e}")
    print(f"floor (1/2) min(...)   : {floor:.6e}")
    print(f"floor respected: {mean_sq >= floor}")
    return 0


def _counterexample_figure1(args):
    """Median suboptimality traces: the shift-clipping method escapes a good
    neighbourhood while its double-momentum extension stays put."""
    seeds = args.seeds or 20
    T = args.T or 10_000
    gamma = 1.0 / np.sqrt(T)
    problem = scaled_quadratic(2.0, d=2, n_workers=1)
    x0 = np.array([0.0, -0.07])
    f0 = problem.value(x0)
    print(f"T={T}, gamma={gamma:g}, seeds={seeds}, initial gap={f0:.4g}")
    traces = {}
    for tau in (1.0, 0.1, 0.01):
        for alg, hp in (
            ("clip21_sgd", HyperParams(gamma=gamma, tau=tau)),
            ("clip21_sgd2m", HyperParams(gamma=gamma, tau=tau, beta=0.1, beta_hat=1.0)),
        ):
            gaps = []
            for s in range(seeds):
                oracle = GradientOracle("three_point", seed=s, sigma=5.0)
                res = run(alg, problem, oracle, hp, T, x0=x0)
                gaps.append([r.f_gap for r in res.records])
            med = np.median(np.asarray(gaps), axis=0)
            peak = float(med.max())
            traces[f"{alg} tau={tau:g}"] = (list(range(1, T + 1)), med)
            print(f"tau={tau:<5g} {alg:<13s} median peak gap = {peak:.4g} "
                  f"({peak / f0:.1f}x initial)")
    if args.figures:
        from .plots import save_trace_comparison

        save_trace_comparison(traces, args.figures, "counterexample_figure1",
                              ylabel="median f(x^t) - f*")
    if args.out:
        import csv as _csv

        with open(args.out, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["t"] + list(traces))
            cols = [v[1] for v in traces.values()]
            for i in range(T):
                w.writerow([i + 1] + [f"{c[i]:.17g}" for c in cols])
    return 0


def _cmd_calibrate(args):
    sigma = calibration.dp_sigma(args.tau, args.eps, args.delta, args.T)
    per_step = calibration.per_step_privacy(args.eps, args.delta, args.T)
    spend = calibration.account(calibration.PrivacySpend(), per_step, args.T,
                                delta_prime=args.delta)
    print(f"sigma_omega: {sigma:.17g}")
    print(f"per-step epsilon: {per_step[0]:.17g}")
    print(f"per-step delta:   {per_step[1]:.17g}")
    print(f"composed epsilon over T={args.T}: {spend.epsilon:.17g} (target {args.eps})")
    print(f"composed delta  over T={args.T}: {spend.delta:.17g} (target 2*delta = {2*args.delta:g})")
    print(f"within budget: {spend.epsilon <= args.eps and spend.delta <= 2 * args.delta}")
    return 0


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "counterexample":
            return _cmd_counterexample(args)
        return _cmd_calibrate(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ClipSimError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
