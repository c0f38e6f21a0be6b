"""Command-line entry point: ``relukinks <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

import numpy as np

from . import harness
from .data import FiniteDistribution, example_distribution, read_dataset, regression_summary, sample, check_assumptions
from .errors import ConfigError, DomainError, NumericalError
from .network import Distribution, Hyperparams, InitSpec, init_weights
from .reduced import reference_operator, reference_sum_bounds

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _common(p: argparse.ArgumentParser):
    p.add_argument("--m", type=int, nargs="+", default=[16], help="hidden width(s)")
    p.add_argument("--n", type=int, default=None, help="training set size (default m^2)")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--optimizer", choices=["gd", "sgd"], default="gd")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--h", default="auto", help="auto | <float> | c/m:<c>")
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--delta-shift", type=float, nargs="+", default=[0.0])
    p.add_argument("--early-stop", action="store_true")
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--x-target", type=float, default=1.0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--init-a", default="normal:2", help="distribution of a_i, e.g. normal:2 or uniform:1")
    p.add_argument("--init-w", default="normal:2")
    p.add_argument("--data", default=None,
                   help="trajectory: dataset CSV x,y; otherwise atoms CSV x,y[,prob] (default: six-point example)")
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=["csv", "json"], default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relukinks", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("trial", "run one trial"),
        ("montecarlo", "estimate the crossing probability for one configuration"),
        ("comparison", "GD / SGD with and without early stopping across widths"),
        ("shift", "GD on the example distribution shifted by delta"),
        ("trajectory", "log one full-batch GD run on a fixed dataset"),
        ("spectra", "eigenvalues of the symmetrised reference operator"),
        ("check-dist", "check the data assumptions for a finite distribution"),
    ]:
        p = sub.add_parser(name, help=helptext)
        _common(p)
        if name == "comparison":
            p.add_argument("--variant", nargs="+", choices=harness.VARIANTS, default=list(harness.VARIANTS))
        if name == "trajectory":
            p.add_argument("--l-max", type=int, default=100)
    return parser


def _config(args, m: int, delta: float) -> harness.TrialConfig:
    dist = _atoms(args.data).shifted(delta) if args.data else example_distribution(delta)
    return harness.TrialConfig(
        m=m, n=args.n, optimizer=args.optimizer, h=harness.StepSize.parse(args.h), alpha=args.alpha,
        dist_a=Distribution.parse(args.init_a), dist_w=Distribution.parse(args.init_w), distribution=dist,
        early_stop=harness.EarlyStopConfig() if args.early_stop else None, max_steps=args.max_steps,
        x_target=args.x_target, batch_size=args.batch_size, seed=args.seed)


def _clean(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return None if math.isnan(v) else v
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


def _emit(rows: list, fmt: str, out, header=None):
    buf = io.StringIO()
    if fmt == "json":
        json.dump(_clean(rows), buf, indent=2)
        buf.write("\n")
    else:
        fields = header or (list(rows[0].keys()) if rows else [])
        wr = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in fields})
    text = buf.getvalue()
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _atoms(path) -> FiniteDistribution:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "x" not in rows[0] or "y" not in rows[0]:
        raise ConfigError(f"{path}: expected header x,y[,prob]")
    x = [float(r["x"]) for r in rows]
    y = [float(r["y"]) for r in rows]
    p = [float(r["prob"]) for r in rows] if rows and "prob" in rows[0] else [1.0 / len(rows)] * len(rows)
    return FiniteDistribution(x, y, p)


def run(args) -> int:
    cmd = args.command
    if cmd == "trial":
        res = harness.run_trial(_config(args, args.m[0], args.delta_shift[0]))
        _emit([res.to_dict()], args.format, args.out)
    elif cmd == "montecarlo":
        rows = []
        for delta in args.delta_shift:
            for m in args.m:
                cfg = _config(args, m, delta)
                rep = harness.monte_carlo(cfg, args.trials, args.threads)
                if args.format == "json":
                    rows.append(rep.to_dict())
                else:
                    name = args.optimizer + ("_es" if args.early_stop else "")
                    rows.append(harness.report_row(name, rep))
        _emit(rows, args.format, args.out, None if args.format == "json" else harness.CSV_HEADER)
    elif cmd == "comparison":
        rows = []
        for variant in args.variant:
            for m in args.m:
                over = dict(n=args.n, alpha=args.alpha, max_steps=args.max_steps, x_target=args.x_target,
                            batch_size=args.batch_size, seed=args.seed,
                            dist_a=Distribution.parse(args.init_a), dist_w=Distribution.parse(args.init_w))
                if args.data:
                    over["distribution"] = _atoms(args.data)
                cfg = harness.variant_config(variant, m, **over)
                rows.append(harness.report_row(variant, harness.monte_carlo(cfg, args.trials, args.threads)))
        _emit(rows, args.format, args.out, harness.CSV_HEADER)
    elif cmd == "shift":
        rows = []
        for delta in args.delta_shift:
            for m in args.m:
                cfg = _config(args, m, delta)
                rep = harness.monte_carlo(cfg, args.trials, args.threads)
                rows.append(harness.report_row(f"shift_{delta:g}", rep))
        _emit(rows, args.format, args.out, harness.CSV_HEADER)
    elif cmd == "trajectory":
        D = read_dataset(args.data) if args.data else harness.standin_dataset(seed=args.seed)
        h = 0.002 if args.h == "auto" else float(args.h)
        m = args.m[0]
        spec = InitSpec(Distribution.parse(args.init_a), Distribution.parse(args.init_w), args.seed)
        rows = harness.experiment_trajectory(D, m=m, h=h, alpha=args.alpha, l_max=args.l_max, init=spec)
        header = ["k", "loss_gap", "p1bar", "pm1bar", "q1bar", "qm1bar"] + [f"kink_{i}" for i in range(m)]
        _emit(rows, args.format, args.out, header)
    elif cmd == "spectra":
        rows = []
        for delta in args.delta_shift:
            for m in args.m:
                for t in range(args.trials):
                    cfg = _config(args, m, delta)
                    D = sample(cfg.distribution, cfg.n_eff, harness.rng_for(args.seed, t, harness.DATA))
                    seed = int(harness.derive_seed(args.seed, t, harness.INIT).generate_state(1, np.uint64)[0])
                    W0 = init_weights(InitSpec(cfg.dist_a, cfg.dist_w, seed), Hyperparams(m, 1.0, args.alpha))
                    op = reference_operator(W0, regression_summary(D), args.alpha)
                    s_total, s_top = reference_sum_bounds(op, op.h_auto)
                    rows.append({"m": m, "trial": t, "delta": delta,
                                 **{f"lambda_{i}": float(v) for i, v in enumerate(op.eigvals)},
                                 "h_auto": op.h_auto, "m_h_auto": m * op.h_auto,
                                 "S_total": s_total, "S_top": s_top})
        _emit(rows, args.format, args.out)
    elif cmd == "check-dist":
        dists = [_atoms(args.data).shifted(d) if args.data else example_distribution(d) for d in args.delta_shift]
        rows = []
        for d in dists:
            rep = check_assumptions(d)
            rows.append({"shift_delta": d.shift_delta, "p1_pos": rep.p1_invertible[1],
                         "p1_neg": rep.p1_invertible[-1], "p2_gap": rep.p2_gap,
                         "p3_psi_q_zero": rep.p3_psi_q_zero, "psi_q": rep.psi_q, "p4_excess": rep.p4_excess})
        _emit(rows, args.format, args.out)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except (ConfigError, DomainError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
