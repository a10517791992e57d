"""Command-line entry point.

    pinnstab run --problem heat --arch sqrresnet --layers 5 --out runs/heat
    pinnstab sweep --problem diffusion-reaction --layers 5,10,15,20,30 --arch all
    pinnstab diag grad-hist --problem approx --layers 10 --epoch 1000 --hist-layers 3,6
    pinnstab oracle schrodinger --out ref/

Exit codes: 0 success (including Diverged/NotTrained runs, whose status is
in the written files), 1 usage error, 2 I/O error.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .harness import RunConfig, gradient_histogram, run_single, sweep, write_histogram_csv
from .network import ALL_ARCHS, Arch
from .problems import PROBLEM_IDS

EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _int_list(text):
    try:
        out = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _arch_list(text):
    if text == "all":
        return list(ALL_ARCHS)
    try:
        return [Arch.parse(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _counts(text):
    vals = _int_list(text)
    if len(vals) != 3 or min(vals) < 0:
        raise argparse.ArgumentTypeError("counts must be three nonnegative integers N_r,N_b,N_i")
    return tuple(vals)


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _common(p, layers_type=int, arch_type=None, arch_default="sqrresnet"):
    p.add_argument("--problem", choices=PROBLEM_IDS, required=True)
    if arch_type is None:
        p.add_argument("--arch", choices=[a.value for a in ALL_ARCHS], default=arch_default)
    else:
        p.add_argument("--arch", type=arch_type, default=arch_default,
                       help="comma list of plain|simplehw|sqrresnet, or 'all'")
    p.add_argument("--layers", type=layers_type, default=5 if layers_type is int else [5],
                   help="number of hidden layers NL")
    p.add_argument("--neurons", type=_positive_int, default=None, help="hidden width NN (problem default if omitted)")
    p.add_argument("--counts", type=_counts, default=None, help="N_r,N_b,N_i (problem default if omitted)")
    p.add_argument("--seed", type=int, default=12345)
    p.add_argument("--max-iter", type=int, default=5000)
    p.add_argument("--gtol", type=float, default=1e-8)
    p.add_argument("--precision", choices=["f32", "f64"], default="f64")
    p.add_argument("--checkpoint-every", type=_positive_int, default=100)
    p.add_argument("--optimizer", choices=["lbfgs", "adam"], default="lbfgs")
    p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    p.add_argument("--cache-dir", default=None, help="reference-solution cache directory")


def build_parser():
    parser = _Parser(prog="pinnstab", description="Train and diagnose PINNs with plain/highway/squared-residual MLPs.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("run", help="train one network")
    _common(p)
    p.add_argument("--out", default="pinnstab-run")

    p = sub.add_parser("sweep", help="train every (layers, arch, seed) combination")
    _common(p, layers_type=_int_list, arch_type=_arch_list, arch_default="all")
    p.add_argument("--seeds", type=_int_list, default=None, help="comma list (defaults to --seed)")
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--out", default="pinnstab-sweep")

    p = sub.add_parser("diag", help="diagnostics")
    dsub = p.add_subparsers(dest="diag", parser_class=_Parser)
    dsub.required = True
    g = dsub.add_parser("grad-hist", help="histogram |dL/dW| at a given epoch")
    _common(g)
    g.add_argument("--epoch", type=int, required=True)
    g.add_argument("--hist-layers", type=_int_list, required=True, help="comma list of 1-based layer indices")
    g.add_argument("--bins", type=_positive_int, default=30)
    g.add_argument("--out", default="pinnstab-diag")

    p = sub.add_parser("oracle", help="reference solutions")
    osub = p.add_subparsers(dest="oracle", parser_class=_Parser)
    osub.required = True
    o = osub.add_parser("schrodinger", help="split-step Fourier reference on the validation grid")
    o.add_argument("--nodes", type=_positive_int, default=256)
    o.add_argument("--dt", type=float, default=1e-4)
    o.add_argument("--n", type=_positive_int, default=100, help="validation points per axis")
    o.add_argument("--out", default="pinnstab-oracle")
    return parser


def _config(args, **over):
    fields = dict(
        problem=args.problem,
        arch=args.arch,
        n_layers=args.layers,
        n_neurons=args.neurons,
        counts=args.counts,
        seed=args.seed,
        precision=args.precision,
        optimizer=args.optimizer,
        max_iter=args.max_iter,
        gtol=args.gtol,
        lr=args.lr,
        checkpoint_every=args.checkpoint_every,
        cache_dir=args.cache_dir,
    )
    fields.update(over)
    return RunConfig(**fields)


def _fmt(v):
    return "-" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.3e}"


def _cmd_run(args):
    res = run_single(_config(args, out_dir=args.out))
    fin = res.summary["final"]
    print(f"{args.problem} {args.arch} NL={args.layers}: {res.status} "
          f"loss={_fmt(fin['train_loss'])} rel_l2={_fmt(fin['test_rel_l2'])} -> {args.out}")


def _cmd_sweep(args):
    base = _config(args, arch=args.arch[0], n_layers=args.layers[0])
    rows = sweep(base, args.layers, args.arch, args.seeds or [args.seed], jobs=args.jobs, out_dir=args.out)
    print(f"{'arch':<10}{'NL':>4}{'seed':>8}  {'status':<12}{'loss':>11}{'test_mse':>11}{'rel_l2':>11}")
    for r in rows:
        print(f"{r['arch']:<10}{r['n_layers']:>4}{r['seed']:>8}  {r['status']:<12}"
              f"{_fmt(r['train_loss']):>11}{_fmt(r['test_mse']):>11}{_fmt(r['test_rel_l2']):>11}")
    print(f"{len(rows)} rows -> {Path(args.out) / 'sweep.csv'}")


def _cmd_grad_hist(args):
    cfg = _config(args, max_iter=max(args.max_iter, args.epoch))
    hists = gradient_histogram(cfg, args.epoch, args.hist_layers, bins=args.bins)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for h in hists:
        path = out / f"grad_hist_{h.layer}_{h.epoch}.csv"
        write_histogram_csv(h, path)
        print(f"layer {h.layer} epoch {h.epoch}: n={h.total} median={h.median:.3e} -> {path}")


def _cmd_oracle(args):
    from .problems import SpectralGrid, build_problem, mass, nls_evolve, schrodinger_reference_cached

    problem = build_problem("schrodinger")
    (x0, x1), (t0, t1) = problem.domain
    xs = np.linspace(x0, x1, args.n)
    ts = np.linspace(t0, t1, args.n)
    h, v = schrodinger_reference_cached(xs, ts, nodes=args.nodes, dt=args.dt)
    grid = SpectralGrid(args.nodes)
    start, end = nls_evolve(grid, [0.0, t1], args.dt)
    drift = abs(mass(grid, end) - mass(grid, start))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savez(out / "schrodinger_reference.npz", x=xs, t=ts, h=h, v=v)
    print(f"nodes={args.nodes} dt={args.dt:g} mass drift={drift:.3e} -> {out / 'schrodinger_reference.npz'}")


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    handler = {"run": _cmd_run, "sweep": _cmd_sweep, "diag": _cmd_grad_hist, "oracle": _cmd_oracle}[args.command]
    try:
        handler(args)
    except OSError as exc:
        print(f"pinnstab: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"pinnstab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
