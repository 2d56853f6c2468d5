"""``isqrt-cov`` command-line tool.

Subcommands: ``gradcheck``, ``converge``, ``bench``, ``train-demo``.  Each one
writes CSV to stdout (or ``--out``): ``#`` comment lines with provenance,
then the header row, then data rows.

Exit codes: 0 success, 1 a check failed, 2 usage error.
"""
from __future__ import annotations

import argparse
import contextlib
import datetime
import sys
from typing import Sequence

import numpy as np

from . import harness, train_demo
from .isqrt_layer import Mode
from .matrix_core import read_matrix

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _modes(text: str) -> list[Mode]:
    if text == "both":
        return [Mode.TRACE, Mode.FROBENIUS]
    try:
        return [Mode(v.strip()) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"mode must be trace, frobenius, both or a comma list, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isqrt-cov", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    g.add_argument("--d", type=_int_list, required=True)
    g.add_argument("--n", type=int, default=None, help="features per sample (default 2*d)")
    g.add_argument("--iters", type=_int_list, required=True)
    g.add_argument("--mode", type=_modes, default=[Mode.TRACE])
    g.add_argument("--seed", type=_int_list, default=[0])
    g.add_argument("--tol", type=float, default=1e-6)
    g.add_argument("--out")

    c = sub.add_parser("converge", help="error of the iteration versus N")
    c.add_argument("--d", type=int, default=64)
    c.add_argument("--max-iters", type=int, default=12)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--mode", type=_modes, default=[Mode.TRACE])
    src = c.add_mutually_exclusive_group()
    src.add_argument("--identity", action="store_true", help="use Sigma = I_d")
    src.add_argument("--sigma", help="read Sigma from a matrix text file")
    c.add_argument("--out")

    b = sub.add_parser("bench", help="time the meta-layer against the eigendecomposition path")
    b.add_argument("--d", type=int, default=256)
    b.add_argument("--iters", type=_int_list, default=[3, 5])
    b.add_argument("--batch", type=int, default=1)
    b.add_argument("--repeats", type=int, default=20)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out")

    t = sub.add_parser("train-demo", help="train on the synthetic covariance task")
    defaults = train_demo.TrainConfig()
    t.add_argument("--classes", type=int, default=defaults.classes)
    t.add_argument("--d", type=int, default=defaults.d)
    t.add_argument("--p", type=int, default=defaults.p, help="raw feature dimension")
    t.add_argument("--n", type=int, default=defaults.n)
    t.add_argument("--epochs", type=int, default=defaults.epochs)
    t.add_argument("--lr", type=float, default=defaults.lr)
    t.add_argument("--momentum", type=float, default=defaults.momentum)
    t.add_argument("--weight-decay", type=float, default=defaults.weight_decay)
    t.add_argument("--batch-size", type=int, default=defaults.batch_size)
    t.add_argument("--head", choices=train_demo.HEADS, default=defaults.head)
    t.add_argument("--seed", type=int, default=defaults.seed)
    t.add_argument("--out")
    return parser


def _provenance(args: argparse.Namespace) -> list[str]:
    flags = " ".join(f"{k}={_fmt(v)}" for k, v in sorted(vars(args).items()) if k not in ("command", "out"))
    return [f"isqrt-cov {args.command}", f"flags: {flags}"]


def _fmt(v) -> str:
    if isinstance(v, list):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, Mode):
        return v.value
    return str(v)


@contextlib.contextmanager
def _sink(path: str | None):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            yield fh


def _emit(args, header: str, rows: Sequence[str], comments: Sequence[str] = ()) -> None:
    with _sink(args.out) as fh:
        for line in [*_provenance(args), *comments]:
            fh.write(f"# {line}\n")
        fh.write(header + "\n")
        for row in rows:
            fh.write(row + "\n")


def cmd_gradcheck(args) -> int:
    reports = harness.gradcheck_grid(args.d, args.iters, args.mode, args.seed, args.n, args.tol)
    _emit(args, reports[0].CSV_HEADER, [r.csv_row() for r in reports])
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def cmd_converge(args) -> int:
    if args.identity:
        sigma = np.eye(args.d)
    elif args.sigma:
        sigma = read_matrix(args.sigma)
    else:
        sigma = harness.random_spd(args.d, args.seed)
    rows = []
    header = None
    for mode in args.mode:
        recs = harness.convergence_sweep(sigma, args.max_iters, mode)
        header = "mode," + harness.ConvergenceRecord.CSV_HEADER
        rows += [f"{mode.value},{r.csv_row()}" for r in recs]
    src = "identity" if args.identity else (f"file {args.sigma}" if args.sigma else "covariance of 4d standard-normal features")
    _emit(args, header, rows, [f"sigma: {src}, d={sigma.shape[0]}"])
    return EXIT_OK


def cmd_bench(args) -> int:
    records = harness.bench(args.d, args.iters, args.batch, args.repeats, args.seed)
    notes = [
        f"timestamp: {datetime.datetime.now(datetime.timezone.utc).isoformat(timespec='seconds')}",
        "method: perf_counter wall clock per repeat; 1 warm-up repeat discarded; inputs allocated before timing",
        "ns rows time forward and forward+backward of the meta-layer; eig row times the Jacobi exact square root (forward only)",
        f"tape memory for N: 2(N+1) matrices of d^2 doubles = "
        + ", ".join(f"N={it}: {2 * (it + 1) * args.d ** 2 * 8 / 2 ** 20:.3f} MiB" for it in args.iters),
    ]
    _emit(args, harness.BenchRecord.CSV_HEADER, [r.csv_row() for r in records], notes)
    return EXIT_OK


def cmd_train_demo(args) -> int:
    cfg = train_demo.TrainConfig(classes=args.classes, d=args.d, p=args.p, n=args.n, epochs=args.epochs,
                                 lr=args.lr, momentum=args.momentum, weight_decay=args.weight_decay,
                                 batch_size=args.batch_size, head=args.head, seed=args.seed)
    logs = train_demo.run(cfg)
    _emit(args, train_demo.LOG_HEADER, [r.csv_row() for r in logs])
    return EXIT_OK


COMMANDS = {
    "gradcheck": cmd_gradcheck,
    "converge": cmd_converge,
    "bench": cmd_bench,
    "train-demo": cmd_train_demo,
}


def _validate(parser: argparse.ArgumentParser, args) -> None:
    if args.command == "bench":
        if args.repeats < 3:
            parser.error("--repeats must be >= 3")
        if args.d < 2:
            parser.error("--d must be >= 2")
        if args.batch < 1 or min(args.iters) < 1:
            parser.error("--batch and --iters must be positive")
    elif args.command == "gradcheck":
        if min(args.d) < 1 or min(args.iters) < 1 or (args.n is not None and args.n < 1):
            parser.error("--d, --n and --iters must be positive")
        if not args.tol > 0:
            parser.error("--tol must be positive")
    elif args.command == "converge":
        if args.d < 1 or args.max_iters < 1:
            parser.error("--d and --max-iters must be >= 1")
    elif args.command == "train-demo":
        if args.classes < 2 or args.d < 1 or args.p < 2 or args.n < 2 or args.epochs < 1 or not args.lr > 0:
            parser.error("invalid training flags")


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _validate(parser, args)
    except SystemExit as exc:
        return int(exc.code or 0)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
