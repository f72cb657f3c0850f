"""Command-line entry point: train, sample, eval, ablate, sweep.

Exit codes: 0 success, 1 usage error, 2 data/format/config error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import TrainConfig, load_config
from .errors import ConfigError, FormatError, UsageError, VocabularyError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("ratgan")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _dims(text: str) -> list[int]:
    try:
        dims = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not dims or min(dims) < 0:
        raise argparse.ArgumentTypeError("dims must be a non-empty list of non-negative integers")
    return dims


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ratgan", description="Recurrent-affine text-to-image GAN at desk scale.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--config", type=Path, help="key = value config file (defaults if omitted)")
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")
    p.add_argument("--out", type=Path, help="run directory (default runs/<run_id>)")

    p = sub.add_parser("sample", help="generate images for one caption")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--caption", required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="score a checkpoint against a dataset file")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)

    p = sub.add_parser("ablate", help="CAT / RAT / RAT+SA comparison over seeds")
    p.add_argument("--config", type=Path)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--out", type=Path, default=Path("runs/ablation"))

    p = sub.add_parser("sweep", help="LSTM hidden-size sweep")
    p.add_argument("--config", type=Path)
    p.add_argument("--dims", type=_dims, default=[0, 4, 8, 16, 32, 64])
    p.add_argument("--out", type=Path, default=Path("runs/sweep"))

    p = sub.add_parser("dataset", help="write a synthetic dataset file")
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--out", type=Path, required=True)
    return parser


def _config(path: Path | None) -> TrainConfig:
    return load_config(path) if path is not None else TrainConfig()


def run(args: argparse.Namespace) -> int:
    # deferred so `--help` stays fast
    from . import harness
    from .data import dump_dataset, make_dataset
    from .train import train

    if args.command == "train":
        cfg = _config(args.config)
        out = args.out or Path("runs") / cfg.run_id
        res = train(cfg, out, resume=args.resume)
        print(f"trained {cfg.run_id} to step {res.step}; run directory {res.run_dir}")
        for k, v in res.final_metrics.items():
            print(f"{k} = {v!r}")
    elif args.command == "sample":
        if args.n < 1:
            raise UsageError("--n must be >= 1")
        for path in harness.sample(args.ckpt, args.caption, args.n, args.out, args.seed):
            print(path)
    elif args.command == "eval":
        m = harness.evaluate_checkpoint(args.ckpt, args.dataset)
        print("step,toy_fid,toy_cs,toy_cs_shuffled")
        print(f"{m['step']},{m['toy_fid']!r},{m['toy_cs']!r},{m['toy_cs_shuffled']!r}")
    elif args.command == "ablate":
        if args.seeds < 1:
            raise UsageError("--seeds must be >= 1")
        report = harness.ablate(_config(args.config), args.out, seeds=args.seeds)
        print(report.format(), end="")
    elif args.command == "sweep":
        rows = harness.sweep_hidden(_config(args.config), args.dims, args.out)
        print("hidden_dim,params,formula_delta,toy_cs,toy_fid")
        for r in rows:
            print(f"{r.hidden_dim},{r.params},{r.formula_delta},{r.toy_cs!r},{r.toy_fid!r}")
    elif args.command == "dataset":
        args.out.parent.mkdir(parents=True, exist_ok=True)
        dump_dataset(args.out, make_dataset(args.n, args.seed, args.size))
        print(args.out)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return run(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, FormatError, VocabularyError, FileNotFoundError, IsADirectoryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
