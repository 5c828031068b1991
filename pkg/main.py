"""
dida-lab command line.

    python main.py train CONFIG [--seed N] [--override section.key=value ...] [--run-dir DIR] [--force]
    python main.py eval --checkpoint CKPT (--config CONFIG [--domain D] [--split S] | --images I --labels L)
    python main.py count CONFIG [--json]
    python main.py gradcheck [--ops all|name,...] [--seeds N]
    python main.py export-features --checkpoint CKPT --out CSV (--config CONFIG ... | --images I [--labels L])
    python main.py ablate PLAN --run-dir DIR [--force]

Exit codes: 0 ok, 2 usage or configuration error, 3 numeric failure.
"""
import argparse
import json
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from errors import DidaError
from settings import LOG_LEVEL, format_validation_error

EXIT_OK = 0
EXIT_USAGE = 2

logging.basicConfig(
    level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
    format='{"level":"%(levelname)s","ts":"%(asctime)s","message":"%(message)s"}'
)

logger = logging.getLogger("dida")


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value; repeatable")


def _add_dataset_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="experiment config naming the domains")
    parser.add_argument("--domain", default="target", help="'target', 'sourceN' or a domain name")
    parser.add_argument("--split", default="test", choices=["train", "test"])
    parser.add_argument("--images", help="IDX images file (instead of --config)")
    parser.add_argument("--labels", help="IDX labels file")
    _add_config_args(parser)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dida", description="Dynamic instance domain adaptation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train one experiment config")
    train.add_argument("config")
    train.add_argument("--seed", type=int)
    train.add_argument("--run-dir", help="output directory (overrides output.run_dir)")
    train.add_argument("--force", action="store_true", help="reuse a non-empty run directory")
    _add_config_args(train)

    evaluate = sub.add_parser("eval", help="accuracy of a checkpoint on a labeled set")
    evaluate.add_argument("--checkpoint", required=True)
    _add_dataset_args(evaluate)

    count = sub.add_parser("count", help="parameter and MAC summary")
    count.add_argument("config", nargs="?")
    count.add_argument("--json", action="store_true", help="print the full per-layer summary as JSON")
    _add_config_args(count)

    gradcheck = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    gradcheck.add_argument("--ops", default="all", help="'all' or a comma-separated list of op names")
    gradcheck.add_argument("--seeds", type=int, default=20)
    gradcheck.add_argument("--tolerance", type=float, default=1e-6)

    export = sub.add_parser("export-features", help="write per-sample features Z to CSV")
    export.add_argument("--checkpoint", required=True)
    export.add_argument("--out", required=True)
    _add_dataset_args(export)

    ablate = sub.add_parser("ablate", help="run an ablation matrix")
    ablate.add_argument("plan")
    ablate.add_argument("--run-dir", required=True)
    ablate.add_argument("--force", action="store_true")
    return parser


def dispatch(args: argparse.Namespace) -> None:
    # Commands import the numeric stack lazily so --help stays fast.
    if args.command == "train":
        from commands.train import cmd_train
        result = cmd_train(args.config, args.override, args.seed, args.run_dir, args.force)
        print(json.dumps(result))
    elif args.command == "eval":
        from commands.evaluate import cmd_eval
        result = cmd_eval(args.checkpoint, args.config, args.domain, args.split, args.images, args.labels, args.override)
        print(json.dumps(result))
    elif args.command == "count":
        from commands.count import cmd_count, format_table
        report = cmd_count(args.config, args.override)
        print(json.dumps(report, indent=2) if args.json else format_table(report))
    elif args.command == "gradcheck":
        from commands.gradcheck import cmd_gradcheck
        report = cmd_gradcheck(args.ops, args.seeds, args.tolerance)
        print(json.dumps(report, indent=2))
    elif args.command == "export-features":
        from commands.export_features import cmd_export_features
        result = cmd_export_features(
            args.checkpoint, args.out, args.config, args.domain, args.split, args.images, args.labels, args.override
        )
        print(json.dumps(result))
    elif args.command == "ablate":
        from commands.ablate import cmd_ablate
        summary = cmd_ablate(args.plan, args.run_dir, args.force)
        print(json.dumps({"ordering": summary["ordering"], "failed": summary["failed"]}))


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    try:
        dispatch(args)
    except DidaError as e:
        logger.error(f"[{args.command.upper()}] {type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except ValidationError as e:
        message = format_validation_error(e)
        logger.error(f"[{args.command.upper()}] invalid configuration: {message}")
        print(f"error: invalid configuration: {message}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
