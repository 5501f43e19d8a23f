"""Command-line entry point: ``python -m foram_classifier <command>``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .commands import (
    RunContext,
    cmd_evaluate,
    cmd_extract,
    cmd_finetune,
    cmd_gridsearch,
    cmd_mcdropout,
    cmd_pretrain,
    cmd_split,
    cmd_synth,
    cmd_train,
)
from .commands.common import echo_config
from .core.config import dump_config, load_config
from .core.errors import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, ForamError, ValidationError

logger = logging.getLogger("foram_classifier")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
SPLIT_CHOICES = ("train", "val", "test")


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS keeps a flag given before the subcommand from being reset by the subparser
    flags = argparse.ArgumentParser(add_help=False)
    flags.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="YAML config file")
    flags.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="run seed (overrides config)")
    flags.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="artifact directory (overrides paths.out)")
    flags.add_argument("--print-config", action="store_true", default=argparse.SUPPRESS,
                       help="print the resolved config as YAML and exit")
    flags.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS, help="debug logging")
    return flags


def build_parser() -> argparse.ArgumentParser:
    flags = _global_flags()
    parser = _Parser(
        prog="foram_classifier",
        description="Microfossil detection, classification and MC dropout analysis",
        parents=[flags],
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    sub.add_parser("synth", parents=[flags], help="render the synthetic plate benchmark")
    extract = sub.add_parser("extract", parents=[flags], help="detect specimens and write crops")
    extract.add_argument("--plates", type=Path, default=None, help="plate directory (default paths.plates)")
    extract.add_argument("--data", type=Path, default=None, help="crop directory (default paths.data)")
    sub.add_parser("split", parents=[flags], help="write a stratified dataset manifest")
    sub.add_parser("train", parents=[flags], help="train the classification head on cached features")
    sub.add_parser("grid-search", parents=[flags], help="rank head hyperparameter configurations")
    sub.add_parser("pretrain-backbone", parents=[flags], help="train the builtin backbone from scratch")
    sub.add_parser("finetune", parents=[flags], help="fine-tune the last builtin blocks with the head")
    for name, text in (("evaluate", "accuracy and confusion matrix"), ("mc-dropout", "MC dropout analysis")):
        p = sub.add_parser(name, parents=[flags], help=text)
        p.add_argument("--split", choices=SPLIT_CHOICES, default="test")
        p.add_argument("--finetuned", action="store_true", help="use the fine-tuned checkpoints")
    return parser


COMMANDS = {
    "synth": lambda ctx, args: cmd_synth(ctx),
    "extract": lambda ctx, args: cmd_extract(ctx, args.plates, args.data),
    "split": lambda ctx, args: cmd_split(ctx),
    "train": lambda ctx, args: cmd_train(ctx),
    "grid-search": lambda ctx, args: cmd_gridsearch(ctx),
    "pretrain-backbone": lambda ctx, args: cmd_pretrain(ctx),
    "finetune": lambda ctx, args: cmd_finetune(ctx),
    "evaluate": lambda ctx, args: cmd_evaluate(ctx, args.split, args.finetuned),
    "mc-dropout": lambda ctx, args: cmd_mcdropout(ctx, args.split, args.finetuned),
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
        format=LOG_FORMAT,
        stream=sys.stderr,
    )
    try:
        out = getattr(args, "out", None)
        cfg = load_config(
            getattr(args, "config", None),
            seed=getattr(args, "seed", None),
            **{"paths.out": str(out) if out is not None else None},
        )
        if getattr(args, "print_config", False):
            print(dump_config(cfg), end="")
            return EXIT_OK
        if not args.command:
            parser.print_help(sys.stderr)
            return EXIT_VALIDATION
        echo_config(cfg, args.command)
        COMMANDS[args.command](RunContext(cfg), args)
        return EXIT_OK
    except ForamError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        keys = getattr(exc, "keys", None)
        if keys:
            logger.error("offending keys: %s", ", ".join(keys))
        return exc.exit_code
    except Exception:
        logger.exception("Unexpected failure")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
