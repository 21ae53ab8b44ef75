"""Command-line entry point: ``wakesense <command> [--config PATH] [overrides]``.

Exit status is 0 on success, 2 for configuration errors and 3 for runtime
failures; errors are reported as one JSON line on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import experiments as ex
from .config import ConfigError, RunConfig

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("wakesense")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--sl", type=int, help="window length")
    common.add_argument("--case", type=int, choices=(1, 2), help="1: first offset, 2: second")
    common.add_argument("--epochs", type=int)
    common.add_argument("--jobs", type=int, help="worker processes for multi-run commands")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="wakesense", description="Simulate wake pressure traces, train the "
                     "motion estimator and run the experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen", parents=[common], help="simulate the trace corpus")
    sub.add_parser("train", parents=[common], help="train and evaluate one model")
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    sub.add_parser("tune", parents=[common], help="WOA task-weight search plus baselines")
    sub.add_parser("ablate", parents=[common], help="CNN-BiLSTM vs CNN-only")
    sub.add_parser("sweep-seqlen", parents=[common], help="metrics across window lengths")
    p = sub.add_parser("report", parents=[common], help="aggregate train runs")
    p.add_argument("runs", nargs="*", help="train run directories")
    return parser


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig.from_dict({})
    return cfg.with_overrides(seed=args.seed, out=args.out, sl=args.sl, case=args.case,
                              epochs=args.epochs, jobs=args.jobs)


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"status": "error", "kind": kind, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        return _fail("usage", str(exc), EXIT_CONFIG)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args)
        cmd = args.command
        if cmd == "gen":
            result = {"manifest": str(ex.run_gen(cfg))}
        elif cmd == "train":
            on_epoch = (lambda r: log.info("epoch %s %s", r["epoch"], r)) if args.verbose else None
            result = ex.run_train(cfg, on_epoch)
        elif cmd == "eval":
            result = ex.run_eval(cfg, args.checkpoint)
        elif cmd == "tune":
            result = ex.run_tune(cfg, on_eval=lambda r: log.info("tune eval %s", r))
        elif cmd == "ablate":
            result = ex.run_ablate(cfg)["summary"]
        elif cmd == "sweep-seqlen":
            result = {"rows": [{k: v for k, v in r.items() if k != "runs"}
                               for r in ex.run_sweep_seqlen(cfg)["rows"]]}
        elif cmd == "report":
            result = ex.run_report(args.runs, cfg.out)
        else:  # pragma: no cover - argparse restricts choices
            raise ConfigError(f"unknown command {cmd}")
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    except (ex.RunFailure, FloatingPointError, OSError, RuntimeError) as exc:
        return _fail("runtime", str(exc), EXIT_RUNTIME)
    print(json.dumps(result, sort_keys=True, default=ex._jsonable))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
