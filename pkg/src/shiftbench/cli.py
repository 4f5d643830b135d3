"""Command-line entry point.

Every subcommand takes ``--config <json>`` and ``--out <dir>``; ``--seed``
overrides the config's master seed. On failure the process exits nonzero and
prints one line to stderr::

    error: {"coordinate": {...}, "message": "...", "type": "HarnessError"}
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .predio import DatasetError, IdxFormatError, PredictionFormatError

EXIT_CONFIG = 2
EXIT_RUNTIME = 1


def _cfg(args):
    return harness.load_config(args.config, seed=args.seed, output_dir=args.out)


def cmd_train(args):
    cfg = _cfg(args)
    data = harness.load_dataset(cfg)
    train, val, _ = harness.split(data, cfg.seed)
    trained = harness.train_methods(cfg, train, val)
    harness.save_trained(trained, cfg.output_dir)


def cmd_predict(args):
    cfg = _cfg(args)
    trained = harness.load_trained(cfg, args.models or Path(cfg.output_dir) / "models")
    data = harness.load_dataset(cfg)
    _, _, test = harness.split(data, cfg.seed)
    points = harness.shift_points(cfg, test)
    preds = harness.predict_all(cfg, trained, points, harness.load_ood(cfg, data))
    harness.write_predictions(preds, cfg.output_dir)


def cmd_shift(args):
    cfg = _cfg(args)
    data = harness.load_dataset(cfg)
    _, _, test = harness.split(data, cfg.seed)
    ddir = Path(cfg.output_dir) / "datasets"
    ddir.mkdir(parents=True, exist_ok=True)
    for kind, level, ds in harness.shift_points(cfg, test):
        harness.write_dataset_csv(ds, ddir / f"test__{kind}__{level:02d}.csv")


def cmd_eval(args):
    cfg = _cfg(args)
    pred_dir = args.predictions or Path(cfg.output_dir) / "predictions"
    report = harness.evaluate_dir(cfg, pred_dir, cfg.output_dir)
    harness.emit_curves(cfg, report, cfg.output_dir)


def cmd_report(args):
    harness.run(_cfg(args))


def cmd_size_study(args):
    harness.run_size_study(_cfg(args))


COMMANDS = {
    "train": (cmd_train, "train every configured method and save parameters"),
    "predict": (cmd_predict, "write prediction files for every shift point"),
    "shift": (cmd_shift, "write the shifted test sets as CSV"),
    "eval": (cmd_eval, "score existing prediction files"),
    "report": (cmd_report, "full pipeline: train, shift, predict, score, curves"),
    "size-study": (cmd_size_study, "ensemble-size study at one shift point"),
}


def build_parser():
    p = argparse.ArgumentParser(prog="shiftbench", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="JSON run configuration")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--seed", type=int, default=None, help="override the master seed")
        if name == "predict":
            s.add_argument("--models", default=None, help="trained model directory (default OUT/models)")
        if name == "eval":
            s.add_argument("--predictions", default=None, help="prediction directory (default OUT/predictions)")
    return p


def _error_line(exc):
    payload = {"type": type(exc).__name__, "message": str(exc)}
    coord = getattr(exc, "coordinate", None)
    if coord:
        payload["coordinate"] = coord
    return "error: " + json.dumps(payload, sort_keys=True)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func = COMMANDS[args.command][0]
    try:
        func(args)
    except (harness.ConfigError, PredictionFormatError, IdxFormatError, DatasetError) as exc:
        print(_error_line(exc), file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        print(_error_line(exc), file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
