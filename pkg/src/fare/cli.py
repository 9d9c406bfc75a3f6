"""``fare`` command line.

Every subcommand takes ``--config``, ``--seed`` and ``--out`` (the workspace
directory). Failures exit with status 2 and print one line
``error: <category>: <message>`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from .io import ContainerError

COMMANDS = ("simulate", "preprocess", "train-pp", "train-ip", "calibrate", "evaluate", "ablate", "predict")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fare", description="Radar face recognition with OOD rejection.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="YAML experiment config (defaults if omitted)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", type=Path, required=True, help="workspace directory")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "simulate":
            p.add_argument("--overwrite", action="store_true", help="replace an existing dataset")
        if name == "predict":
            p.add_argument("--input", type=Path, required=True, help="raw-frame container, >= 8 frames")
    return parser


def _run(args) -> str:
    cfg = load_config(args.config).with_seed(args.seed)
    out = args.out
    if args.command == "simulate":
        m = pipeline.simulate(cfg, out, overwrite=args.overwrite)
        return f"simulated {len(m.id_entries)} ID and {len(m.ood_entries)} OOD identities into {out / 'dataset'}"
    if args.command == "preprocess":
        names = pipeline.preprocess(cfg, out)
        return f"preprocessed {len(names)} identities into {out / 'features'}"
    if args.command == "train-pp":
        hist = pipeline.train_pp_stage(cfg, out)
        return f"stage 1 done, final triplet loss {hist[-1]:.6f}" if hist else "stage 1 done (0 epochs)"
    if args.command == "train-ip":
        hists = pipeline.train_ip_stage(cfg, out)
        tail = " ".join(f"{h[-1]:.6f}" for h in hists) if hists[0] else "n/a"
        return f"stage 2 done, final IP losses {tail}"
    if args.command == "calibrate":
        ckpt = pipeline.calibrate(cfg, out)
        return f"calibrated, tau = {ckpt.threshold.tau:.6f}"
    if args.command == "evaluate":
        pipeline.evaluate(cfg, out)
        return (out / "metrics.txt").read_text()
    if args.command == "ablate":
        pipeline.ablate(cfg, out)
        return (out / "ablation.txt").read_text()
    if args.command == "predict":
        return json.dumps(pipeline.predict(cfg, out, args.input), sort_keys=True)
    raise AssertionError(args.command)


def _category(exc: BaseException) -> str:
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, pipeline.MissingArtifactError):
        return "missing_artifact"
    if isinstance(exc, CheckpointError):
        return "checkpoint"
    if isinstance(exc, ContainerError):
        return "container"
    if isinstance(exc, FileExistsError):
        return "exists"
    if isinstance(exc, OSError):
        return "io"
    return "invalid_input"


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        print(_run(args))
    except (ValueError, OSError, RuntimeError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {_category(exc)}: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
