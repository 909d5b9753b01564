"""Command line: train members per outer fold and export predictions.

Typical flow, after the pipeline has produced preprocessed tensors and
a split plan:

    spectrafuse run --tensors prep/preprocessed --site palm \
        --labels cohort/labels.csv --task sepsis --splits eval/splits.json \
        --clinical-features clin/features.csv --out fusion_out --toy

`run` trains all inner-fold members for every outer fold and writes one
predictions.csv the evaluation harness ingests unchanged.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import torch

from . import __version__
from .config import ArchitectureConfig, TrainingSchedule
from .data import FusionDataset, read_clinical_features, read_labels, read_split_plan
from .export import export_predictions
from .train import train_fold_members


def build_parser():
    parser = argparse.ArgumentParser(prog="spectrafuse")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    p = sub.add_parser("run", help="train all members and export predictions")
    p.add_argument("--tensors", required=True, help="directory of preprocessed tensors")
    p.add_argument("--site", choices=("palm", "finger"), default="palm")
    p.add_argument("--labels", required=True)
    p.add_argument("--task", choices=("sepsis", "mortality"), default="sepsis")
    p.add_argument("--splits", required=True)
    p.add_argument("--clinical-features", default=None,
                   help="encoded clinical features CSV; omit for the image-only model")
    p.add_argument("--pretrained", default=None, help="backbone state-dict path")
    p.add_argument("--out", default="fusion_out")
    p.add_argument("--seed", type=int, default=17)
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--width-factor", type=float, default=1.0)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--toy", action="store_true",
                   help="small schedule: 3 epochs of 64 images, batch 16")
    p.add_argument("--outer-folds", type=int, nargs="*", default=None)
    p.set_defaults(func=cmd_run)
    return parser


def cmd_run(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labels = read_labels(args.labels, args.task)
    clinical = (
        read_clinical_features(args.clinical_features)
        if args.clinical_features
        else None
    )
    dataset = FusionDataset(args.tensors, args.site, labels, clinical=clinical)
    plan = read_split_plan(args.splits)
    config = ArchitectureConfig(
        input_channels=dataset.channels,
        n_clinical=dataset.n_clinical,
        width_factor=args.width_factor,
        dropout=args.dropout,
    )
    schedule = TrainingSchedule()
    if args.toy:
        schedule = schedule.toy()
    folds = args.outer_folds if args.outer_folds else list(range(plan.n_outer))
    predictions_path = out / "predictions.csv"
    started = time.monotonic()
    total_rows = 0
    notes = []
    for idx, k in enumerate(folds):
        members = train_fold_members(
            dataset, plan, k, config, schedule, seed=args.seed,
            repetitions=args.repetitions, pretrained_path=args.pretrained,
        )
        states = {key: result.swa_state for key, result in members.items()}
        notes.append(next(iter(members.values())).build_info.get("note", ""))
        checkpoint_dir = out / f"fold{k}"
        checkpoint_dir.mkdir(exist_ok=True)
        for (j, r), result in members.items():
            torch.save(result.swa_state, checkpoint_dir / f"member_j{j}_r{r}.pt")
        total_rows += export_predictions(
            states, config, dataset, plan, k, predictions_path,
            repetitions=args.repetitions, append=idx > 0,
        )
        print(f"fold {k}: {len(members)} members trained and exported")
    metadata = {
        "tool": "spectrafuse",
        "version": __version__,
        "task": args.task,
        "site": args.site,
        "seed": args.seed,
        "repetitions": args.repetitions,
        "outer_folds": folds,
        "toy": bool(args.toy),
        "n_clinical": dataset.n_clinical,
        "input_channels": dataset.channels,
        "pretrained": args.pretrained or None,
        "initialization_notes": sorted(set(notes)),
        "rows_exported": total_rows,
        "elapsed_s": round(time.monotonic() - started, 3),
    }
    (out / "checkpoints.json").write_text(
        json.dumps(metadata, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(f"wrote {total_rows} prediction rows -> {predictions_path}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
