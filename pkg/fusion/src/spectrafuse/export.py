"""Prediction export in the evaluation-harness contract.

One row per (patient, member): patient_id, fold (the member's inner
fold), repetition, raw logits for both classes, and the binary label.
No softmax is applied; the harness averages logits across members.
"""

from __future__ import annotations

import csv
from pathlib import Path

import torch

from .config import ArchitectureConfig
from .data import FusionDataset
from .model import FusionClassifier

PREDICTIONS_HEADER = (
    "patient_id", "fold", "repetition", "value_class0", "value_class1", "label",
)


def member_logits(state: dict, config: ArchitectureConfig, dataset: FusionDataset,
                  ids: list[str]) -> torch.Tensor:
    model = FusionClassifier(config)
    model.load_state_dict(state)
    model.eval()
    with torch.no_grad():
        images, clinical, _ = dataset.batch(ids)
        return model(images, clinical)


def export_predictions(
    members: dict[tuple[int, int], dict],
    config: ArchitectureConfig,
    dataset: FusionDataset,
    plan,
    outer_fold: int,
    path: str | Path,
    n_inner: int | None = None,
    repetitions: int = 3,
    append: bool = False,
) -> int:
    """Write logits of every member for every outer-test patient.

    members maps (inner fold, repetition) to a model state dict. All
    n_inner x repetitions members must be present; missing ones are
    reported as a list of (fold, repetition) pairs.
    """
    n_inner = plan.n_inner if n_inner is None else n_inner
    expected = [(j, r) for j in range(n_inner) for r in range(repetitions)]
    missing = [key for key in expected if key not in members]
    if missing:
        raise ValueError(f"missing member checkpoint(s): {missing}")
    test_ids = [p for p in plan.outer_test(outer_fold) if p in dataset.labels]
    if not test_ids:
        raise ValueError(f"no test patients with tensors for outer fold {outer_fold}")
    mode = "a" if append else "w"
    rows = 0
    with open(path, mode, newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if not append:
            writer.writerow(PREDICTIONS_HEADER)
        for (j, r) in expected:
            logits = member_logits(members[(j, r)], config, dataset, test_ids)
            for i, pid in enumerate(test_ids):
                writer.writerow([
                    pid, j, r,
                    repr(float(logits[i, 0])), repr(float(logits[i, 1])),
                    dataset.labels[pid],
                ])
                rows += 1
    return rows
