"""Member training: AdamW, exponential decay, oversampled batches, SWA.

One member is trained per (inner fold, repetition). Weight averaging
keeps a snapshot at the end of each of the last N epochs and takes
their arithmetic mean; batch-norm running statistics are averaged the
same way, which is adequate at this scale.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .config import ArchitectureConfig, TrainingSchedule
from .data import FusionDataset
from .model import build_model


def _subseed(*parts) -> int:
    digest = hashlib.sha256("\x1f".join(repr(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass
class TrainResult:
    state: dict
    swa_state: dict
    epoch_states: list[dict]
    losses: list[float] = field(default_factory=list)
    build_info: dict = field(default_factory=dict)


def average_states(states: list[dict]) -> dict:
    """Arithmetic mean of checkpoints, elementwise over every tensor."""
    out = {}
    for key in states[0]:
        tensors = [s[key] for s in states]
        if tensors[0].dtype.is_floating_point:
            out[key] = torch.stack([t.to(torch.float64) for t in tensors]).mean(0).to(
                tensors[0].dtype
            )
        else:
            out[key] = tensors[0].clone()
    return out


def train_member(
    dataset: FusionDataset,
    train_ids: list[str],
    config: ArchitectureConfig,
    schedule: TrainingSchedule,
    seed: int,
    pretrained_path: str | None = None,
) -> TrainResult:
    """Train one network member on the given patient ids."""
    torch.manual_seed(seed)
    model, build_info = build_model(config, seed=seed, pretrained_path=pretrained_path)
    model.train()
    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=schedule.learning_rate,
        betas=(schedule.adam_beta1, schedule.adam_beta2),
        weight_decay=schedule.weight_decay,
    )
    scheduler = torch.optim.lr_scheduler.ExponentialLR(
        optimizer, gamma=schedule.lr_decay_gamma
    )
    criterion = nn.CrossEntropyLoss()
    losses: list[float] = []
    epoch_states: list[dict] = []
    batch_rng = np.random.default_rng(_subseed(seed, "batches"))
    augment_rng = np.random.default_rng(_subseed(seed, "augment"))
    from .data import balanced_batches

    step = 0
    for epoch in range(schedule.epochs):
        batches = balanced_batches(
            dataset.labels, train_ids, schedule.images_per_epoch,
            schedule.batch_size, batch_rng,
        )
        for batch_ids in batches:
            images, clinical, labels = dataset.batch(
                batch_ids,
                augment_rng=augment_rng if schedule.augment else None,
                rotation_degrees=schedule.rotation_degrees,
                flip_probability=schedule.flip_probability,
            )
            optimizer.zero_grad()
            logits = model(images, clinical)
            loss = criterion(logits, labels)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss {loss.item()} at epoch {epoch} step {step} "
                    f"(lr {scheduler.get_last_lr()[0]:.2e}, batch {batch_ids[:4]}...)"
                )
            loss.backward()
            optimizer.step()
            losses.append(float(loss.item()))
            step += 1
        scheduler.step()
        if epoch >= schedule.epochs - schedule.swa_last_epochs:
            epoch_states.append(copy.deepcopy(model.state_dict()))
    swa_state = average_states(epoch_states) if epoch_states else copy.deepcopy(
        model.state_dict()
    )
    return TrainResult(
        state=copy.deepcopy(model.state_dict()),
        swa_state=swa_state,
        epoch_states=epoch_states,
        losses=losses,
        build_info=build_info,
    )


def train_fold_members(
    dataset: FusionDataset,
    plan,
    outer_fold: int,
    config: ArchitectureConfig,
    schedule: TrainingSchedule,
    seed: int,
    repetitions: int = 3,
    pretrained_path: str | None = None,
) -> dict[tuple[int, int], TrainResult]:
    """All (inner fold, repetition) members for one outer fold."""
    members = {}
    for j in range(plan.n_inner):
        train_ids = [p for p in plan.inner_train(outer_fold, j) if p in dataset.labels]
        for r in range(repetitions):
            members[(j, r)] = train_member(
                dataset, train_ids, config, schedule,
                seed=_subseed(seed, "member", outer_fold, j, r),
                pretrained_path=pretrained_path,
            )
    return members
