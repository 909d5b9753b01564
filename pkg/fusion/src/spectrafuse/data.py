"""Readers for the pipeline's published file formats, plus batching.

Everything here speaks file formats only: SpecCube v1 tensors (as
written by the preprocess stage, one per patient and site), the encoded
clinical features CSV, the labels CSV, and split-plan JSON. Nothing is
imported from the pipeline package itself.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torchvision.transforms import InterpolationMode
from torchvision.transforms import functional as TF

MAGIC = b"SPECCUB1"

LABEL_MAPS = {
    "sepsis": {"sepsis": 1, "no_sepsis": 0},
    "mortality": {"died": 1, "survived": 0},
}


def read_speccube(path: str | Path) -> tuple[np.ndarray, dict]:
    """Read a SpecCube v1 file: magic, u32 header length, JSON, f32 payload."""
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path} is not a SpecCube v1 file")
    (header_len,) = struct.unpack_from("<I", raw, len(MAGIC))
    start = len(MAGIC) + 4
    header = json.loads(raw[start : start + header_len].decode("utf-8"))
    count = header["channels"] * header["height"] * header["width"]
    payload = raw[start + header_len :]
    if len(payload) != 4 * count:
        raise ValueError(f"{path}: payload size mismatch")
    values = np.frombuffer(payload, dtype="<f4").reshape(
        header["channels"], header["height"], header["width"]
    )
    return values.copy(), header


def read_split_plan(path: str | Path) -> "SplitPlan":
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != "spectrasep-splits":
        raise ValueError(f"{path} is not a split-plan file")
    return SplitPlan(
        n_outer=int(doc["n_outer"]),
        n_inner=int(doc["n_inner"]),
        assignment={p: (int(o), int(i)) for p, (o, i) in doc["assignment"].items()},
    )


@dataclass(frozen=True)
class SplitPlan:
    n_outer: int
    n_inner: int
    assignment: dict

    def outer_test(self, k):
        return sorted(p for p, (o, _) in self.assignment.items() if o == k)

    def inner_train(self, k, j):
        return sorted(
            p for p, (o, i) in self.assignment.items() if o != k and i != j
        )

    def inner_validation(self, k, j):
        return sorted(p for p, (o, i) in self.assignment.items() if o != k and i == j)


def read_labels(path: str | Path, task: str) -> dict[str, int]:
    mapping = LABEL_MAPS[task]
    column = "sepsis_label" if task == "sepsis" else "survival_label"
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            label = row[column].strip()
            if label in mapping:
                out[row["patient_id"].strip()] = mapping[label]
    if not out:
        raise ValueError(f"no usable {task} labels in {path}")
    return out


def read_clinical_features(path: str | Path) -> tuple[list[str], list[str], np.ndarray]:
    """Encoded clinical feature table: patient_id plus named numeric columns."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "patient_id":
            raise ValueError(f"{path}: first column must be patient_id")
        ids, rows = [], []
        for row in reader:
            ids.append(row[0])
            rows.append([float(x) for x in row[1:]])
    return ids, header[1:], np.asarray(rows, dtype=np.float32)


class FusionDataset:
    """Per-patient tensors, masks, clinical vectors, and binary labels."""

    def __init__(self, tensor_dir: str | Path, site: str, labels: dict[str, int],
                 clinical: tuple[list[str], list[str], np.ndarray] | None = None):
        tensor_dir = Path(tensor_dir)
        self.site = site
        self.tensors: dict[str, np.ndarray] = {}
        self.masks: dict[str, np.ndarray] = {}
        for path in sorted(tensor_dir.glob(f"*_{site}.spec")):
            pid = path.name[: -len(f"_{site}.spec")]
            if pid not in labels:
                continue
            values, _ = read_speccube(path)
            self.tensors[pid] = values
            mask_file = tensor_dir / f"{pid}_{site}.mask.npy"
            if mask_file.exists():
                self.masks[pid] = np.load(mask_file)
            else:
                side = values.shape[1]
                self.masks[pid] = np.ones((side, values.shape[2]), dtype=bool)
        if not self.tensors:
            raise ValueError(f"no {site!r} tensors under {tensor_dir}")
        self.labels = {p: labels[p] for p in self.tensors}
        self.clinical: dict[str, np.ndarray] | None = None
        self.n_clinical = 0
        if clinical is not None:
            ids, names, matrix = clinical
            index = {p: i for i, p in enumerate(ids)}
            missing = [p for p in self.tensors if p not in index]
            if missing:
                raise ValueError(f"clinical features missing for {missing[:5]}")
            self.clinical = {p: matrix[index[p]] for p in self.tensors}
            self.n_clinical = matrix.shape[1]

    @property
    def channels(self) -> int:
        return next(iter(self.tensors.values())).shape[0]

    def patient_ids(self) -> list[str]:
        return sorted(self.tensors)

    def batch(self, ids: list[str], augment_rng: np.random.Generator | None = None,
              rotation_degrees: float = 180.0, flip_probability: float = 0.5):
        """Assemble (image, clinical, label) tensors, optionally augmented."""
        images, clinical, labels = [], [], []
        for pid in ids:
            tensor = torch.from_numpy(self.tensors[pid])
            mask = torch.from_numpy(self.masks[pid].astype(np.float32))
            if augment_rng is not None:
                tensor, mask = augment_sample(
                    tensor, mask, augment_rng, rotation_degrees, flip_probability
                )
            images.append(tensor)
            labels.append(self.labels[pid])
            if self.clinical is not None:
                clinical.append(torch.from_numpy(self.clinical[pid]))
        image_batch = torch.stack(images)
        clinical_batch = torch.stack(clinical) if clinical else None
        return image_batch, clinical_batch, torch.tensor(labels, dtype=torch.long)


def augment_sample(tensor: torch.Tensor, mask: torch.Tensor,
                   rng: np.random.Generator, rotation_degrees: float,
                   flip_probability: float):
    """Random rotation and flips; values outside the rotated mask stay zero."""
    angle = float(rng.uniform(-rotation_degrees, rotation_degrees))
    rotated = TF.rotate(tensor, angle, interpolation=InterpolationMode.BILINEAR)
    mask_rotated = TF.rotate(mask[None], angle, interpolation=InterpolationMode.NEAREST)[0]
    if rng.random() < flip_probability:
        rotated = torch.flip(rotated, dims=(2,))
        mask_rotated = torch.flip(mask_rotated, dims=(1,))
    if rng.random() < flip_probability:
        rotated = torch.flip(rotated, dims=(1,))
        mask_rotated = torch.flip(mask_rotated, dims=(0,))
    rotated = rotated * mask_rotated
    return rotated, mask_rotated


def balanced_batches(labels: dict[str, int], ids: list[str], n_images: int,
                     batch_size: int, rng: np.random.Generator) -> list[list[str]]:
    """Class-balanced oversampled batches covering n_images draws.

    Every batch holds an equal number of each class (odd remainders give
    the final partial batch a half-half split too), drawn with
    replacement so the minority class is oversampled.
    """
    by_class = {0: [p for p in ids if labels[p] == 0],
                1: [p for p in ids if labels[p] == 1]}
    if not by_class[0] or not by_class[1]:
        raise ValueError("balanced batches need both classes in the training ids")
    batches = []
    remaining = n_images
    while remaining > 0:
        size = min(batch_size, remaining)
        half = size // 2
        counts = {0: half, 1: size - half}
        batch = [
            by_class[c][int(rng.integers(0, len(by_class[c])))]
            for c in (0, 1)
            for _ in range(counts[c])
        ]
        batches.append(batch)
        remaining -= size
    return batches
