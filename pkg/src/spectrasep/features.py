"""Per-patient feature tables and their features.csv round trip."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError


@dataclass
class FeatureTable:
    """Named numeric features, one row per patient."""

    patient_ids: list[str]
    names: list[str]
    values: np.ndarray  # (n_patients, n_features) float64

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.patient_ids), len(self.names)):
            raise ValidationError(
                f"feature matrix shape {self.values.shape} does not match "
                f"{len(self.patient_ids)} patients x {len(self.names)} features"
            )
        if len(set(self.patient_ids)) != len(self.patient_ids):
            raise ValidationError("duplicate patient_id in feature table")
        if len(set(self.names)) != len(self.names):
            raise ValidationError("duplicate feature name in feature table")

    @property
    def n_features(self) -> int:
        return len(self.names)

    def select(self, names: list[str]) -> "FeatureTable":
        idx = [self.names.index(n) for n in names]
        return FeatureTable(
            patient_ids=list(self.patient_ids),
            names=list(names),
            values=self.values[:, idx].copy(),
        )

    def rows(self, patient_ids: list[str]) -> "FeatureTable":
        index = {pid: i for i, pid in enumerate(self.patient_ids)}
        missing = [pid for pid in patient_ids if pid not in index]
        if missing:
            raise ValidationError(f"patient_id(s) {missing[:5]} not in feature table")
        idx = [index[pid] for pid in patient_ids]
        return FeatureTable(
            patient_ids=list(patient_ids),
            names=list(self.names),
            values=self.values[idx].copy(),
        )


def hstack(left: FeatureTable, right: FeatureTable) -> FeatureTable:
    """Column-concatenate two tables, aligning on the left table's patients."""
    aligned = right.rows(left.patient_ids)
    clash = set(left.names) & set(right.names)
    if clash:
        raise ValidationError(f"feature name collision: {sorted(clash)[:5]}")
    return FeatureTable(
        patient_ids=list(left.patient_ids),
        names=list(left.names) + list(aligned.names),
        values=np.hstack([left.values, aligned.values]),
    )


def write_features_csv(table: FeatureTable, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", *table.names])
        for pid, row in zip(table.patient_ids, table.values):
            writer.writerow([pid, *(repr(float(x)) for x in row)])


def read_features_csv(path: str | Path) -> FeatureTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "patient_id":
            raise ValidationError(f"{path}: first column must be patient_id")
        names = header[1:]
        ids, rows = [], []
        for i, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValidationError(f"{path} row {i}: expected {len(header)} cells")
            ids.append(row[0])
            try:
                values = [float(x) for x in row[1:]]
            except ValueError as exc:
                raise ValidationError(f"{path} row {i}: {exc}") from exc
            if any(not math.isfinite(v) for v in values):
                raise ValidationError(f"{path} row {i}: non-finite feature value")
            rows.append(values)
    return FeatureTable(
        patient_ids=ids, names=names,
        values=np.asarray(rows, dtype=np.float64).reshape(len(ids), len(names)),
    )
