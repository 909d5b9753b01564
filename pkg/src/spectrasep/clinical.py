"""Clinical record ingestion, imputation, filtering, and summaries.

The parameter dictionary (data/params.dictionary.json) fixes the 45
recorded parameters: 33 available within one hour of admission and 12
laboratory values available within ten hours. Records keep typed values
with None marking missingness; encoding to model features and the -1
imputation are separate, explicit steps so descriptive statistics can
run on the observed values.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import IngestionError
from .features import FeatureTable

log = logging.getLogger(__name__)

SEPSIS_LABELS = ("sepsis", "no_sepsis", "unsure")
SURVIVAL_LABELS = ("survived", "died", "lost_to_followup")

TASK_SEPSIS = "sepsis"
TASK_MORTALITY = "mortality"

MISSING_CATEGORY = "missing"
IMPUTE_SENTINEL = -1.0

TIER1_COUNT = 33
TIER10_COUNT = 12


@dataclass(frozen=True)
class ParameterSpec:
    name: str
    tier: int
    kind: str  # real | bool | categorical
    unit: str | None = None
    plausible_range: tuple[float, float] | None = None
    categories: tuple[str, ...] = ()
    category: str = ""


class ParameterDictionary:
    """Ordered descriptors of the recorded clinical parameters."""

    def __init__(self, parameters: list[ParameterSpec]):
        names = [p.name for p in parameters]
        if len(set(names)) != len(names):
            raise IngestionError("parameter dictionary has duplicate names")
        n1 = sum(1 for p in parameters if p.tier == 1)
        n10 = sum(1 for p in parameters if p.tier == 10)
        if (n1, n10) != (TIER1_COUNT, TIER10_COUNT):
            raise IngestionError(
                f"dictionary must hold {TIER1_COUNT} one-hour and {TIER10_COUNT} "
                f"ten-hour parameters, got {n1} and {n10}"
            )
        self.parameters = tuple(parameters)
        self._by_name = {p.name: p for p in parameters}

    def __len__(self):
        return len(self.parameters)

    def __contains__(self, name):
        return name in self._by_name

    def __getitem__(self, name) -> ParameterSpec:
        return self._by_name[name]

    def names(self, tier: str | int = "all") -> tuple[str, ...]:
        """Parameter names, either all 45, tier 1 only, or tiers 1+10."""
        if tier in ("all", "ten_hour", 10):
            return tuple(p.name for p in self.parameters)
        if tier in ("one_hour", 1):
            return tuple(p.name for p in self.parameters if p.tier == 1)
        raise IngestionError(f"unknown tier {tier!r}")

    def encoding_map(self) -> dict:
        """Exported value -> code mapping used by encode()."""
        out = {}
        for p in self.parameters:
            if p.kind == "bool":
                out[p.name] = {"false": 0, "true": 1, MISSING_CATEGORY: -1}
            elif p.kind == "categorical":
                codes = {c: i for i, c in enumerate(p.categories)}
                codes[MISSING_CATEGORY] = -1
                out[p.name] = codes
        return out


def default_dictionary() -> ParameterDictionary:
    payload = resources.files("spectrasep.data").joinpath("params.dictionary.json")
    return parse_dictionary(json.loads(payload.read_text(encoding="utf-8")))


def load_dictionary(path: str | Path) -> ParameterDictionary:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IngestionError(f"unreadable parameter dictionary {path}: {exc}") from exc
    return parse_dictionary(doc)


def parse_dictionary(doc: dict) -> ParameterDictionary:
    try:
        params = [
            ParameterSpec(
                name=e["name"],
                tier=int(e["tier"]),
                kind=e["kind"],
                unit=e.get("unit"),
                plausible_range=tuple(e["range"]) if e.get("range") else None,
                categories=tuple(e.get("categories") or ()),
                category=e.get("category", ""),
            )
            for e in doc["parameters"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise IngestionError(f"bad parameter dictionary entry: {exc}") from exc
    for p in params:
        if p.kind not in ("real", "bool", "categorical"):
            raise IngestionError(f"{p.name}: unknown kind {p.kind!r}")
        if p.kind == "categorical" and not p.categories:
            raise IngestionError(f"{p.name}: categorical parameter needs categories")
    return ParameterDictionary(params)


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    sepsis_label: str
    survival_label: str
    values: dict  # parameter name -> typed value, None when missing

    def missing(self) -> tuple[str, ...]:
        return tuple(k for k, v in self.values.items() if v is None)


@dataclass(frozen=True)
class Cohort:
    records: tuple[PatientRecord, ...]
    dictionary: ParameterDictionary
    warnings: tuple[str, ...] = field(default=())

    def __len__(self):
        return len(self.records)

    def patient_ids(self) -> list[str]:
        return [r.patient_id for r in self.records]

    def labels(self, task: str) -> list[str]:
        if task == TASK_SEPSIS:
            return [r.sepsis_label for r in self.records]
        if task == TASK_MORTALITY:
            return [r.survival_label for r in self.records]
        raise IngestionError(f"unknown task {task!r}")


_BOOL_TOKENS = {
    "true": True, "1": True, "yes": True,
    "false": False, "0": False, "no": False,
}


def _parse_cell(text: str, spec: ParameterSpec, row: int):
    text = text.strip()
    if text == "":
        return None
    if spec.kind == "real":
        try:
            value = float(text)
        except ValueError:
            raise IngestionError(
                f"row {row}, column {spec.name!r}: cannot parse {text!r} as a number"
            ) from None
        if not math.isfinite(value):
            raise IngestionError(
                f"row {row}, column {spec.name!r}: non-finite value {text!r}"
            )
        return value
    if spec.kind == "bool":
        token = text.lower()
        if token not in _BOOL_TOKENS:
            raise IngestionError(
                f"row {row}, column {spec.name!r}: cannot parse {text!r} as a boolean"
            )
        return _BOOL_TOKENS[token]
    if text == MISSING_CATEGORY:
        return None
    if text not in spec.categories:
        raise IngestionError(
            f"row {row}, column {spec.name!r}: {text!r} not in categories "
            f"{list(spec.categories)}"
        )
    return text


def _read_labels(path: str | Path) -> dict[str, tuple[str, str]]:
    labels = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"patient_id", "sepsis_label", "survival_label"}
        if reader.fieldnames is None or set(reader.fieldnames) != required:
            raise IngestionError(
                f"labels file {path} must have columns {sorted(required)}, "
                f"got {reader.fieldnames}"
            )
        for i, row in enumerate(reader, start=2):
            pid = row["patient_id"].strip()
            sepsis, survival = row["sepsis_label"].strip(), row["survival_label"].strip()
            if sepsis not in SEPSIS_LABELS:
                raise IngestionError(f"row {i}: unknown sepsis_label {sepsis!r}")
            if survival not in SURVIVAL_LABELS:
                raise IngestionError(f"row {i}: unknown survival_label {survival!r}")
            if pid in labels:
                raise IngestionError(f"duplicate patient_id {pid!r} in labels file")
            labels[pid] = (sepsis, survival)
    return labels


def ingest_csv(
    path: str | Path,
    labels_path: str | Path | None = None,
    dictionary: ParameterDictionary | None = None,
) -> Cohort:
    """Read clinical.csv (and optionally labels.csv) into a typed cohort.

    Empty cells mean missing. Out-of-plausible-range values are collected
    as warnings, never rejected; unknown columns, duplicate patient ids,
    and unparseable cells raise IngestionError naming the location.
    """
    dictionary = dictionary or default_dictionary()
    labels = _read_labels(labels_path) if labels_path else {}
    records: list[PatientRecord] = []
    warnings: list[str] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise IngestionError(f"{path} is empty")
        expected = {"patient_id", *dictionary.names()}
        got = set(reader.fieldnames)
        if got - expected:
            raise IngestionError(f"unknown column(s) {sorted(got - expected)} in {path}")
        if expected - got:
            raise IngestionError(f"missing column(s) {sorted(expected - got)} in {path}")
        for i, row in enumerate(reader, start=2):
            pid = row["patient_id"].strip()
            if not pid:
                raise IngestionError(f"row {i}: empty patient_id")
            if pid in seen:
                raise IngestionError(f"duplicate patient_id {pid!r} at row {i}")
            seen.add(pid)
            values = {}
            for name in dictionary.names():
                spec = dictionary[name]
                value = _parse_cell(row[name], spec, i)
                values[name] = value
                if (
                    value is not None
                    and spec.kind == "real"
                    and spec.plausible_range is not None
                    and not (spec.plausible_range[0] <= value <= spec.plausible_range[1])
                ):
                    warnings.append(
                        f"row {i}, {name}={value} outside plausible range "
                        f"{list(spec.plausible_range)}"
                    )
            sepsis, survival = labels.get(pid, ("unsure", "lost_to_followup"))
            records.append(
                PatientRecord(
                    patient_id=pid, sepsis_label=sepsis, survival_label=survival,
                    values=values,
                )
            )
    if labels_path:
        unknown = set(labels) - seen
        if unknown:
            raise IngestionError(
                f"labels file references unknown patient_id(s) {sorted(unknown)[:5]}"
            )
    for w in warnings:
        log.warning("%s", w)
    return Cohort(records=tuple(records), dictionary=dictionary, warnings=tuple(warnings))


def impute(cohort: Cohort) -> Cohort:
    """Replace every missing value by the -1 sentinel.

    Reals and booleans become -1; categoricals become the dedicated
    missing category, which encodes to -1. Observed values are never
    touched.
    """
    imputed = []
    for record in cohort.records:
        values = {}
        for name, value in record.values.items():
            if value is not None:
                values[name] = value
            elif cohort.dictionary[name].kind == "real":
                values[name] = IMPUTE_SENTINEL
            elif cohort.dictionary[name].kind == "bool":
                values[name] = IMPUTE_SENTINEL
            else:
                values[name] = MISSING_CATEGORY
        imputed.append(replace(record, values=values))
    return replace(cohort, records=tuple(imputed))


def missingness(cohort: Cohort) -> float:
    """Fraction of missing cells over all records and parameters."""
    total = len(cohort.records) * len(cohort.dictionary)
    if total == 0:
        return 0.0
    missing = sum(len(r.missing()) for r in cohort.records)
    return missing / total


def cohort_filter(cohort: Cohort, task: str) -> Cohort:
    """Drop patients unusable for a task (unsure sepsis, lost follow-up)."""
    if task == TASK_SEPSIS:
        kept = tuple(r for r in cohort.records if r.sepsis_label != "unsure")
    elif task == TASK_MORTALITY:
        kept = tuple(r for r in cohort.records if r.survival_label != "lost_to_followup")
    else:
        raise IngestionError(f"unknown task {task!r}")
    if not kept:
        raise IngestionError(f"no patients remain after filtering for task {task!r}")
    return replace(cohort, records=kept)


def _encode_value(value, spec: ParameterSpec) -> float:
    if value is None:
        return IMPUTE_SENTINEL
    if spec.kind == "real":
        return float(value)
    if spec.kind == "bool":
        if value == IMPUTE_SENTINEL:
            return IMPUTE_SENTINEL
        return 1.0 if value else 0.0
    if value == MISSING_CATEGORY:
        return IMPUTE_SENTINEL
    return float(spec.categories.index(value))


def encode(cohort: Cohort, tier: str | int = "all") -> FeatureTable:
    """Numeric feature table for the forest: ordinal codes, -1 for missing."""
    names = cohort.dictionary.names(tier)
    matrix = np.empty((len(cohort.records), len(names)))
    for i, record in enumerate(cohort.records):
        for j, name in enumerate(names):
            matrix[i, j] = _encode_value(record.values[name], cohort.dictionary[name])
    return FeatureTable(
        patient_ids=list(cohort.patient_ids()), names=list(names), values=matrix
    )


def descriptive_stats(cohort: Cohort, group_by: str = "sepsis_label") -> dict:
    """Per-parameter, per-group summary on observed (pre-imputation) values.

    Ratio-scaled parameters report mean and SD, categoricals report
    category counts, boolean therapy flags report the percentage true.
    The overall missingness percentage is included.
    """
    if group_by not in ("sepsis_label", "survival_label"):
        raise IngestionError(f"unknown grouping {group_by!r}")
    if not cohort.records:
        raise IngestionError("descriptive_stats requires a nonempty cohort")
    groups: dict[str, list[PatientRecord]] = {}
    for record in cohort.records:
        groups.setdefault(getattr(record, group_by), []).append(record)
    rows = []
    for spec in cohort.dictionary.parameters:
        per_group = {}
        for group_name in sorted(groups):
            observed = [
                r.values[spec.name] for r in groups[group_name]
                if r.values[spec.name] is not None
            ]
            if spec.kind == "real":
                arr = np.asarray(observed, dtype=float)
                per_group[group_name] = {
                    "n": len(observed),
                    "mean": float(arr.mean()) if len(observed) else None,
                    "sd": float(arr.std(ddof=1)) if len(observed) > 1 else 0.0 if observed else None,
                }
            elif spec.kind == "bool":
                per_group[group_name] = {
                    "n": len(observed),
                    "percent_true": 100.0 * sum(bool(v) for v in observed) / len(observed)
                    if observed else None,
                }
            else:
                counts = {c: 0 for c in spec.categories}
                for v in observed:
                    counts[v] += 1
                per_group[group_name] = {"n": len(observed), "counts": counts}
        n_missing = sum(1 for r in cohort.records if r.values[spec.name] is None)
        rows.append(
            {
                "parameter": spec.name,
                "tier": spec.tier,
                "kind": spec.kind,
                "unit": spec.unit,
                "groups": per_group,
                "missing_pct": 100.0 * n_missing / len(cohort.records),
            }
        )
    return {
        "group_by": group_by,
        "n_patients": len(cohort.records),
        "overall_missing_pct": 100.0 * missingness(cohort),
        "parameters": rows,
    }
