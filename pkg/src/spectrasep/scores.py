"""Table-driven bedside and ICU severity scores.

The engine is the tested artifact; the threshold tables (qSOFA, SIRS,
NEWS, modified SOFA, modified APACHE II) ship as editable JSON under
data/scores/. Rules carry an optional group: within a group only the
highest-points fired rule counts, which expresses both OR-criteria and
ladders of increasing severity; groups then sum. An ungrouped rule is
its own group, so a plain table reduces to a simple sum. Scores are
meant to run on pre-imputation records (missingness still visible) and
use current-admission values only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .clinical import Cohort, ParameterDictionary, PatientRecord, default_dictionary
from .errors import ConfigError, EvaluationError, ValidationError

MISSING_SKIP = "skip_rule"
MISSING_INVALID = "score_invalid"

COMPARATORS = ("<", "<=", ">", ">=", "==", "in_range")

# Inputs computable from recorded parameters at scoring time.
DERIVED_PARAMETERS = ("po2_fio2_ratio",)

BUNDLED_TABLES = ("qsofa", "sirs", "news", "sofa_modified", "apache2_modified")


@dataclass(frozen=True)
class ScoreRule:
    parameter: str
    comparator: str
    threshold: float | tuple[float, float]
    points: float
    group: str | None = None

    def __post_init__(self):
        if self.comparator not in COMPARATORS:
            raise ConfigError(f"unknown comparator {self.comparator!r}")
        if self.points < 0:
            raise ConfigError(f"rule points must be >= 0, got {self.points}")
        if self.comparator == "in_range":
            lo, hi = self.threshold
            if not lo <= hi:
                raise ConfigError(f"in_range threshold [{lo}, {hi}] must satisfy lo <= hi")

    def fires(self, value: float) -> bool:
        if self.comparator == "<":
            return value < self.threshold
        if self.comparator == "<=":
            return value <= self.threshold
        if self.comparator == ">":
            return value > self.threshold
        if self.comparator == ">=":
            return value >= self.threshold
        if self.comparator == "==":
            return value == self.threshold
        lo, hi = self.threshold
        return lo <= value <= hi


@dataclass(frozen=True)
class ScoreTable:
    score_name: str
    rules: tuple[ScoreRule, ...]
    aggregation: str = "sum"
    missing_policy: str = MISSING_SKIP
    notes: str = ""

    def __post_init__(self):
        if self.aggregation != "sum":
            raise ConfigError(f"unsupported aggregation {self.aggregation!r}")
        if self.missing_policy not in (MISSING_SKIP, MISSING_INVALID):
            raise ConfigError(f"unknown missing_policy {self.missing_policy!r}")

    def validate_against(self, dictionary: ParameterDictionary) -> None:
        for rule in self.rules:
            if rule.parameter not in dictionary and rule.parameter not in DERIVED_PARAMETERS:
                raise ConfigError(
                    f"score {self.score_name!r} references unknown parameter "
                    f"{rule.parameter!r}"
                )


@dataclass(frozen=True)
class ScoreResult:
    patient_id: str
    score_name: str
    value: float | None
    valid: bool
    contributing: tuple[str, ...] = ()


def _rule_inputs(record: PatientRecord) -> dict[str, float | None]:
    values: dict[str, float | None] = {}
    for name, v in record.values.items():
        if v is None or isinstance(v, str):
            values[name] = None
        elif isinstance(v, bool):
            values[name] = 1.0 if v else 0.0
        else:
            values[name] = float(v)
    po2, fio2 = values.get("po2"), values.get("fio2")
    values["po2_fio2_ratio"] = (
        po2 / fio2 if po2 is not None and fio2 is not None and fio2 > 0 else None
    )
    return values


def evaluate_score(
    record: PatientRecord,
    table: ScoreTable,
    dictionary: ParameterDictionary | None = None,
) -> ScoreResult:
    """Apply one score table to one record.

    Within each rule group the highest-points fired rule wins; group
    contributions are summed, so rule order never affects the result.
    """
    table.validate_against(dictionary or default_dictionary())
    inputs = _rule_inputs(record)
    group_points: dict[str, float] = {}
    group_rule: dict[str, str] = {}
    valid = True
    for i, rule in enumerate(table.rules):
        value = inputs[rule.parameter]
        if value is None:
            if table.missing_policy == MISSING_INVALID:
                valid = False
            continue
        if not rule.fires(value):
            continue
        key = rule.group if rule.group is not None else f"__rule_{i}"
        if rule.points > group_points.get(key, -1.0):
            group_points[key] = rule.points
            group_rule[key] = (
                f"{rule.parameter} {rule.comparator} {rule.threshold} "
                f"-> {rule.points:g}"
            )
    total = float(sum(group_points.values()))
    return ScoreResult(
        patient_id=record.patient_id,
        score_name=table.score_name,
        value=total,
        valid=valid,
        contributing=tuple(group_rule[k] for k in sorted(group_rule)),
    )


def default_vis_weights() -> dict[str, float]:
    payload = resources.files("spectrasep.data").joinpath("vis.weights.json")
    return {k: float(v) for k, v in json.loads(payload.read_text(encoding="utf-8")).items()}


def vasoactive_inotropic_score(
    record: PatientRecord,
    weights: dict[str, float] | None = None,
    missing_as_zero: bool = True,
) -> ScoreResult:
    """Weighted sum of vasopressor and inotrope doses."""
    weights = weights if weights is not None else default_vis_weights()
    total = 0.0
    valid = True
    contributing = []
    for name in sorted(weights):
        dose = record.values.get(name)
        if dose is None:
            if not missing_as_zero:
                valid = False
            continue
        dose = float(dose)
        if dose < 0:
            raise ValidationError(
                f"negative dose {name}={dose} for patient {record.patient_id}"
            )
        if dose > 0:
            contributing.append(f"{name}={dose:g} x {weights[name]:g}")
        total += weights[name] * dose
    return ScoreResult(
        patient_id=record.patient_id, score_name="vis", value=total, valid=valid,
        contributing=tuple(contributing),
    )


def biomarker_results(cohort: Cohort, parameter: str) -> list[ScoreResult]:
    """Raw biomarker passthrough: the recorded value is the decision value."""
    if parameter not in cohort.dictionary:
        raise ConfigError(f"unknown biomarker parameter {parameter!r}")
    out = []
    for record in cohort.records:
        value = record.values[parameter]
        observed = value is not None and not isinstance(value, str)
        out.append(
            ScoreResult(
                patient_id=record.patient_id, score_name=parameter,
                value=float(value) if observed else None, valid=observed,
            )
        )
    return out


def score_as_classifier(
    results: list[ScoreResult], labels: dict[str, int]
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Pair valid score values with binary labels for the evaluation harness."""
    values, y, ids = [], [], []
    for result in results:
        if not result.valid or result.value is None:
            continue
        if result.patient_id not in labels:
            continue
        values.append(float(result.value))
        y.append(int(labels[result.patient_id]))
        ids.append(result.patient_id)
    y_arr = np.asarray(y, dtype=int)
    for cls in (0, 1):
        if not np.any(y_arr == cls):
            raise EvaluationError(
                f"class {cls} has no valid score results, cannot build a classifier"
            )
    return np.asarray(values, dtype=float), y_arr, ids


def evaluate_cohort(
    cohort: Cohort, table: ScoreTable, dictionary: ParameterDictionary | None = None
) -> list[ScoreResult]:
    return [evaluate_score(r, table, dictionary or cohort.dictionary) for r in cohort.records]


def load_score_table(name_or_path: str | Path) -> ScoreTable:
    """Load a bundled table by name or any table from a JSON path."""
    name = str(name_or_path)
    if name in BUNDLED_TABLES:
        text = (
            resources.files("spectrasep.data.scores")
            .joinpath(f"{name}.table.json")
            .read_text(encoding="utf-8")
        )
    else:
        path = Path(name_or_path)
        if not path.exists():
            raise ConfigError(
                f"unknown score table {name!r} (bundled: {', '.join(BUNDLED_TABLES)})"
            )
        text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"unreadable score table {name!r}: {exc}") from exc
    return parse_score_table(doc)


def parse_score_table(doc: dict) -> ScoreTable:
    try:
        rules = tuple(
            ScoreRule(
                parameter=r["parameter"],
                comparator=r["comparator"],
                threshold=tuple(r["threshold"]) if r["comparator"] == "in_range"
                else float(r["threshold"]),
                points=float(r["points"]),
                group=r.get("group"),
            )
            for r in doc["rules"]
        )
        return ScoreTable(
            score_name=doc["score_name"],
            rules=rules,
            aggregation=doc.get("aggregation", "sum"),
            missing_policy=doc.get("missing_policy", MISSING_SKIP),
            notes=doc.get("notes", ""),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad score table: {exc}") from exc
