"""Nested cross-validation, ensembling, ROC/AUROC, and bootstrap CIs.

The split plan assigns every patient one outer fold (its test fold) and
one inner slot; inner fold j of outer fold k is everyone outside outer
fold k whose slot is j, so the five inner folds partition each outer
training set. Members are trained per (outer fold, inner fold,
repetition): with 5 inner folds and 3 repetitions, 15 member models
score each outer test patient, and their decision values are averaged
before any metric is computed.

AUROC is the Mann-Whitney statistic (ties count half), computed from
midranks; the ROC curve groups tied decision values, so its trapezoid
area equals the rank statistic to floating-point accuracy. Bootstrap
CIs resample patients with replacement, exactly n_bootstrap times;
single-class resamples are redrawn inside their own sub-seeded RNG, so
results are independent of scheduling.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EvaluationError, ValidationError
from .features import FeatureTable, hstack
from .forest import RfeRanking, fit, predict_proba
from .seeding import subseed

SPLITS_FORMAT = "spectrasep-splits"
SPLITS_VERSION = 1

PREDICTIONS_HEADER = (
    "patient_id", "fold", "repetition", "value_class0", "value_class1", "label",
)


@dataclass(frozen=True)
class SplitPlan:
    seed: int
    task: str
    n_outer: int
    n_inner: int
    assignment: dict  # patient_id -> (outer_fold, inner_slot)

    def patient_ids(self) -> list[str]:
        return list(self.assignment)

    def outer_test(self, k: int) -> list[str]:
        return [p for p, (o, _) in self.assignment.items() if o == k]

    def outer_train(self, k: int) -> list[str]:
        return [p for p, (o, _) in self.assignment.items() if o != k]

    def inner_fold(self, k: int, j: int) -> list[str]:
        return [p for p, (o, i) in self.assignment.items() if o != k and i == j]

    def inner_train(self, k: int, j: int) -> list[str]:
        return [p for p, (o, i) in self.assignment.items() if o != k and i != j]

    def to_json(self) -> str:
        doc = {
            "format": SPLITS_FORMAT,
            "version": SPLITS_VERSION,
            "seed": self.seed,
            "task": self.task,
            "n_outer": self.n_outer,
            "n_inner": self.n_inner,
            "assignment": {p: list(oi) for p, oi in self.assignment.items()},
        }
        return json.dumps(doc, sort_keys=True, indent=2)

    @staticmethod
    def from_json(text: str) -> "SplitPlan":
        doc = json.loads(text)
        if doc.get("format") != SPLITS_FORMAT:
            raise ValidationError(f"not a split plan: format {doc.get('format')!r}")
        return SplitPlan(
            seed=int(doc["seed"]),
            task=doc["task"],
            n_outer=int(doc["n_outer"]),
            n_inner=int(doc["n_inner"]),
            assignment={p: tuple(oi) for p, oi in doc["assignment"].items()},
        )


def _stratified_slots(
    ids_by_class: dict, n_folds: int, rng: np.random.Generator
) -> dict:
    """Assign each id a fold slot, per-class counts within 1 of the ideal.

    Per class, every fold gets floor(n_c / n_folds) ids and the remainder
    goes to the folds with the smallest running totals, so overall fold
    sizes also differ by at most one.
    """
    totals = np.zeros(n_folds, dtype=int)
    assignment = {}
    for label in sorted(ids_by_class, key=lambda c: (-len(ids_by_class[c]), str(c))):
        ids = list(ids_by_class[label])
        rng.shuffle(ids)
        base, rem = divmod(len(ids), n_folds)
        tie_break = rng.permutation(n_folds)
        order = sorted(range(n_folds), key=lambda f: (totals[f], tie_break[f]))
        quotas = np.full(n_folds, base, dtype=int)
        for fold in order[:rem]:
            quotas[fold] += 1
        pos = 0
        for fold in range(n_folds):
            for pid in ids[pos : pos + quotas[fold]]:
                assignment[pid] = fold
            pos += quotas[fold]
        totals += quotas
    return assignment


def make_nested_splits(
    patient_ids: list[str],
    labels: list[int] | np.ndarray,
    task: str,
    seed: int,
    n_outer: int = 5,
    n_inner: int = 5,
) -> SplitPlan:
    """Stratified patient-level 5x5 plan, deterministic given the seed."""
    labels = np.asarray(labels)
    if len(patient_ids) != labels.shape[0]:
        raise ValidationError("patient_ids and labels must align")
    by_class: dict = defaultdict(list)
    for pid, label in zip(patient_ids, labels.tolist()):
        by_class[label].append(pid)
    if len(by_class) != 2:
        raise EvaluationError(f"expected binary labels, got classes {sorted(by_class)}")
    for label, ids in by_class.items():
        if len(ids) < n_outer:
            raise EvaluationError(
                f"class {label!r} has {len(ids)} patients, need at least {n_outer}"
            )
    rng = np.random.default_rng(subseed(seed, "outer", task))
    outer = _stratified_slots(by_class, n_outer, rng)
    assignment = {}
    for k in range(n_outer):
        members = {
            label: [p for p in ids if outer[p] == k] for label, ids in by_class.items()
        }
        members = {label: ids for label, ids in members.items() if ids}
        inner_rng = np.random.default_rng(subseed(seed, "inner", task, k))
        inner = _stratified_slots(members, n_inner, inner_rng)
        for pid, slot in inner.items():
            assignment[pid] = (k, slot)
    return SplitPlan(
        seed=int(seed), task=task, n_outer=n_outer, n_inner=n_inner,
        assignment=dict(sorted(assignment.items())),
    )


@dataclass(frozen=True)
class PredictionRow:
    patient_id: str
    fold: int
    repetition: int
    values: tuple[float, ...]
    label: int


@dataclass
class PredictionSet:
    rows: list[PredictionRow] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)


def write_predictions_csv(pset: PredictionSet, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTIONS_HEADER)
        for r in pset.rows:
            if len(r.values) != 2:
                raise ValidationError("predictions.csv carries exactly two classes")
            writer.writerow(
                [r.patient_id, r.fold, r.repetition,
                 repr(float(r.values[0])), repr(float(r.values[1])), r.label]
            )


def read_predictions_csv(path: str | Path) -> PredictionSet:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != PREDICTIONS_HEADER:
            raise ValidationError(
                f"{path}: header must be {','.join(PREDICTIONS_HEADER)}"
            )
        for i, row in enumerate(reader, start=2):
            if len(row) != len(PREDICTIONS_HEADER):
                raise ValidationError(f"{path} row {i}: wrong cell count")
            try:
                rows.append(
                    PredictionRow(
                        patient_id=row[0], fold=int(row[1]), repetition=int(row[2]),
                        values=(float(row[3]), float(row[4])), label=int(row[5]),
                    )
                )
            except ValueError as exc:
                raise ValidationError(f"{path} row {i}: {exc}") from exc
    return PredictionSet(rows=rows)


def ensemble(pset: PredictionSet) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Average decision values per patient across all member rows."""
    if not pset.rows:
        raise EvaluationError("prediction set is empty")
    arity = {len(r.values) for r in pset.rows}
    if len(arity) != 1:
        raise EvaluationError(f"inconsistent class arity across rows: {sorted(arity)}")
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    labels: dict[str, int] = {}
    order: list[str] = []
    for r in pset.rows:
        if r.patient_id not in sums:
            order.append(r.patient_id)
            sums[r.patient_id] = np.zeros(len(r.values))
            counts[r.patient_id] = 0
            labels[r.patient_id] = r.label
        elif labels[r.patient_id] != r.label:
            raise EvaluationError(f"conflicting labels for patient {r.patient_id}")
        sums[r.patient_id] += np.asarray(r.values)
        counts[r.patient_id] += 1
    values = np.stack([sums[p] / counts[p] for p in order])
    y = np.asarray([labels[p] for p in order], dtype=int)
    return order, values, y


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.shape[0])
    sorted_vals = values[order]
    i = 0
    while i < sorted_vals.shape[0]:
        j = i
        while j + 1 < sorted_vals.shape[0] and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc_score(values: np.ndarray, labels: np.ndarray) -> float:
    """P(value_pos > value_neg) + 0.5 P(tie), via midranks."""
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    n_pos = int(labels.sum())
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("AUROC needs both classes present")
    ranks = _midranks(values)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_auroc(values, labels) -> tuple[np.ndarray, float]:
    """ROC points (fpr, tpr, threshold) with ties grouped, plus the AUROC.

    The curve starts at (0, 0) with an infinite threshold and ends at
    (1, 1); its trapezoid area equals the Mann-Whitney AUROC.
    """
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    auroc = auroc_score(values, labels)
    n_pos = int(labels.sum())
    n_neg = labels.shape[0] - n_pos
    order = np.argsort(-values, kind="mergesort")
    sorted_vals = values[order]
    sorted_pos = (labels[order] == 1).astype(np.float64)
    boundaries = np.flatnonzero(
        np.concatenate([sorted_vals[1:] != sorted_vals[:-1], [True]])
    )
    tp = np.cumsum(sorted_pos)[boundaries]
    fp = (boundaries + 1) - tp
    points = np.zeros((boundaries.shape[0] + 1, 3))
    points[0] = (0.0, 0.0, math.inf)
    points[1:, 0] = fp / n_neg
    points[1:, 1] = tp / n_pos
    points[1:, 2] = sorted_vals[boundaries]
    return points, auroc


def trapezoid_area(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) * 0.5))


@dataclass(frozen=True)
class BootstrapSummary:
    mean: float
    sd: float
    ci_low: float
    ci_high: float
    n_bootstrap: int
    n_redrawn: int
    samples: np.ndarray | None = field(default=None, compare=False, repr=False)


def bootstrap_ci(
    values, labels, n_bootstrap: int = 1000, seed: int = 0
) -> BootstrapSummary:
    """Percentile bootstrap of the AUROC over patients.

    Exactly n_bootstrap resamples of size len(values) with replacement;
    a resample holding a single class is redrawn within its own RNG and
    counted in n_redrawn.
    """
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if values.shape[0] != labels.shape[0]:
        raise ValidationError("values and labels must align")
    auroc_score(values, labels)  # raises when a class is absent
    n = values.shape[0]
    aurocs = np.empty(n_bootstrap)
    redrawn = 0
    for b in range(n_bootstrap):
        rng = np.random.default_rng(subseed(seed, "bootstrap", b))
        while True:
            idx = rng.integers(0, n, n)
            y = labels[idx]
            if 0 < y.sum() < n:
                break
            redrawn += 1
        aurocs[b] = auroc_score(values[idx], y)
    return BootstrapSummary(
        mean=float(aurocs.mean()),
        sd=float(aurocs.std(ddof=1)),
        ci_low=float(np.percentile(aurocs, 2.5)),
        ci_high=float(np.percentile(aurocs, 97.5)),
        n_bootstrap=n_bootstrap,
        n_redrawn=redrawn,
        samples=aurocs,
    )


@dataclass(frozen=True)
class EvaluationReport:
    task: str
    model_name: str
    n_patients: int
    n_positive: int
    auroc: float
    auroc_mean: float
    auroc_sd: float
    ci_low: float
    ci_high: float
    n_bootstrap: int
    n_redrawn: int
    per_fold_auroc: tuple[float, ...] | None
    roc_points: np.ndarray
    seed: int
    bootstrap_unit: str = "patient"
    bootstrap_samples: np.ndarray | None = field(default=None, compare=False, repr=False)

    def to_json(self) -> str:
        doc = {
            "task": self.task,
            "model_name": self.model_name,
            "n_patients": self.n_patients,
            "n_positive": self.n_positive,
            "auroc": self.auroc,
            "auroc_mean": self.auroc_mean,
            "auroc_sd": self.auroc_sd,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "n_bootstrap": self.n_bootstrap,
            "n_redrawn": self.n_redrawn,
            "per_fold_auroc": list(self.per_fold_auroc) if self.per_fold_auroc else None,
            "roc_points": [[x, y, t if math.isfinite(t) else None] for x, y, t in self.roc_points],
            "seed": self.seed,
            "bootstrap_unit": self.bootstrap_unit,
        }
        return json.dumps(doc, sort_keys=True, indent=2)


def evaluate_prediction_set(
    pset: PredictionSet,
    task: str,
    model_name: str,
    seed: int,
    n_bootstrap: int = 1000,
    plan: SplitPlan | None = None,
) -> EvaluationReport:
    """Ensemble a prediction set and compute ROC, AUROC, and bootstrap CI."""
    ids, values, y = ensemble(pset)
    decision = values[:, 1]
    points, auroc = roc_auroc(decision, y)
    boot = bootstrap_ci(decision, y, n_bootstrap=n_bootstrap, seed=seed)
    per_fold = None
    if plan is not None:
        index = {pid: i for i, pid in enumerate(ids)}
        per_fold_values = []
        for k in range(plan.n_outer):
            fold_ids = [p for p in plan.outer_test(k) if p in index]
            if not fold_ids:
                continue
            sel = [index[p] for p in fold_ids]
            per_fold_values.append(auroc_score(decision[sel], y[sel]))
        per_fold = tuple(per_fold_values)
    return EvaluationReport(
        task=task,
        model_name=model_name,
        n_patients=len(ids),
        n_positive=int(y.sum()),
        auroc=auroc,
        auroc_mean=boot.mean,
        auroc_sd=boot.sd,
        ci_low=boot.ci_low,
        ci_high=boot.ci_high,
        n_bootstrap=boot.n_bootstrap,
        n_redrawn=boot.n_redrawn,
        per_fold_auroc=per_fold,
        roc_points=points,
        seed=int(seed),
        bootstrap_samples=boot.samples,
    )


def run_nested_evaluation(
    features: FeatureTable,
    labels: dict[str, int],
    plan: SplitPlan,
    seed: int,
    n_trees: int = 100,
    repetitions: int = 3,
    n_jobs: int = 1,
    feature_subsets: dict[int, list[str]] | None = None,
) -> PredictionSet:
    """Train forest members per (outer, inner, repetition) and score test folds.

    feature_subsets optionally restricts the feature columns per outer
    fold (used by the sequential experiment, where RFE picks different
    top features in each fold). Training rows never overlap the fold's
    test patients.
    """
    missing = [p for p in plan.patient_ids() if p not in labels]
    if missing:
        raise EvaluationError(f"labels missing for patient(s) {missing[:5]}")
    pset = PredictionSet()
    for k in range(plan.n_outer):
        fold_features = features
        if feature_subsets is not None:
            fold_features = features.select(feature_subsets[k])
        test_ids = sorted(plan.outer_test(k))
        X_test = fold_features.rows(test_ids).values
        overlap = set(test_ids) & set(plan.outer_train(k))
        if overlap:
            raise EvaluationError(f"fold {k}: train/test overlap {sorted(overlap)[:5]}")
        for j in range(plan.n_inner):
            train_ids = sorted(plan.inner_train(k, j))
            X_train = fold_features.rows(train_ids).values
            y_train = np.asarray([labels[p] for p in train_ids], dtype=int)
            for r in range(repetitions):
                model = fit(
                    X_train, y_train, seed=subseed(seed, "member", k, j, r),
                    n_trees=n_trees, n_jobs=n_jobs,
                )
                proba = predict_proba(model, X_test)
                order = list(model.classes).index(1)
                for i, pid in enumerate(test_ids):
                    p1 = float(proba[i, order])
                    pset.rows.append(
                        PredictionRow(
                            patient_id=pid, fold=j, repetition=r,
                            values=(1.0 - p1, p1), label=labels[pid],
                        )
                    )
    return pset


def sequential_feature_experiment(
    hsi_features: FeatureTable,
    clinical_features: FeatureTable,
    rankings: dict[int, RfeRanking],
    labels: dict[str, int],
    plan: SplitPlan,
    seed: int,
    top_counts: tuple[int | None, ...] = (1, 2, 3, None),
    n_trees: int = 100,
    repetitions: int = 3,
    n_bootstrap: int = 1000,
    n_jobs: int = 1,
    task: str = "sepsis",
    model_prefix: str = "hsi_plus_clinical",
) -> list[tuple[str, EvaluationReport, PredictionSet]]:
    """Evaluate models that add the per-fold top-k clinical features to HSI.

    top_counts of None means the full clinical feature set; k=0 degrades
    to the HSI-only model. Rankings come from RFE per outer fold over
    exactly the columns of clinical_features.
    """
    for k in range(plan.n_outer):
        if k not in rankings:
            raise EvaluationError(f"no RFE ranking for outer fold {k}")
        if len(rankings[k].elimination_order) != clinical_features.n_features:
            raise EvaluationError(
                f"fold {k}: ranking covers {len(rankings[k].elimination_order)} features, "
                f"clinical table has {clinical_features.n_features}"
            )
    combined = hstack(hsi_features, clinical_features)
    out = []
    for top in top_counts:
        subsets = {}
        for k in range(plan.n_outer):
            if top is None:
                picked = list(clinical_features.names)
            else:
                picked = [clinical_features.names[i] for i in rankings[k].top(top)]
            subsets[k] = list(hsi_features.names) + picked
        name = f"{model_prefix}_top{'all' if top is None else top}"
        pset = run_nested_evaluation(
            combined, labels, plan, seed=subseed(seed, name),
            n_trees=n_trees, repetitions=repetitions, n_jobs=n_jobs,
            feature_subsets=subsets,
        )
        report = evaluate_prediction_set(
            pset, task=task, model_name=name, seed=subseed(seed, name, "boot"),
            n_bootstrap=n_bootstrap, plan=plan,
        )
        out.append((name, report, pset))
    return out


def write_roc_csv(points: np.ndarray, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fpr", "tpr", "threshold"])
        for x, y, t in points:
            writer.writerow([repr(float(x)), repr(float(y)),
                             "inf" if math.isinf(t) else repr(float(t))])
