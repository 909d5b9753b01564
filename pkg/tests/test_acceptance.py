"""Acceptance suite: one test per release criterion, one PASS line each.

Run with `pytest tests/test_acceptance.py -v -s`. Every tolerance is
pinned here; nothing is deferred to later calibration. The end-to-end
criterion builds two full synthetic cohorts (null and planted signal),
so this module takes a few minutes and needs roughly 600 MB of scratch
space.
"""

import csv
import hashlib
import json
import math
import time

import numpy as np
import pytest
from scipy.integrate import quad

from spectrasep.clinical import Cohort, PatientRecord, default_dictionary
from spectrasep.cli import main as cli_main
from spectrasep.cube import (
    RegionAnnotation,
    apply_roi,
    calibrate,
    l1_normalize,
)
from spectrasep.evaluation import (
    auroc_score,
    bootstrap_ci,
    make_nested_splits,
    roc_auroc,
)
from spectrasep.forest import (
    _balanced_weights,
    _best_split,
    feature_importance,
    fit,
    model_to_json,
    predict,
    rfe_rank,
)
from spectrasep.scores import (
    biomarker_results,
    evaluate_score,
    load_score_table,
    score_as_classifier,
    vasoactive_inotropic_score,
)
from spectrasep.seeding import subseed
from spectrasep.stats import bonferroni, t_sf_two_sided, welch_t_test

from conftest import baseline_record_values, make_cube, random_cube
from test_cube import disk_pixel_count
from test_evaluation import pair_counting_auroc
from test_stats import two_sided_p_by_quadrature


def passed(number, text):
    print(f"\n[PASS] criterion {number}: {text}")


def test_criterion_01_l1_normalization():
    started = time.monotonic()
    rng = np.random.default_rng(101)
    for i in range(100):
        channels = int(rng.integers(20, 101))
        height = int(rng.integers(4, 24))
        width = int(rng.integers(4, 24))
        values = rng.random((channels, height, width))
        values[:, 0, 0] = 0.0  # keep one all-zero spectrum in play
        cube = make_cube(values)
        once = l1_normalize(cube)
        sums = once.values.astype(np.float64).sum(axis=0)
        nonzero = sums != 0.0
        assert np.abs(sums[nonzero] - 1.0).max() < 1e-6
        assert np.all(once.values[:, ~nonzero] == 0.0)
        twice = l1_normalize(once)
        assert np.abs(twice.values - once.values).max() < 1e-6
    elapsed = time.monotonic() - started
    assert elapsed < 10.0, f"l1 acceptance took {elapsed:.1f}s"
    passed(1, f"l1 normalization sums, idempotence on 100 cubes in {elapsed:.1f}s")


def test_criterion_02_calibration_identities():
    rng = np.random.default_rng(102)
    white = make_cube(0.7 + 0.3 * rng.random((20, 16, 16)), "raw_counts")
    dark = make_cube(0.05 * rng.random((20, 16, 16)), "raw_counts")
    assert np.abs(calibrate(white, white, dark).values - 1.0).max() < 1e-6
    assert np.abs(calibrate(dark, white, dark).values - 0.0).max() < 1e-6
    mid = make_cube((white.values + dark.values) / 2.0, "raw_counts")
    assert np.abs(calibrate(mid, white, dark).values - 0.5).max() < 1e-6
    passed(2, "calibration identities (white->1, dark->0, midpoint->0.5) at 1e-6")


def test_criterion_03_roi_geometry():
    for radius in (5, 20, 100):
        side = 2 * radius
        cube = make_cube(np.ones((1, 2 * side + 4, 2 * side + 4), dtype=np.float32))
        roi = RegionAnnotation("img", "palm", side + 2, side + 2, radius)
        cropped = apply_roi(cube, roi)
        assert cropped.values.shape[1:] == (side, side)
        got = int(np.count_nonzero(cropped.values[0]))
        assert got == disk_pixel_count(radius), f"radius {radius}"
    passed(3, "ROI nonzero pixels equal the integer disk oracle for r in {5, 20, 100}")


def test_criterion_04_auroc_correctness():
    rng = np.random.default_rng(104)
    checked = 0
    while checked < 50:
        values = np.round(rng.normal(0, 1, 200), 1)
        labels = rng.integers(0, 2, 200)
        if labels.sum() in (0, 200):
            continue
        points, auroc = roc_auroc(values, labels)
        assert abs(auroc - pair_counting_auroc(values, labels)) < 1e-12
        checked += 1
    assert roc_auroc(np.arange(10.0), (np.arange(10) >= 5).astype(int))[1] == 1.0
    assert roc_auroc(np.ones(10), np.arange(10) % 2)[1] == 0.5
    passed(4, "AUROC equals the pair-counting oracle to 1e-12 on 50 fixtures")


def test_criterion_05_bootstrap():
    rng = np.random.default_rng(105)
    values = rng.normal(0, 1, 30)
    labels = rng.integers(0, 2, 30)
    a = bootstrap_ci(values, labels, n_bootstrap=1000, seed=55)
    b = bootstrap_ci(values, labels, n_bootstrap=1000, seed=55)
    assert a.n_bootstrap == 1000 and len(a.samples) == 1000
    assert a == b and np.array_equal(a.samples, b.samples)

    six_values = np.array([0.2, 0.3, 0.4, 0.6, 0.7, 0.8])
    six_labels = np.array([0, 0, 0, 1, 1, 1])
    out = bootstrap_ci(six_values, six_labels, n_bootstrap=1000, seed=56)
    assert out.n_redrawn > 0, "no degenerate resample was redrawn"
    assert len(out.samples) == 1000
    assert np.isfinite(out.samples).all()
    passed(5, f"bootstrap: 1000 resamples, deterministic, {out.n_redrawn} redraws on "
              "the 6-patient cohort")


def test_criterion_06_welch_bonferroni():
    worst = 0.0
    for t in (0.1, 0.5, 1.0, 2.0, 3.5, 5.0, 7.5, 10.0):
        for dof in (2.0, 4.5, 9.0, 25.0, 80.0, 240.0, 500.0):
            worst = max(worst, abs(t_sf_two_sided(t, dof)
                                   - two_sided_p_by_quadrature(t, dof)))
    assert worst < 1e-8
    assert bonferroni(0.05, 4) == 0.0125

    rng = np.random.default_rng(106)
    for _ in range(100):
        a = rng.normal(0, 1, int(rng.integers(3, 50)))
        b = rng.normal(rng.uniform(-1, 1), rng.uniform(0.5, 3), int(rng.integers(3, 50)))
        fwd, rev = welch_t_test(a, b), welch_t_test(b, a)
        assert fwd.t_statistic == pytest.approx(-rev.t_statistic, rel=1e-12)
        assert fwd.p_two_sided == pytest.approx(rev.p_two_sided, rel=1e-12)
        shifted = welch_t_test(a + 2.5, b + 2.5)
        assert shifted.t_statistic == pytest.approx(fwd.t_statistic, rel=1e-9)
        assert shifted.p_two_sided == pytest.approx(fwd.p_two_sided, rel=1e-9)
        scaled = welch_t_test(3.0 * a, 3.0 * b)
        assert scaled.t_statistic == pytest.approx(fwd.t_statistic, rel=1e-9)
        assert scaled.p_two_sided == pytest.approx(fwd.p_two_sided, rel=1e-9)
    passed(6, f"Welch p within {worst:.1e} of quadrature; bonferroni(0.05, 4) = 0.0125; "
              "invariances on 100 pairs")


def test_criterion_07_random_forest():
    rng = np.random.default_rng(107)
    X = rng.random((400, 2))
    y = ((X[:, 0] > 0.5) ^ (X[:, 1] > 0.5)).astype(int)
    model = fit(X, y, seed=77)
    assert model.n_trees == 100
    accuracy = float((predict(model, X) == y).mean())
    assert accuracy >= 0.95

    serial = fit(X, y, seed=78, n_jobs=1)
    parallel = fit(X, y, seed=78, n_jobs=8)
    assert model_to_json(serial) == model_to_json(parallel)

    Xr = rng.normal(0, 1, (90, 6))
    yr = np.array([0] * 60 + [1] * 30)
    weights = _balanced_weights(yr, 2)[yr]
    balanced = _best_split(Xr, yr, weights, 2)
    duplicated = _best_split(
        np.vstack([Xr, Xr[yr == 1]]),
        np.concatenate([yr, np.ones(30, dtype=int)]),
        np.ones(120),
        2,
    )
    assert balanced[0] == duplicated[0]
    assert abs(balanced[1] - duplicated[1]) < 1e-12
    assert abs(balanced[2] / 90 - duplicated[2] / 120) < 1e-9
    passed(7, f"forest: XOR-400 accuracy {accuracy:.3f}, jobs 1 == jobs 8 bitwise, "
              "balanced root split equals duplication at 1e-9")


def test_criterion_08_rfe_planted_features():
    rng = np.random.default_rng(42)
    n, p, n_planted = 160, 20, 5
    X = rng.normal(0, 1, (n, p))
    y = (rng.random(n) < 0.35).astype(int)
    X[y == 1, :n_planted] += 0.9
    ids = [f"p{i}" for i in range(n)]
    plan = make_nested_splits(ids, y, "sepsis", seed=1)
    index_of = {pid: i for i, pid in enumerate(ids)}

    folds_per_outer = {}
    for k in range(5):
        folds = []
        for j in range(5):
            rows = [index_of[pid] for pid in sorted(plan.inner_train(k, j))]
            folds.append((X[rows], y[rows]))
        folds_per_outer[k] = folds

    hits = 0
    for k in range(5):
        ranking = rfe_rank(folds_per_outer[k], seed=subseed(1, "rfe", k),
                           n_trees=100, n_jobs=2)
        if set(ranking.elimination_order[-n_planted:]) == set(range(n_planted)):
            hits += 1
    assert hits >= 4, f"planted features ranked last in only {hits}/5 folds"

    # averaging check: the first elimination must equal the argmin of
    # importances recomputed independently per fold and averaged
    folds = folds_per_outer[0]
    mean_importance = np.zeros(p)
    for j, (Xf, yf) in enumerate(folds):
        model = fit(Xf, yf, seed=subseed(subseed(1, "rfe", 0), 0, j), n_trees=100)
        mean_importance += feature_importance(model)
    mean_importance /= len(folds)
    averaged = rfe_rank(folds, seed=subseed(1, "rfe", 0), n_trees=100, n_jobs=2)
    assert averaged.elimination_order[0] == int(np.argmin(mean_importance))

    # the sequential single-fold oracle must differ somewhere: averaging
    # across folds is not the same procedure as following one fold
    single = rfe_rank(folds[:1], seed=subseed(1, "rfe", 0), n_trees=100, n_jobs=2)
    assert single.elimination_order != averaged.elimination_order
    passed(8, f"RFE: planted features among the last five eliminated in {hits}/5 folds; "
              "fold-averaged importances verified; single-fold oracle differs")


def test_criterion_09_nested_cv_437():
    ids = [f"p{i:04d}" for i in range(437)]
    labels = np.array([1] * 129 + [0] * 308)
    lookup = dict(zip(ids, labels))
    plan = make_nested_splits(ids, labels, "sepsis", seed=9)
    sizes = sorted(len(plan.outer_test(k)) for k in range(5))
    assert sizes == [87, 87, 87, 88, 88]
    for k in range(5):
        test_ids = set(plan.outer_test(k))
        assert not test_ids & set(plan.outer_train(k))
        positives = sum(lookup[pid] for pid in test_ids)
        assert abs(positives - 129 / 5) <= 1.0
    passed(9, "437-patient plan: folds {87,87,87,88,88}, zero overlap, "
              "stratification within 1 of 129/437")


@pytest.fixture(scope="module")
def end_to_end(tmp_path_factory):
    """Full CLI pipeline on a null cohort and a planted-signal cohort."""
    root = tmp_path_factory.mktemp("acceptance_e2e")
    started = time.monotonic()
    runs = {}
    for label, effect in (("null", "0.0"), ("signal", "1.0")):
        base = root / label
        assert cli_main([
            "synth", "--n", "160", "--width", "64", "--height", "64",
            "--effect-scale", effect, "--clinical-effect-scale", effect,
            "--seed", "11", "--out", str(base / "cohort"),
        ]) == 0
        assert cli_main([
            "features", "--kind", "hsi",
            "--cubes", str(base / "cohort/cubes"),
            "--white", str(base / "cohort/refs/white.spec"),
            "--dark", str(base / "cohort/refs/dark.spec"),
            "--annotations", str(base / "cohort/annotations.json"),
            "--seed", "11", "--out", str(base / "hsi"),
        ]) == 0
        assert cli_main([
            "evaluate", "--task", "sepsis",
            "--features", str(base / "hsi/features.csv"),
            "--labels", str(base / "cohort/labels.csv"),
            "--seed", "11", "--out", str(base / "eval"),
        ]) == 0
        assert cli_main([
            "stats", "--features", str(base / "hsi/features.csv"),
            "--labels", str(base / "cohort/labels.csv"),
            "--grouping", "sepsis", "--seed", "11", "--out", str(base / "stats"),
        ]) == 0
        runs[label] = base
    return runs, time.monotonic() - started


def test_criterion_10_null_and_signal_experiment(end_to_end):
    runs, elapsed = end_to_end
    null_report = json.loads((runs["null"] / "eval/report.json").read_text())
    assert abs(null_report["auroc"] - 0.5) <= 0.05, null_report["auroc"]

    signal_report = json.loads((runs["signal"] / "eval/report.json").read_text())
    assert signal_report["auroc"] >= 0.90, signal_report["auroc"]

    stats_doc = json.loads((runs["signal"] / "stats/stats.json").read_text())
    tests = {t["index"]: t for t in stats_doc["tests"]}
    planted = json.loads(
        (runs["signal"] / "cohort/truth.json").read_text()
    )["planted_directions"]
    for index, direction in planted.items():
        assert tests[index]["significant"], f"{index} not significant"
        assert tests[index]["p_two_sided"] < 0.0125
        assert tests[index]["direction_in_positive_group"] == direction, index
    assert elapsed < 600.0, f"end-to-end took {elapsed:.0f}s"
    passed(10, f"null AUROC {null_report['auroc']:.3f}, signal AUROC "
               f"{signal_report['auroc']:.3f}, planted indices significant with "
               f"planted directions, {elapsed:.0f}s total")


def test_criterion_11_score_engine():
    values = baseline_record_values()
    calm = PatientRecord("calm", "no_sepsis", "survived", dict(values))
    qsofa = load_score_table("qsofa")
    assert evaluate_score(calm, qsofa).value == 0

    sick = PatientRecord(
        "sick", "sepsis", "survived",
        {**values, "respiratory_rate": 30.0, "systolic_bp": 84.0, "gcs": 10.0},
    )
    assert evaluate_score(sick, qsofa).value == 3

    assert vasoactive_inotropic_score(calm).value == 0.0
    shock = PatientRecord(
        "shock", "sepsis", "died",
        {**values, "noradrenaline_dose": 0.2, "adrenaline_dose": 0.05,
         "dopamine_dose": 4.0, "dobutamine_dose": 5.0,
         "vasopressin_dose": 0.0004, "milrinone_dose": 0.5},
    )
    assert vasoactive_inotropic_score(shock).value == pytest.approx(
        100 * 0.2 + 100 * 0.05 + 4.0 + 5.0 + 10000 * 0.0004 + 10 * 0.5
    )

    sirs_case = PatientRecord(
        "sirs", "sepsis", "survived",
        {**values, "temperature": 39.0, "heart_rate": 120.0,
         "respiratory_rate": 24.0, "pco2": 30.0, "leukocytes": 15.0},
    )
    # four criteria, respiration counted once despite two fired rules
    assert evaluate_score(sirs_case, load_score_table("sirs")).value == 4

    sofa_case = PatientRecord(
        "sofa", "sepsis", "died",
        {**values, "po2": 65.0, "fio2": 0.6, "platelets": 84.0, "bilirubin": 2.4,
         "noradrenaline_dose": 0.25, "gcs": 9.0, "creatinine": 2.1},
    )
    # hand-scored: resp 3 (ratio 108.3), coag 2, liver 2, cardio 4, cns 3, renal 2
    assert evaluate_score(sofa_case, load_score_table("sofa_modified")).value == 16

    rng = np.random.default_rng(111)
    dictionary = default_dictionary()
    records, labels = [], {}
    for i in range(12):
        v = dict(values)
        v["crp"] = float(rng.uniform(1.0, 400.0))
        records.append(PatientRecord(f"p{i}", "sepsis", "survived", v))
        labels[f"p{i}"] = int(i % 2)
    cohort = Cohort(records=tuple(records), dictionary=dictionary)
    passthrough, _, ids = score_as_classifier(biomarker_results(cohort, "crp"), labels)
    for pid, value in zip(ids, passthrough):
        original = next(r.values["crp"] for r in records if r.patient_id == pid)
        assert value == original  # bit-for-bit
    passed(11, "qSOFA 0/3, VIS fixtures, SIRS and modified-SOFA hand scores, "
               "biomarker passthrough bit-for-bit")


def test_criterion_12_reproducibility(end_to_end, tmp_path):
    runs, _ = end_to_end
    base = runs["signal"]
    reference = (base / "eval/report.json").read_bytes()
    for jobs in ("1", "2"):
        out = tmp_path / f"rerun_{jobs}"
        assert cli_main([
            "evaluate", "--task", "sepsis",
            "--features", str(base / "hsi/features.csv"),
            "--labels", str(base / "cohort/labels.csv"),
            "--seed", "11", "--jobs", jobs, "--out", str(out),
        ]) == 0
        rerun = (out / "report.json").read_bytes()
        assert hashlib.sha256(rerun).hexdigest() == hashlib.sha256(reference).hexdigest()
    passed(12, "report.json byte-identical across reruns and jobs 1 vs 2")
