import csv
import hashlib
import json
from pathlib import Path

import pytest

from spectrasep.cli import main


def run(argv):
    return main([str(a) for a in argv])


def digest_without_manifest(root: Path) -> dict:
    """Manifest timings are the only bytes allowed to differ across runs."""
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name != "manifest.json"
    }


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_cohort")
    assert run(["synth", "--n", 30, "--width", 40, "--height", 40,
                "--seed", 7, "--out", out]) == 0
    return out


@pytest.fixture(scope="module")
def hsi_features(cohort, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_hsi")
    assert run([
        "features", "--kind", "hsi", "--cubes", cohort / "cubes",
        "--white", cohort / "refs/white.spec", "--dark", cohort / "refs/dark.spec",
        "--annotations", cohort / "annotations.json", "--seed", 7, "--out", out,
    ]) == 0
    return out / "features.csv"


class TestSmoke:
    def test_synth_then_evaluate_emits_report(self, cohort, hsi_features, tmp_path):
        out = tmp_path / "eval"
        assert run([
            "evaluate", "--task", "sepsis", "--features", hsi_features,
            "--labels", cohort / "labels.csv", "--seed", 7, "--out", out,
            "--trees", 15, "--repetitions", 1, "--bootstrap", 50,
        ]) == 0
        report = json.loads((out / "report.json").read_text())
        assert "auroc_mean" in report
        assert report["n_bootstrap"] == 50
        assert (out / "predictions.csv").exists()
        assert (out / "roc.csv").exists()
        assert (out / "splits.json").exists()
        assert (out / "manifest.json").exists()

    def test_stats_emits_four_welch_rows(self, cohort, hsi_features, tmp_path):
        out = tmp_path / "stats"
        assert run([
            "stats", "--features", hsi_features, "--labels", cohort / "labels.csv",
            "--grouping", "sepsis", "--seed", 7, "--out", out,
        ]) == 0
        doc = json.loads((out / "stats.json").read_text())
        assert len(doc["tests"]) == 4
        assert doc["alpha_per_test"] == 0.0125
        with open(out / "boxplot.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 8  # 4 indices x 2 groups

    def test_scores_subcommand(self, cohort, tmp_path):
        out = tmp_path / "scores"
        assert run([
            "scores", "--clinical", cohort / "clinical.csv",
            "--labels", cohort / "labels.csv", "--table", "all",
            "--biomarker", "lactate", "--seed", 7, "--out", out,
        ]) == 0
        with open(out / "scores.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        names = {r["score_name"] for r in rows}
        assert names == {
            "qsofa", "sirs", "news", "sofa_modified", "apache2_modified",
            "vis", "lactate",
        }

    def test_score_mode_evaluate(self, cohort, tmp_path):
        scores_out = tmp_path / "s"
        assert run([
            "scores", "--clinical", cohort / "clinical.csv", "--table", "qsofa",
            "--seed", 7, "--out", scores_out,
        ]) == 0
        out = tmp_path / "eval_score"
        assert run([
            "evaluate", "--mode", "score", "--task", "sepsis",
            "--scores", scores_out / "scores.csv", "--score-name", "qsofa",
            "--labels", cohort / "labels.csv", "--bootstrap", 50,
            "--seed", 7, "--out", out,
        ]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["model_name"] == "qsofa"

    def test_sequential_mode(self, cohort, tmp_path):
        import numpy as np

        from spectrasep.features import FeatureTable, write_features_csv

        with open(cohort / "labels.csv", newline="") as fh:
            ids = [r["patient_id"] for r in csv.DictReader(fh)]
        rng = np.random.default_rng(0)
        hsi_csv = tmp_path / "hsi.csv"
        clin_csv = tmp_path / "clin.csv"
        write_features_csv(
            FeatureTable(ids, ["sto2", "twi"], rng.normal(0, 1, (len(ids), 2))),
            hsi_csv,
        )
        write_features_csv(
            FeatureTable(ids, ["lactate", "n1", "n2"], rng.normal(0, 1, (len(ids), 3))),
            clin_csv,
        )
        rfe_out = tmp_path / "rfe"
        assert run([
            "rfe", "--features", clin_csv, "--labels", cohort / "labels.csv",
            "--task", "sepsis", "--trees", 5, "--seed", 9, "--out", rfe_out,
        ]) == 0
        out = tmp_path / "seq"
        assert run([
            "evaluate", "--mode", "sequential", "--task", "sepsis",
            "--features", hsi_csv, "--clinical-features", clin_csv,
            "--labels", cohort / "labels.csv", "--splits", rfe_out / "splits.json",
            "--rfe-file", rfe_out / "rfe.csv", "--trees", 5, "--repetitions", 1,
            "--bootstrap", 20, "--seed", 9, "--out", out,
        ]) == 0
        reports = sorted(out.glob("report_*.json"))
        assert len(reports) == 4
        names = {json.loads(p.read_text())["model_name"] for p in reports}
        assert names == {
            "hsi_plus_clinical_top1", "hsi_plus_clinical_top2",
            "hsi_plus_clinical_top3", "hsi_plus_clinical_topall",
        }

    def test_report_subcommand(self, cohort, tmp_path):
        out = tmp_path / "rep"
        assert run([
            "report", "--clinical", cohort / "clinical.csv",
            "--labels", cohort / "labels.csv", "--seed", 7, "--out", out,
        ]) == 0
        doc = json.loads((out / "descriptive_stats.json").read_text())
        assert doc["n_patients"] == 30
        assert len(doc["parameters"]) == 45

    def test_calibrate_then_indices(self, cohort, tmp_path):
        cal_out = tmp_path / "cal"
        assert run([
            "calibrate", "--cubes", cohort / "cubes",
            "--white", cohort / "refs/white.spec",
            "--dark", cohort / "refs/dark.spec", "--seed", 7, "--out", cal_out,
        ]) == 0
        from spectrasep.cube import load_cube

        calibrated = sorted((cal_out / "calibrated").glob("*.spec"))
        assert len(calibrated) == 30
        assert load_cube(calibrated[0]).calibration_state == "reflectance"
        idx_out = tmp_path / "idx"
        assert run([
            "indices", "--cubes", cal_out / "calibrated",
            "--annotations", cohort / "annotations.json", "--site", "palm",
            "--seed", 7, "--out", idx_out,
        ]) == 0
        with open(idx_out / "indices.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 30
        assert set(rows[0]) == {"patient_id", "sto2", "npi", "thi", "twi"}
        for row in rows:
            for name in ("sto2", "npi", "thi", "twi"):
                assert 0.0 <= float(row[name]) <= 1.0

    def test_train_rf_subcommand(self, cohort, hsi_features, tmp_path):
        out = tmp_path / "rf"
        assert run([
            "train-rf", "--features", hsi_features, "--labels", cohort / "labels.csv",
            "--task", "sepsis", "--trees", 10, "--seed", 7, "--out", out,
        ]) == 0
        from spectrasep.forest import load_model

        model = load_model(out / "model.json")
        assert model.n_trees == 10
        with open(out / "importance.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 104
        total = sum(float(r["importance"]) for r in rows)
        assert abs(total - 1.0) < 1e-9

    def test_preprocess_subcommand(self, cohort, tmp_path):
        out = tmp_path / "prep"
        assert run([
            "preprocess", "--cubes", cohort / "cubes",
            "--white", cohort / "refs/white.spec",
            "--dark", cohort / "refs/dark.spec",
            "--annotations", cohort / "annotations.json", "--site", "palm",
            "--target", 64, "--seed", 7, "--out", out,
        ]) == 0
        tensors = sorted((out / "preprocessed").glob("*_palm.spec"))
        assert len(tensors) == 30
        from spectrasep.cube import load_cube

        sample = load_cube(tensors[0])
        assert sample.values.shape == (100, 64, 64)


class TestContracts:
    def test_missing_input_exits_2(self, tmp_path):
        assert run([
            "evaluate", "--task", "sepsis", "--features", tmp_path / "nope.csv",
            "--labels", tmp_path / "labels.csv", "--out", tmp_path / "o",
        ]) == 2

    def test_unknown_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run(["synth", "--bogus-flag", 1])
        assert exc.value.code == 2

    def test_schema_violation_exits_2(self, cohort, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("patient_id,oops\np1,1\n")
        assert run([
            "stats", "--features", bad, "--labels", cohort / "labels.csv",
            "--out", tmp_path / "o",
        ]) == 2

    def test_unknown_config_section_exits_2(self, cohort, tmp_path):
        config = tmp_path / "config.json"
        config.write_text('{"bogus_section": {}}')
        assert run([
            "synth", "--n", 12, "--out", tmp_path / "o", "--config", config,
        ]) == 2

    def test_manifest_contents(self, cohort):
        manifest = json.loads((cohort / "manifest.json").read_text())
        assert manifest["tool"] == "spectrasep"
        assert manifest["subcommand"] == "synth"
        assert manifest["seed"] == 7
        assert "total" in manifest["timings_s"]
        assert manifest["outputs"]


class TestReproducibility:
    def test_byte_identical_outputs_across_runs_and_jobs(self, cohort, hsi_features,
                                                         tmp_path):
        args = [
            "evaluate", "--task", "sepsis", "--features", hsi_features,
            "--labels", cohort / "labels.csv", "--seed", 13,
            "--trees", 10, "--repetitions", 1, "--bootstrap", 100,
        ]
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert run(args + ["--out", out1, "--jobs", 1]) == 0
        assert run(args + ["--out", out2, "--jobs", 2]) == 0
        assert digest_without_manifest(out1) == digest_without_manifest(out2)

    def test_synth_reproducible_via_cli(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run(["synth", "--n", 12, "--width", 24, "--height", 24,
                        "--seed", 3, "--out", out]) == 0
        assert digest_without_manifest(a) == digest_without_manifest(b)

    def test_config_file_and_env_fallback(self, cohort, tmp_path, monkeypatch):
        config = tmp_path / "config.json"
        config.write_text('{"synth": {"n_patients": 14}}')
        out1 = tmp_path / "c1"
        assert run(["synth", "--seed", 4, "--out", out1, "--config", config]) == 0
        truth = json.loads((out1 / "truth.json").read_text())
        assert truth["n_patients"] == 14
        monkeypatch.setenv("SPECTRASEP_CONFIG", str(config))
        out2 = tmp_path / "c2"
        assert run(["synth", "--seed", 4, "--out", out2]) == 0
        truth2 = json.loads((out2 / "truth.json").read_text())
        assert truth2["n_patients"] == 14
