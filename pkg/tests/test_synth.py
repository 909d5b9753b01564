import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from spectrasep.clinical import ingest_csv
from spectrasep.cube import calibrate, load_annotations, load_cube, roi_mask
from spectrasep.errors import ValidationError
from spectrasep.indices import FeatureConfig, default_index_specs, extract_feature_vector
from spectrasep.synth import SynthConfig, generate


def tree_digest(root: Path) -> dict:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


@pytest.fixture(scope="module")
def small_cohort(tmp_path_factory):
    out = tmp_path_factory.mktemp("cohort")
    config = SynthConfig(n_patients=16, width=48, height=40, seed=31)
    return config, generate(config, out)


class TestGenerate:
    def test_same_seed_bit_identical_trees(self, tmp_path):
        config = SynthConfig(n_patients=10, width=32, height=32, seed=5)
        a = generate(config, tmp_path / "a")
        b = generate(config, tmp_path / "b")
        assert tree_digest(a.root) == tree_digest(b.root)

    def test_different_seed_differs(self, tmp_path):
        a = generate(SynthConfig(n_patients=10, width=32, height=32, seed=5),
                     tmp_path / "a")
        b = generate(SynthConfig(n_patients=10, width=32, height=32, seed=6),
                     tmp_path / "b")
        assert tree_digest(a.root) != tree_digest(b.root)

    def test_outputs_pass_all_ingestion_validators(self, small_cohort):
        config, cohort = small_cohort
        white = load_cube(cohort.white_path)
        dark = load_cube(cohort.dark_path)
        for path in cohort.cube_paths.values():
            raw = load_cube(path)
            assert raw.values.shape == (100, config.height, config.width)
            reflectance = calibrate(raw, white, dark)
            reflectance.validate()
        annotations = load_annotations(cohort.annotations_path)
        assert len(annotations) == 2 * config.n_patients
        clinical = ingest_csv(cohort.clinical_path, cohort.labels_path)
        assert len(clinical) == config.n_patients

    def test_annotations_fit_inside_image(self, small_cohort):
        config, cohort = small_cohort
        for ann in load_annotations(cohort.annotations_path):
            assert 0 <= ann.center_x < config.width
            assert 0 <= ann.center_y < config.height
            assert ann.radius >= 4
            side = 2 * ann.radius
            roi_mask(side)  # valid geometry

    def test_truth_manifest_schema(self, small_cohort):
        config, cohort = small_cohort
        truth = json.loads(cohort.truth_path.read_text())
        assert truth["n_patients"] == config.n_patients
        assert truth["planted_directions"] == {
            "sto2": "lower", "thi": "higher", "twi": "higher"
        }
        assert len(truth["positive_patients"]) == truth["n_positive"]

    def test_prevalence_respected(self, tmp_path):
        cohort = generate(
            SynthConfig(n_patients=40, width=24, height=24, seed=7,
                        prevalence_sepsis=0.25),
            tmp_path / "c",
        )
        truth = json.loads(cohort.truth_path.read_text())
        assert truth["n_positive"] == 10

    def test_impossible_config_rejected(self):
        with pytest.raises(ValidationError):
            SynthConfig(n_patients=4)
        with pytest.raises(ValidationError):
            SynthConfig(prevalence_sepsis=0.0)
        with pytest.raises(ValidationError):
            SynthConfig(width=8, height=8)


class TestPlantedDirections:
    def test_group_means_move_in_configured_direction(self, tmp_path):
        config = SynthConfig(n_patients=30, width=40, height=40, seed=8,
                             effect_scale=1.0)
        cohort = generate(config, tmp_path / "planted")
        truth = json.loads(cohort.truth_path.read_text())
        positives = set(truth["positive_patients"])
        white = load_cube(cohort.white_path)
        dark = load_cube(cohort.dark_path)
        annotations = {
            a.image_id: a
            for a in load_annotations(cohort.annotations_path)
            if a.site == "palm"
        }
        fc = FeatureConfig(indices=default_index_specs(), include_spectrum=False)
        rows, is_pos = [], []
        for pid, path in cohort.cube_paths.items():
            reflectance = calibrate(load_cube(path), white, dark)
            rows.append(extract_feature_vector(reflectance, annotations[pid], fc).values)
            is_pos.append(pid in positives)
        M = np.asarray(rows)
        is_pos = np.asarray(is_pos)
        names = [s.name for s in fc.indices]
        for index, direction in truth["planted_directions"].items():
            i = names.index(index)
            delta = M[is_pos, i].mean() - M[~is_pos, i].mean()
            assert (delta < 0) == (direction == "lower"), index

    def test_zero_scale_plants_nothing(self, tmp_path):
        config = SynthConfig(n_patients=12, width=24, height=24, seed=9,
                             effect_scale=0.0, clinical_effect_scale=0.0)
        cohort = generate(config, tmp_path / "null")
        truth = json.loads(cohort.truth_path.read_text())
        assert truth["effect_scale"] == 0.0
