"""Synthetic cohorts with planted class effects.

Skin-like spectra are built in absorbance space from a handful of
Gaussian chromophore bumps with per-patient amplitudes; the positive
class receives extra band-localized absorbance bumps that push each
tissue index in a configured direction (oxygenation down via the
deoxy-haemoglobin band in its ratio denominator, haemoglobin and water
indices up via their numerator bands). Everything derives from
per-patient sub-seeds, so the same seed reproduces the same file tree
byte for byte. No claim of biophysical realism is made; the point is a
cohort on which every downstream pipeline claim is testable.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clinical import default_dictionary
from .cube import (
    FINGER_RADIUS,
    HSI_CHANNELS,
    HSI_WAVELENGTH_START,
    HSI_WAVELENGTH_STEP,
    PALM_RADIUS,
    STATE_RAW,
    RegionAnnotation,
    SpectralCube,
    save_annotations,
    save_cube,
)
from .errors import ValidationError
from .seeding import subseed


@dataclass(frozen=True)
class PlantedIndexEffect:
    """One absorbance bump added to positive-class spectra."""

    index: str
    center_nm: float
    sigma_nm: float
    delta: float
    expected_direction: str  # index direction in the positive class


# Deltas are calibrated so each targeted index moves by roughly three
# between-patient standard deviations at effect_scale 1.
DEFAULT_INDEX_EFFECTS = (
    # Oxygenation falls two ways: a dip in its numerator band and a raised
    # deoxy-haemoglobin band in its ratio denominator.
    PlantedIndexEffect("sto2", center_nm=580.0, sigma_nm=8.0, delta=-0.12,
                       expected_direction="lower"),
    PlantedIndexEffect("sto2", center_nm=760.0, sigma_nm=15.0, delta=0.12,
                       expected_direction="lower"),
    PlantedIndexEffect("thi", center_nm=545.0, sigma_nm=12.0, delta=0.33,
                       expected_direction="higher"),
    PlantedIndexEffect("twi", center_nm=967.0, sigma_nm=8.0, delta=0.18,
                       expected_direction="higher"),
)

DEFAULT_CLINICAL_EFFECTS = {
    "noradrenaline_dose": 0.12,
    "lactate": 1.6,
    "map": -8.0,
    "gcs": -2.0,
    "leukocytes": 3.5,
    "crp": 80.0,
    "pct": 6.0,
}


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int = 160
    prevalence_sepsis: float = 0.30
    mortality_given_sepsis: float = 0.27
    mortality_given_no_sepsis: float = 0.06
    lost_to_followup_fraction: float = 0.05
    unsure_fraction: float = 0.0
    width: int = 64
    height: int = 64
    channels: int = HSI_CHANNELS
    effect_scale: float = 1.0
    index_effects: tuple[PlantedIndexEffect, ...] = DEFAULT_INDEX_EFFECTS
    clinical_effect_scale: float = 1.0
    clinical_effects: dict = field(default_factory=lambda: dict(DEFAULT_CLINICAL_EFFECTS))
    missingness: float = 0.016
    palm_radius: int = PALM_RADIUS
    finger_radius: int = FINGER_RADIUS
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.prevalence_sepsis < 1.0:
            raise ValidationError(
                f"prevalence must be in (0, 1), got {self.prevalence_sepsis}"
            )
        if self.n_patients < 10:
            raise ValidationError("need at least 10 patients for a usable cohort")
        if round(self.n_patients * self.prevalence_sepsis) < 1:
            raise ValidationError("prevalence too low for this cohort size")
        if min(self.width, self.height) < 16:
            raise ValidationError("images must be at least 16x16")


@dataclass(frozen=True)
class SynthCohort:
    root: Path
    cube_paths: dict[str, Path]
    white_path: Path
    dark_path: Path
    annotations_path: Path
    clinical_path: Path
    labels_path: Path
    truth_path: Path


def _fit_radius(requested: int, width: int, height: int) -> int:
    return max(4, min(requested, min(width, height) // 2 - 2))


def _gaussian(wavelengths: np.ndarray, center: float, sigma: float) -> np.ndarray:
    return np.exp(-0.5 * ((wavelengths - center) / sigma) ** 2)


_BASE_BUMPS = (
    # (center nm, sigma nm, mean amplitude, amplitude sd)
    (545.0, 16.0, 0.35, 0.05),
    (575.0, 12.0, 0.22, 0.04),
    (760.0, 20.0, 0.15, 0.03),
    (970.0, 26.0, 0.30, 0.05),
)


def _patient_absorbance(rng, wavelengths, positive, config) -> np.ndarray:
    a = rng.normal(0.45, 0.04) + rng.normal(-0.15, 0.05) * (wavelengths - 750.0) / 500.0
    for center, sigma, amp_mean, amp_sd in _BASE_BUMPS:
        a = a + rng.normal(amp_mean, amp_sd) * _gaussian(wavelengths, center, sigma)
    if positive:
        for effect in config.index_effects:
            a = a + config.effect_scale * effect.delta * _gaussian(
                wavelengths, effect.center_nm, effect.sigma_nm
            )
    return np.maximum(a, 0.05)


def _reference_cubes(config, rng) -> tuple[np.ndarray, np.ndarray]:
    h, w, c = config.height, config.width, config.channels
    yy, xx = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    gain = 0.85 + 0.05 * (rng.uniform(-1, 1) * xx + rng.uniform(-1, 1) * yy)
    spectral = 1.0 + 0.1 * np.sin(np.linspace(0, 3.0, c))
    white = spectral[:, None, None] * gain[None, :, :]
    dark = 0.04 + 0.01 * (0.5 + 0.5 * yy)[None, :, :] * np.ones((c, 1, 1))
    return white.astype(np.float32), dark.astype(np.float32)


def _patient_cube(rng, config, wavelengths, positive, white, dark) -> np.ndarray:
    absorb = _patient_absorbance(rng, wavelengths, positive, config)
    noise = rng.normal(0.0, 0.01, size=(config.channels, config.height, config.width))
    reflectance = np.power(10.0, -(absorb[:, None, None] + noise))
    # Per-pixel illumination factor; l1 normalization must cancel it.
    pixel_gain = np.exp(rng.normal(0.0, 0.05, size=(config.height, config.width)))
    reflectance = reflectance * pixel_gain[None, :, :]
    raw = dark + reflectance * (white - dark)
    return raw.astype(np.float32)


_VASOACTIVE_DOSES = {
    "noradrenaline_dose": (0.65, 0.08),  # (zero fraction, scale of nonzero draw)
    "adrenaline_dose": (0.90, 0.04),
    "dopamine_dose": (0.92, 3.0),
    "dobutamine_dose": (0.90, 3.0),
    "vasopressin_dose": (0.95, 0.002),
    "milrinone_dose": (0.95, 0.3),
}

_BOOL_TRUE_FRACTION = {
    "mechanical_ventilation": 0.40,
    "ecmo": 0.03,
    "renal_replacement": 0.10,
    "aprv": 0.05,
}


def _draw_parameter(rng, spec, positive, config):
    shift = config.clinical_effects.get(spec.name, 0.0) * config.clinical_effect_scale
    if spec.kind == "bool":
        p = _BOOL_TRUE_FRACTION.get(spec.name, 0.2)
        if positive:
            p = min(max(p + shift, 0.0), 1.0)
        return bool(rng.random() < p)
    if spec.kind == "categorical":
        return spec.categories[int(rng.integers(0, len(spec.categories)))]
    if spec.name in _VASOACTIVE_DOSES:
        zero_frac, scale = _VASOACTIVE_DOSES[spec.name]
        value = 0.0 if rng.random() < zero_frac else float(rng.exponential(scale))
    else:
        lo, hi = spec.plausible_range
        value = float(rng.normal(0.5 * (lo + hi), (hi - lo) / 8.0))
    if positive:
        value += shift
    lo, hi = spec.plausible_range
    return float(min(max(value, lo), hi))


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(round(value, 6))
    return str(value)


def generate(config: SynthConfig, out_dir: str | Path) -> SynthCohort:
    """Write a complete synthetic cohort file tree under out_dir."""
    root = Path(out_dir)
    (root / "cubes").mkdir(parents=True, exist_ok=True)
    (root / "refs").mkdir(parents=True, exist_ok=True)
    dictionary = default_dictionary()
    wavelengths = HSI_WAVELENGTH_START + HSI_WAVELENGTH_STEP * np.arange(config.channels)

    n_pos = int(round(config.n_patients * config.prevalence_sepsis))
    label_rng = np.random.default_rng(subseed(config.seed, "labels"))
    positive = np.zeros(config.n_patients, dtype=bool)
    positive[label_rng.permutation(config.n_patients)[:n_pos]] = True

    white, dark = _reference_cubes(config, np.random.default_rng(subseed(config.seed, "refs")))
    white_cube = SpectralCube(white, HSI_WAVELENGTH_START, HSI_WAVELENGTH_STEP, STATE_RAW)
    dark_cube = SpectralCube(dark, HSI_WAVELENGTH_START, HSI_WAVELENGTH_STEP, STATE_RAW)
    white_path, dark_path = root / "refs" / "white.spec", root / "refs" / "dark.spec"
    save_cube(white_cube, white_path)
    save_cube(dark_cube, dark_path)

    palm_r = _fit_radius(config.palm_radius, config.width, config.height)
    finger_r = max(4, min(config.finger_radius, palm_r // 2))
    annotations = []
    cube_paths = {}
    clinical_rows = []
    label_rows = []
    for i in range(config.n_patients):
        pid = f"synth-{i:04d}"
        rng = np.random.default_rng(subseed(config.seed, "patient", i))
        raw = _patient_cube(rng, config, wavelengths, bool(positive[i]), white, dark)
        cube = SpectralCube(raw, HSI_WAVELENGTH_START, HSI_WAVELENGTH_STEP, STATE_RAW)
        path = root / "cubes" / f"{pid}.spec"
        save_cube(cube, path)
        cube_paths[pid] = path
        annotations.append(
            RegionAnnotation(pid, "palm", config.width // 2, config.height // 2, palm_r)
        )
        annotations.append(
            RegionAnnotation(
                pid, "finger", config.width - finger_r - 2, finger_r + 2, finger_r
            )
        )

        values = {}
        for spec in dictionary.parameters:
            if rng.random() < config.missingness:
                values[spec.name] = None
            else:
                values[spec.name] = _draw_parameter(rng, spec, bool(positive[i]), config)
        clinical_rows.append((pid, values))

        if positive[i]:
            sepsis = "unsure" if rng.random() < config.unsure_fraction else "sepsis"
            p_death = config.mortality_given_sepsis
        else:
            sepsis = "unsure" if rng.random() < config.unsure_fraction else "no_sepsis"
            p_death = config.mortality_given_no_sepsis
        if rng.random() < config.lost_to_followup_fraction:
            survival = "lost_to_followup"
        else:
            survival = "died" if rng.random() < p_death else "survived"
        label_rows.append((pid, sepsis, survival))

    annotations_path = root / "annotations.json"
    save_annotations(annotations, annotations_path)

    clinical_path = root / "clinical.csv"
    names = dictionary.names()
    with open(clinical_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", *names])
        for pid, values in clinical_rows:
            writer.writerow(
                [pid]
                + ["" if values[n] is None else _format_value(values[n]) for n in names]
            )

    labels_path = root / "labels.csv"
    with open(labels_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "sepsis_label", "survival_label"])
        writer.writerows(label_rows)

    truth_path = root / "truth.json"
    truth = {
        "seed": config.seed,
        "n_patients": config.n_patients,
        "n_positive": int(n_pos),
        "effect_scale": config.effect_scale,
        "clinical_effect_scale": config.clinical_effect_scale,
        "planted_directions": {
            e.index: e.expected_direction for e in config.index_effects
        },
        "index_effects": [
            {
                "index": e.index, "center_nm": e.center_nm, "sigma_nm": e.sigma_nm,
                "delta": e.delta, "expected_direction": e.expected_direction,
            }
            for e in config.index_effects
        ],
        "clinical_effects": dict(sorted(config.clinical_effects.items())),
        "missingness": config.missingness,
        "palm_radius": palm_r,
        "finger_radius": finger_r,
        "image_size": [config.width, config.height, config.channels],
        "positive_patients": sorted(
            f"synth-{i:04d}" for i in range(config.n_patients) if positive[i]
        ),
    }
    truth_path.write_text(json.dumps(truth, sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")
    return SynthCohort(
        root=root, cube_paths=cube_paths, white_path=white_path, dark_path=dark_path,
        annotations_path=annotations_path, clinical_path=clinical_path,
        labels_path=labels_path, truth_path=truth_path,
    )
