"""Band-ratio tissue indices over absorbance spectra.

Each index is a configurable ratio of mean absorbance over a numerator
band to mean absorbance over a denominator band, mapped affinely to
[0, 1] and clamped. Two-stage definitions (a second band pair probing a
different penetration depth) are blended by averaging the two stage
values. Band limits and scale windows ship in data/indices.default.json
and are configuration, not hard-coded truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .cube import (
    STATE_ABSORBANCE,
    STATE_L1,
    STATE_RAW,
    STATE_REFLECTANCE,
    SpectralCube,
    apply_roi,
    l1_normalize,
    roi_mask,
)
from .errors import ConfigError, ValidationError

ABSORBANCE_EPS = 1e-6
WAVELENGTH_MIN = 500.0
WAVELENGTH_MAX = 1000.0


@dataclass(frozen=True)
class BandRatioSpec:
    """One band-ratio index definition."""

    name: str
    numerator_band: tuple[float, float]
    denominator_band: tuple[float, float]
    scale_min: float
    scale_max: float
    second_stage: "BandRatioSpec | None" = None

    def __post_init__(self):
        for label, (lo, hi) in (
            ("numerator_band", self.numerator_band),
            ("denominator_band", self.denominator_band),
        ):
            if not lo < hi:
                raise ConfigError(f"{self.name}: {label} must satisfy lo < hi, got [{lo}, {hi}]")
            if lo < WAVELENGTH_MIN or hi > WAVELENGTH_MAX:
                raise ConfigError(
                    f"{self.name}: {label} [{lo}, {hi}] outside "
                    f"[{WAVELENGTH_MIN}, {WAVELENGTH_MAX}] nm"
                )
        if not self.scale_min < self.scale_max:
            raise ConfigError(
                f"{self.name}: scale_min must be below scale_max, "
                f"got {self.scale_min} >= {self.scale_max}"
            )


@dataclass(frozen=True)
class IndexMap:
    """Per-pixel index values in [0, 1], NaN outside the mask."""

    values: np.ndarray  # (height, width) float64
    index_name: str

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def absorbance(cube: SpectralCube) -> SpectralCube:
    """Convert reflectance-like values to absorbance, A = -log10(R + 1e-6)."""
    if cube.calibration_state == STATE_RAW:
        raise ValidationError("absorbance requires calibrated input, got raw_counts")
    if cube.calibration_state == STATE_ABSORBANCE:
        return cube
    a = -np.log10(cube.values.astype(np.float64) + ABSORBANCE_EPS)
    return cube.with_values(a, STATE_ABSORBANCE)


def band_channels(cube: SpectralCube, band: tuple[float, float]) -> np.ndarray:
    """Indices of channels whose center wavelength lies in [lo, hi]."""
    lo, hi = band
    centers = cube.wavelengths
    idx = np.flatnonzero((centers >= lo) & (centers <= hi))
    if idx.size == 0:
        raise ConfigError(f"band [{lo}, {hi}] nm covers no channel centers")
    return idx


def compute_index(
    cube: SpectralCube, spec: BandRatioSpec, mask: np.ndarray
) -> IndexMap:
    """Evaluate one band-ratio index over the in-mask pixels of a cube.

    The cube may be reflectance, l1-normalized, or already absorbance;
    conversion happens here when needed.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (cube.height, cube.width):
        raise ValidationError(
            f"mask shape {mask.shape} does not match image {cube.height}x{cube.width}"
        )
    if not mask.any():
        raise ValidationError("compute_index requires a nonempty mask")
    a = absorbance(cube).values.astype(np.float64)
    values = _stage_value(a, cube, spec, mask)
    if spec.second_stage is not None:
        values = 0.5 * (values + _stage_value(a, cube, spec.second_stage, mask))
    out = np.full((cube.height, cube.width), np.nan)
    out[mask] = values
    return IndexMap(values=out, index_name=spec.name)


def _stage_value(a, cube, spec, mask):
    num_idx = band_channels(cube, spec.numerator_band)
    den_idx = band_channels(cube, spec.denominator_band)
    num = a[num_idx][:, mask].mean(axis=0)
    den = a[den_idx][:, mask].mean(axis=0)
    den = np.where(np.abs(den) < 1e-12, np.copysign(1e-12, den + (den == 0.0)), den)
    ratio = num / den
    scaled = (ratio - spec.scale_min) / (spec.scale_max - spec.scale_min)
    return np.clip(scaled, 0.0, 1.0)


def roi_statistic(index_map: IndexMap, stat: str = "median") -> float:
    """Patient-level summary of one index map over its in-mask pixels."""
    values = index_map.values[np.isfinite(index_map.values)]
    if values.size == 0:
        raise ValidationError("roi_statistic requires at least one in-mask pixel")
    if stat == "median":
        return float(np.median(values))
    if stat == "mean":
        return float(values.mean())
    raise ConfigError(f"unknown statistic {stat!r}")


@dataclass(frozen=True)
class FeatureConfig:
    """What extract_feature_vector emits, and in which order."""

    indices: tuple[BandRatioSpec, ...]
    include_spectrum: bool = True
    statistic: str = "median"


@dataclass(frozen=True)
class FeatureVector:
    names: tuple[str, ...]
    values: np.ndarray


def default_index_specs() -> tuple[BandRatioSpec, ...]:
    """Index definitions shipped with the package."""
    payload = resources.files("spectrasep.data").joinpath("indices.default.json")
    return parse_index_specs(json.loads(payload.read_text(encoding="utf-8")))


def load_index_specs(path: str | Path) -> tuple[BandRatioSpec, ...]:
    try:
        entries = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"unreadable index config {path}: {exc}") from exc
    return parse_index_specs(entries)


def parse_index_specs(entries: list[dict]) -> tuple[BandRatioSpec, ...]:
    if not isinstance(entries, list) or not entries:
        raise ConfigError("index config must be a nonempty JSON array")
    return tuple(_parse_spec(e) for e in entries)


def _parse_spec(entry: dict) -> BandRatioSpec:
    try:
        second = entry.get("second_stage")
        return BandRatioSpec(
            name=entry["name"],
            numerator_band=tuple(float(x) for x in entry["numerator_band"]),
            denominator_band=tuple(float(x) for x in entry["denominator_band"]),
            scale_min=float(entry["scale_min"]),
            scale_max=float(entry["scale_max"]),
            second_stage=_parse_spec(second) if second else None,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad index spec entry {entry!r}: {exc}") from exc


def feature_names(config: FeatureConfig, cube_channels: int = 100,
                  wavelengths: np.ndarray | None = None) -> tuple[str, ...]:
    names = [spec.name for spec in config.indices]
    if config.include_spectrum:
        if wavelengths is not None:
            names += [f"l1_median_{w:.0f}nm" for w in wavelengths]
        else:
            names += [f"l1_median_ch{c:03d}" for c in range(cube_channels)]
    return tuple(names)


def extract_feature_vector(
    cube: SpectralCube, roi, config: FeatureConfig
) -> FeatureVector:
    """Index ROI summaries plus, optionally, the in-ROI median l1 spectrum.

    Ordering is fixed: the configured indices in config order, then one
    median value per channel. Deterministic for identical inputs.
    """
    if cube.calibration_state not in (STATE_REFLECTANCE, STATE_L1):
        raise ValidationError(
            f"feature extraction requires a calibrated cube, got {cube.calibration_state}"
        )
    normalized = l1_normalize(cube) if cube.calibration_state == STATE_REFLECTANCE else cube
    cropped = apply_roi(normalized, roi)
    mask = roi_mask(2 * roi.radius)
    values = [
        roi_statistic(compute_index(cropped, spec, mask), config.statistic)
        for spec in config.indices
    ]
    if config.include_spectrum:
        in_roi = cropped.values[:, mask].astype(np.float64)
        values.extend(np.median(in_roi, axis=1).tolist())
    names = feature_names(config, cube.channels, cube.wavelengths if config.include_spectrum else None)
    return FeatureVector(names=names, values=np.asarray(values, dtype=np.float64))


def feature_dictionary(config: FeatureConfig, cube_channels: int = 100,
                       wavelengths: np.ndarray | None = None) -> dict[str, str]:
    """Feature index -> name mapping, exported next to features.csv."""
    return {
        str(i): name
        for i, name in enumerate(feature_names(config, cube_channels, wavelengths))
    }
