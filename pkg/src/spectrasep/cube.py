"""Spectral cube IO, calibration, and geometric preprocessing.

Cubes are stored channel-major (band sequential): ``values[c, row, col]``
as float32. The on-disk container is the SpecCube v1 layout: an 8-byte
magic, a little-endian u32 header length, a canonical JSON header, and a
raw little-endian float32 payload. Canonical JSON means sorted keys and
no whitespace, which makes save(load(f)) byte-identical to f.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import AnnotationError, CalibrationError, CubeFormatError

MAGIC = b"SPECCUB1"

STATE_RAW = "raw_counts"
STATE_REFLECTANCE = "reflectance"
STATE_L1 = "l1_normalized"
STATE_ABSORBANCE = "absorbance"
CALIBRATION_STATES = (STATE_RAW, STATE_REFLECTANCE, STATE_L1, STATE_ABSORBANCE)

HSI_CHANNELS = 100
HSI_WAVELENGTH_START = 500.0
HSI_WAVELENGTH_STEP = 500.0 / 99.0  # 100 channels spanning 500-1000 nm

SITE_PALM = "palm"
SITE_FINGER = "finger"
PALM_RADIUS = 100
FINGER_RADIUS = 20

CALIBRATION_EPS = 1e-6
CALIBRATION_CLAMP = 2.0

_HEADER_KEYS = (
    "calibration_state",
    "channels",
    "height",
    "layout",
    "wavelength_start_nm",
    "wavelength_step_nm",
    "width",
)


@dataclass(frozen=True)
class SpectralCube:
    """Calibratable spectral volume with a linear wavelength axis.

    values has shape (channels, height, width), dtype float32. For HSI
    cubes the axis covers 500-1000 nm over 100 channels; RGB cubes carry
    3 channels and a placeholder axis.
    """

    values: np.ndarray
    wavelength_start: float
    wavelength_step: float
    calibration_state: str

    def __post_init__(self):
        v = self.values
        if v.ndim != 3:
            raise CubeFormatError(f"cube values must be 3-D, got shape {v.shape}")
        if v.dtype != np.float32:
            object.__setattr__(self, "values", v.astype(np.float32))
        if self.calibration_state not in CALIBRATION_STATES:
            raise CubeFormatError(
                f"unknown calibration_state {self.calibration_state!r}"
            )

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    @property
    def wavelengths(self) -> np.ndarray:
        """Channel center wavelengths in nm."""
        return self.wavelength_start + self.wavelength_step * np.arange(self.channels)

    def with_values(self, values: np.ndarray, state: str | None = None) -> "SpectralCube":
        return replace(
            self,
            values=np.ascontiguousarray(values, dtype=np.float32),
            calibration_state=state if state is not None else self.calibration_state,
        )

    def validate(self) -> None:
        """Check the value-domain invariants for the current state."""
        v = self.values
        bad = np.flatnonzero(~np.isfinite(v))
        if bad.size:
            raise CubeFormatError(f"non-finite value at element {bad[0]}")
        if self.calibration_state in (STATE_REFLECTANCE, STATE_L1) and float(v.min()) < 0.0:
            raise CubeFormatError(
                f"negative value in {self.calibration_state} cube: {float(v.min())}"
            )
        if self.channels == HSI_CHANNELS and self.calibration_state != STATE_RAW:
            last = self.wavelength_start + self.wavelength_step * (self.channels - 1)
            if not (
                math.isclose(self.wavelength_start, HSI_WAVELENGTH_START, abs_tol=1e-6)
                and 990.0 <= last <= 1001.0
            ):
                raise CubeFormatError(
                    "HSI cube wavelength axis must cover 500-1000 nm over 100 channels"
                )


@dataclass(frozen=True)
class RegionAnnotation:
    """Circular skin region of interest on one image."""

    image_id: str
    site: str
    center_x: int
    center_y: int
    radius: int

    def __post_init__(self):
        if self.site not in (SITE_PALM, SITE_FINGER):
            raise AnnotationError(f"unknown site {self.site!r}")
        if self.radius <= 0:
            raise AnnotationError(f"radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class PreprocessedSample:
    """Square resampled tensor plus its inside-circle mask."""

    tensor: np.ndarray  # (channels, side, side) float32, zero outside mask
    mask: np.ndarray  # (side, side) bool
    source_annotation: RegionAnnotation


def save_cube(cube: SpectralCube, path: str | Path) -> None:
    """Write a cube in SpecCube v1 form (canonical header, float32 LE payload)."""
    v = cube.values
    bad = np.flatnonzero(~np.isfinite(v))
    if bad.size:
        raise CubeFormatError(f"refusing to save non-finite value at element {bad[0]}")
    header = {
        "calibration_state": cube.calibration_state,
        "channels": cube.channels,
        "height": cube.height,
        "layout": "bsq",
        "wavelength_start_nm": cube.wavelength_start,
        "wavelength_step_nm": cube.wavelength_step,
        "width": cube.width,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = np.ascontiguousarray(v, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def load_cube(path: str | Path) -> SpectralCube:
    """Read a SpecCube v1 file, validating structure and value domain."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise CubeFormatError(f"bad magic in {path}")
    (header_len,) = struct.unpack_from("<I", raw, len(MAGIC))
    header_start = len(MAGIC) + 4
    if header_start + header_len > len(raw):
        raise CubeFormatError(f"header length {header_len} exceeds file size in {path}")
    try:
        header = json.loads(raw[header_start : header_start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CubeFormatError(f"unreadable header in {path}: {exc}") from exc
    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise CubeFormatError(f"header in {path} missing keys {missing}")
    if header["layout"] != "bsq":
        raise CubeFormatError(f"unsupported layout {header['layout']!r} in {path}")
    width, height, channels = header["width"], header["height"], header["channels"]
    for name, dim in (("width", width), ("height", height), ("channels", channels)):
        if not isinstance(dim, int) or dim <= 0:
            raise CubeFormatError(f"header {name} must be a positive integer, got {dim!r}")
    payload = raw[header_start + header_len :]
    expected = channels * height * width * 4
    if len(payload) != expected:
        raise CubeFormatError(
            f"header/payload size mismatch in {path}: expected {expected} bytes, "
            f"found {len(payload)}"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(channels, height, width).copy()
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        offset = header_start + header_len + 4 * int(bad[0])
        raise CubeFormatError(
            f"non-finite value at element {int(bad[0])} (byte offset {offset}) in {path}"
        )
    return SpectralCube(
        values=values,
        wavelength_start=float(header["wavelength_start_nm"]),
        wavelength_step=float(header["wavelength_step_nm"]),
        calibration_state=header["calibration_state"],
    )


def calibrate(
    raw: SpectralCube,
    white: SpectralCube,
    dark: SpectralCube,
    eps: float = CALIBRATION_EPS,
) -> SpectralCube:
    """Convert raw counts to reflectance against white and dark references.

    Per element: R = (raw - dark) / max(white - dark, eps), clamped to
    [0, 2]. The clamp bounds sensor overshoot without hiding values above
    1. Raises CalibrationError when references degenerate (white not above
    dark on more than 1% of elements) or geometries differ.
    """
    for name, ref in (("white", white), ("dark", dark)):
        if ref.values.shape != raw.values.shape:
            raise CalibrationError(
                f"{name} reference shape {ref.values.shape} does not match "
                f"raw shape {raw.values.shape}"
            )
    span = white.values.astype(np.float64) - dark.values.astype(np.float64)
    degenerate = np.count_nonzero(span <= 0)
    if degenerate > 0.01 * span.size:
        raise CalibrationError(
            f"white <= dark on {degenerate} of {span.size} elements "
            f"({100.0 * degenerate / span.size:.2f}%)"
        )
    num = raw.values.astype(np.float64) - dark.values.astype(np.float64)
    reflectance = num / np.maximum(span, eps)
    np.clip(reflectance, 0.0, CALIBRATION_CLAMP, out=reflectance)
    return raw.with_values(reflectance, STATE_REFLECTANCE)


def l1_normalize(cube: SpectralCube) -> SpectralCube:
    """Divide each pixel spectrum by the sum of its absolute channel values.

    All-zero spectra stay all-zero. Input must already be reflectance (a
    second application is a near no-op, normalization is idempotent).
    """
    if cube.calibration_state not in (STATE_REFLECTANCE, STATE_L1):
        raise CalibrationError(
            f"l1_normalize requires reflectance input, got {cube.calibration_state}"
        )
    v = cube.values.astype(np.float64)
    sums = np.abs(v).sum(axis=0)
    nonzero = sums > 0.0
    out = v / np.where(nonzero, sums, 1.0)
    return cube.with_values(out, STATE_L1)


def roi_mask(side: int) -> np.ndarray:
    """Inside-circle mask for a 2r x 2r crop, r = side / 2.

    Pixel (x, y) is inside when its distance to the circle center (r, r),
    measured on the integer pixel grid of the source image, is <= r.
    """
    if side <= 0 or side % 2:
        raise AnnotationError(f"crop side must be a positive even number, got {side}")
    r = side // 2
    coords = np.arange(side) - r
    dist2 = coords[None, :] ** 2 + coords[:, None] ** 2
    return dist2 <= r * r


def apply_roi(cube: SpectralCube, roi: RegionAnnotation) -> SpectralCube:
    """Crop the 2r x 2r square around the annotation and zero outside the circle.

    Square regions falling outside the image are zero-padded so downstream
    shapes stay uniform across annotations near the border.
    """
    cx, cy, r = roi.center_x, roi.center_y, roi.radius
    if r <= 0:
        raise AnnotationError(f"radius must be positive, got {r}")
    if not (0 <= cx < cube.width and 0 <= cy < cube.height):
        raise AnnotationError(
            f"center ({cx}, {cy}) outside image {cube.width}x{cube.height} "
            f"for {roi.image_id}"
        )
    side = 2 * r
    out = np.zeros((cube.channels, side, side), dtype=np.float32)
    x0, y0 = cx - r, cy - r
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + side, cube.width), min(y0 + side, cube.height)
    if sx1 > sx0 and sy1 > sy0:
        out[:, sy0 - y0 : sy1 - y0, sx0 - x0 : sx1 - x0] = cube.values[
            :, sy0:sy1, sx0:sx1
        ]
    out[:, ~roi_mask(side)] = 0.0
    return cube.with_values(out)


def _axis_positions(n_src: int, n_dst: int) -> np.ndarray:
    """Source coordinates of destination samples (endpoints aligned)."""
    if n_dst == 1:
        return np.array([(n_src - 1) / 2.0])
    return np.arange(n_dst) * (n_src - 1) / (n_dst - 1)


def _bilinear(arr: np.ndarray, target: int) -> np.ndarray:
    """Separable bilinear resampling of (..., h, w) to (..., target, target)."""
    h, w = arr.shape[-2:]
    ys = _axis_positions(h, target)
    xs = _axis_positions(w, target)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    rows = arr[..., y0, :] * (1.0 - fy)[:, None] + arr[..., y1, :] * fy[:, None]
    return rows[..., x0] * (1.0 - fx) + rows[..., x1] * fx


def _nearest(mask: np.ndarray, target: int) -> np.ndarray:
    h, w = mask.shape
    ys = np.floor(_axis_positions(h, target) + 0.5).astype(int)
    xs = np.floor(_axis_positions(w, target) + 0.5).astype(int)
    return mask[np.ix_(ys, xs)]


def rescale(cropped: SpectralCube, target: int = 224) -> PreprocessedSample:
    """Resample a square ROI crop to target x target.

    Values use mask-normalized bilinear interpolation (the interpolated
    value is divided by the interpolated mask weight), so constants inside
    the circle survive resampling instead of being diluted by the zeroed
    outside. The mask itself is resampled nearest-neighbor and values at
    mask=false are forced to zero afterwards.
    """
    if cropped.height != cropped.width:
        raise AnnotationError(
            f"rescale requires a square crop, got {cropped.width}x{cropped.height}"
        )
    side = cropped.height
    mask = roi_mask(side)
    weights = mask.astype(np.float64)
    v = cropped.values.astype(np.float64) * weights
    out_v = _bilinear(v, target)
    out_w = _bilinear(weights, target)
    with np.errstate(invalid="ignore"):
        tensor = np.where(out_w > 1e-12, out_v / np.maximum(out_w, 1e-12), 0.0)
    mask_out = _nearest(mask, target)
    tensor[:, ~mask_out] = 0.0
    annotation = RegionAnnotation(
        image_id="", site=SITE_PALM, center_x=side // 2, center_y=side // 2,
        radius=side // 2,
    )
    return PreprocessedSample(
        tensor=tensor.astype(np.float32), mask=mask_out, source_annotation=annotation
    )


def preprocess(
    cube: SpectralCube, roi: RegionAnnotation, target: int = 224
) -> PreprocessedSample:
    """Full chain: l1-normalize, crop to the ROI square, resample."""
    normalized = l1_normalize(cube) if cube.calibration_state == STATE_REFLECTANCE else cube
    if normalized.calibration_state != STATE_L1:
        raise CalibrationError(
            f"preprocess requires reflectance input, got {cube.calibration_state}"
        )
    sample = rescale(apply_roi(normalized, roi), target)
    return PreprocessedSample(
        tensor=sample.tensor, mask=sample.mask, source_annotation=roi
    )


def load_annotations(path: str | Path) -> list[RegionAnnotation]:
    """Read the annotation file (JSON array of RegionAnnotation objects)."""
    try:
        entries = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"unreadable annotation file {path}: {exc}") from exc
    if not isinstance(entries, list):
        raise AnnotationError(f"annotation file {path} must hold a JSON array")
    out = []
    for i, entry in enumerate(entries):
        try:
            out.append(
                RegionAnnotation(
                    image_id=entry["image_id"],
                    site=entry["site"],
                    center_x=int(entry["center_x"]),
                    center_y=int(entry["center_y"]),
                    radius=int(entry["radius"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise AnnotationError(f"bad annotation entry {i} in {path}: {exc}") from exc
    return out


def save_annotations(annotations: list[RegionAnnotation], path: str | Path) -> None:
    entries = [
        {
            "image_id": a.image_id,
            "site": a.site,
            "center_x": a.center_x,
            "center_y": a.center_y,
            "radius": a.radius,
        }
        for a in annotations
    ]
    Path(path).write_text(
        json.dumps(entries, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
