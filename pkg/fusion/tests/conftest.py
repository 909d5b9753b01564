import json
import struct

import numpy as np
import pytest


def write_speccube(path, values, state="l1_normalized", start=500.0, step=500.0 / 99.0):
    """Minimal SpecCube v1 writer for fixtures (canonical header form)."""
    values = np.ascontiguousarray(values, dtype="<f4")
    channels, height, width = values.shape
    header = json.dumps(
        {
            "calibration_state": state,
            "channels": channels,
            "height": height,
            "layout": "bsq",
            "wavelength_start_nm": start,
            "wavelength_step_nm": step,
            "width": width,
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    with open(path, "wb") as fh:
        fh.write(b"SPECCUB1")
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(values.tobytes())


def disk_mask(side):
    r = side // 2
    coords = np.arange(side) - r
    return (coords[None, :] ** 2 + coords[:, None] ** 2) <= r * r


@pytest.fixture(scope="session")
def toy_separable(tmp_path_factory):
    """20 patients, two classes separable in both image and clinical data."""
    root = tmp_path_factory.mktemp("toy_tensors")
    rng = np.random.default_rng(3)
    side, channels = 32, 100
    mask = disk_mask(side)
    labels = {}
    clinical_rows = {}
    for i in range(20):
        pid = f"t{i:02d}"
        label = i % 2
        base = 0.008 + 0.004 * label  # class-dependent intensity band
        tensor = rng.normal(base, 0.002, (channels, side, side)).astype(np.float32)
        tensor[:, ~mask] = 0.0
        write_speccube(root / f"{pid}_palm.spec", tensor)
        np.save(root / f"{pid}_palm.mask.npy", mask)
        labels[pid] = label
        clinical_rows[pid] = rng.normal(label * 1.5, 1.0, 6).astype(np.float32)
    ids = sorted(labels)
    clinical = (ids, [f"c{j}" for j in range(6)],
                np.stack([clinical_rows[p] for p in ids]))
    return root, labels, clinical
