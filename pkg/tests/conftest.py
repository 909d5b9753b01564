import csv

import numpy as np
import pytest

from spectrasep.clinical import default_dictionary
from spectrasep.cube import (
    HSI_WAVELENGTH_START,
    HSI_WAVELENGTH_STEP,
    STATE_REFLECTANCE,
    SpectralCube,
)


@pytest.fixture(scope="session")
def dictionary():
    return default_dictionary()


def make_cube(values, state=STATE_REFLECTANCE, start=HSI_WAVELENGTH_START,
              step=HSI_WAVELENGTH_STEP):
    return SpectralCube(
        values=np.asarray(values, dtype=np.float32),
        wavelength_start=start,
        wavelength_step=step,
        calibration_state=state,
    )


def random_cube(rng, channels=100, height=24, width=32, state=STATE_REFLECTANCE):
    return make_cube(rng.random((channels, height, width), dtype=np.float64), state)


def write_clinical_csv(path, rows, dictionary=None, missing=()):
    """Write a clinical.csv where rows maps patient_id -> {param: value}.

    Parameters absent from a row (or listed in missing) become empty cells.
    """
    dictionary = dictionary or default_dictionary()
    names = dictionary.names()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", *names])
        for pid, values in rows.items():
            cells = [pid]
            for name in names:
                v = values.get(name)
                if v is None or (pid, name) in missing:
                    cells.append("")
                elif isinstance(v, bool):
                    cells.append("true" if v else "false")
                else:
                    cells.append(str(v))
            writer.writerow(cells)


def write_labels_csv(path, labels):
    """labels maps patient_id -> (sepsis_label, survival_label)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "sepsis_label", "survival_label"])
        for pid, (sepsis, survival) in labels.items():
            writer.writerow([pid, sepsis, survival])


def baseline_record_values(dictionary=None):
    """A fully observed record with every parameter in its normal range."""
    values = {
        "age": 55.0, "sex": "female", "height": 172.0, "weight": 70.0,
        "heart_rate": 72.0, "map": 85.0, "systolic_bp": 120.0,
        "respiratory_rate": 14.0, "temperature": 36.8, "spo2": 98.0,
        "gcs": 15.0, "crt": 2.0, "mottling_score": 0.0,
        "ph": 7.40, "pco2": 40.0, "po2": 90.0, "so2": 97.0,
        "bicarbonate": 24.0, "lactate": 1.0, "hb_bga": 13.0,
        "mechanical_ventilation": False, "ecmo": False, "renal_replacement": False,
        "fio2": 0.21, "peep": 5.0, "ppeak": 15.0, "aprv": False,
        "noradrenaline_dose": 0.0, "adrenaline_dose": 0.0, "dopamine_dose": 0.0,
        "dobutamine_dose": 0.0, "vasopressin_dose": 0.0, "milrinone_dose": 0.0,
        "leukocytes": 7.0, "platelets": 250.0, "creatinine": 0.9, "gfr": 95.0,
        "urea": 30.0, "bilirubin": 0.6, "crp": 4.0, "pct": 0.1, "ldh": 180.0,
        "hb_lab": 13.2, "inr": 1.0, "albumin": 4.0,
    }
    dictionary = dictionary or default_dictionary()
    assert set(values) == set(dictionary.names())
    return values
