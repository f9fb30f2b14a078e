"""The 47 physiological features, in file order, with cap defaults.

Each row is ``(name, typical mean, typical spread, cap_min, cap_max, severity_loading)``.
The mean/spread/loading columns parameterize the synthetic generator only:
loading is the number of spreads the feature moves per unit of latent
severity. Cap limits are broad physiologic bounds; override them with a caps
file when working with real data.
"""

from __future__ import annotations

import numpy as np

# fmt: off
FEATURE_TABLE = [
    # demographics / static
    ("shock_index",        0.75,   0.20,   0.0,    3.0,    0.6),
    ("elixhauser",         4.0,    2.5,    0.0,    30.0,   0.0),
    ("sirs",               2.0,    1.0,    0.0,    4.0,    0.5),
    ("gender",             0.45,   0.5,    0.0,    1.0,    0.0),
    ("re_admission",       0.2,    0.4,    0.0,    1.0,    0.0),
    ("gcs",                12.0,   3.0,    3.0,    15.0,   -0.6),
    ("sofa",               6.0,    3.0,    0.0,    24.0,   0.9),
    ("age",                65.0,   15.0,   15.0,   100.0,  0.1),
    # lab values
    ("albumin",            3.0,    0.6,    0.5,    6.0,    -0.3),
    ("arterial_ph",        7.38,   0.07,   6.7,    7.8,    -0.5),
    ("calcium",            8.3,    0.8,    4.0,    20.0,   -0.2),
    ("glucose",            140.0,  45.0,   10.0,   1000.0, 0.2),
    ("haemoglobin",        10.2,   1.8,    2.0,    20.0,   -0.2),
    ("magnesium",          2.0,    0.35,   0.3,    10.0,   0.0),
    ("ptt",                36.0,   12.0,   10.0,   150.0,  0.3),
    ("potassium",          4.1,    0.6,    1.0,    10.0,   0.2),
    ("sgpt",               60.0,   80.0,   0.0,    10000.0, 0.3),
    ("arterial_be",        -1.5,   4.5,    -50.0,  40.0,   -0.6),
    ("bun",                30.0,   20.0,   1.0,    300.0,  0.4),
    ("chloride",           105.0,  6.0,    70.0,   150.0,  0.1),
    ("bicarbonate",        23.0,   4.5,    2.0,    60.0,   -0.5),
    ("inr",                1.5,    0.6,    0.5,    20.0,   0.4),
    ("sodium",             139.0,  5.0,    100.0,  180.0,  0.1),
    ("arterial_lactate",   2.2,    1.6,    0.1,    30.0,   0.9),
    ("co2",                24.0,   5.0,    2.0,    60.0,   -0.4),
    ("creatinine",         1.5,    1.1,    0.1,    20.0,   0.5),
    ("ionised_calcium",    1.12,   0.1,    0.5,    5.0,    -0.2),
    ("pt",                 16.0,   5.0,    8.0,    150.0,  0.4),
    ("platelets",          200.0,  100.0,  1.0,    1500.0, -0.4),
    ("sgot",               80.0,   110.0,  0.0,    10000.0, 0.3),
    ("total_bilirubin",    1.5,    2.0,    0.0,    50.0,   0.4),
    ("wbc",                12.0,   6.0,    0.0,    200.0,  0.4),
    # vital signs
    ("dia_bp",             58.0,   11.0,   10.0,   200.0,  -0.6),
    ("sys_bp",             118.0,  20.0,   30.0,   300.0,  -0.6),
    ("mean_bp",            77.0,   13.0,   20.0,   250.0,  -0.8),
    ("paco2",              41.0,   9.0,    5.0,    200.0,  0.1),
    ("pao2",               120.0,  60.0,   20.0,   700.0,  -0.3),
    ("fio2",               0.45,   0.15,   0.2,    1.0,    0.5),
    ("pao2_fio2",          270.0,  120.0,  20.0,   1500.0, -0.6),
    ("resp_rate",          20.0,   5.5,    1.0,    80.0,   0.5),
    ("temp_c",             37.0,   0.8,    25.0,   44.0,   0.2),
    ("weight_kg",          80.0,   20.0,   20.0,   300.0,  0.0),
    ("heart_rate",         90.0,   17.0,   20.0,   250.0,  0.6),
    ("spo2",               96.5,   2.5,    50.0,   100.0,  -0.4),
    # intake / output
    ("output_4h",          400.0,  300.0,  0.0,    5000.0, -0.4),
    ("output_total",       2500.0, 2000.0, 0.0,    50000.0, -0.2),
    ("mech_vent",          0.35,   0.48,   0.0,    1.0,    0.6),
]
# fmt: on

FEATURE_NAMES = tuple(row[0] for row in FEATURE_TABLE)
N_FEATURES = len(FEATURE_NAMES)
assert N_FEATURES == 47

# features that are fixed per patient (not re-drawn each window)
STATIC_FEATURES = frozenset({"elixhauser", "gender", "re_admission", "age", "weight_kg"})
BINARY_FEATURES = frozenset({"gender", "re_admission", "mech_vent"})


def default_caps() -> np.ndarray:
    """(47, 2) array of [cap_min, cap_max]."""
    return np.array([[row[3], row[4]] for row in FEATURE_TABLE], dtype=np.float64)


def generator_profile() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Means, spreads, and severity loadings used by the synthetic generator."""
    arr = np.array([row[1:3] + row[5:6] for row in FEATURE_TABLE], dtype=np.float64)
    return arr[:, 0], arr[:, 1], arr[:, 2]
