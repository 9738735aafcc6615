"""Input checks shared by the estimator wrappers and the CLI."""

from __future__ import annotations

import numpy as np
from sklearn.utils import check_array


def check_locations(locations, name: str = "locations") -> np.ndarray:
    """Return a float (n, 2) array of finite coordinates."""
    arr = check_array(locations, dtype=np.float64, ensure_all_finite=True, input_name=name)
    if arr.shape[1] != 2:
        raise ValueError(f"{name} must have two columns (x, y), got shape {arr.shape}")
    return arr


def check_panel(X, locations, min_times: int = 2):
    """Validate a (T, m) return matrix against m locations."""
    values = check_array(
        X, dtype=np.float64, ensure_all_finite=True, ensure_min_samples=min_times, input_name="X"
    )
    loc = check_locations(locations)
    if values.shape[1] != loc.shape[0]:
        raise ValueError(f"X has {values.shape[1]} columns but {loc.shape[0]} locations were given")
    return values, loc


def check_positive(value, name: str) -> float:
    v = float(value)
    if not (np.isfinite(v) and v > 0):
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return v


def check_choice(value, choices, name: str):
    if value not in choices:
        raise ValueError(f"{name} must be one of {sorted(choices)}, got {value!r}")
    return value
