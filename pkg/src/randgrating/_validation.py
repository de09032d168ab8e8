"""Input checks shared by the estimator wrappers."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ConfigError


def check_coefficients(X, allow_nan=False):
    """2-D float array of per-sample Fourier coefficients with an odd width."""
    X = check_array(X, dtype=float, ensure_all_finite="allow-nan" if allow_nan else True)
    if X.shape[1] % 2 == 0:
        raise ValueError(f"coefficient vectors need an odd length, got {X.shape[1]}")
    return X


def check_records(records, n_stages, n_angles, samples_per_stage):
    """Records keyed by ``(m, j)``; every entry is one coefficient array per angle."""
    if not isinstance(records, dict):
        raise TypeError(f"records must be a dict keyed by (m, j), got {type(records).__name__}")
    out = {}
    for (m, j), per_angle in records.items():
        if not 0 <= j < n_stages:
            raise ConfigError(f"record stage index {j} outside 0..{n_stages - 1}")
        if m >= samples_per_stage[j]:
            continue
        if len(per_angle) != n_angles:
            raise ConfigError(f"record {(m, j)} has {len(per_angle)} angles, expected {n_angles}")
        arrs = [np.asarray(p, dtype=complex).ravel() for p in per_angle]
        for p in arrs:
            if not np.all(np.isfinite(p)):
                raise ValueError(f"record {(m, j)} contains non-finite coefficients")
        out[(int(m), int(j))] = arrs
    return out


def check_positive(name, value, strict=True):
    v = float(value)
    if not (v > 0 if strict else v >= 0):
        raise ConfigError(f"{name} must be {'positive' if strict else 'nonnegative'}, got {value}")
    return v
