"""Input checks for the array-facing estimator API."""
from __future__ import annotations

import numpy as np
from sklearn.utils import check_array, column_or_1d


def check_design(X, name: str = "X") -> np.ndarray:
    return check_array(X, dtype=np.float64, ensure_2d=True, ensure_all_finite=True,
                       input_name=name)


def check_codes(codes, n_rows: int, n_cat: int | None = None, name: str = "y"):
    """Integer category codes starting at 1; returns ``(codes, n_categories)``.

    Without ``n_cat`` the observed codes must be exactly ``1..max``.
    """
    raw = column_or_1d(np.asarray(codes), warn=True)
    if raw.shape[0] != n_rows:
        raise ValueError(f"{name} has {raw.shape[0]} entries, expected {n_rows}")
    as_float = raw.astype(float)
    if not np.all(np.isfinite(as_float)) or np.any(as_float != np.round(as_float)):
        raise ValueError(f"{name} must hold integer category codes")
    out = as_float.astype(int)
    if out.size and out.min() < 1:
        raise ValueError(f"{name} codes must start at 1")
    if n_cat is None:
        n_cat = int(out.max())
        missing = sorted(set(range(1, n_cat + 1)) - set(out.tolist()))
        if missing:
            raise ValueError(f"{name} codes are not consecutive; missing {missing}")
    elif out.max() > n_cat:
        raise ValueError(f"{name} has code {out.max()} above declared {n_cat}")
    return out, n_cat


def check_shares(shares, n_rows: int) -> np.ndarray:
    s = column_or_1d(np.asarray(shares, dtype=float))
    if s.shape[0] != n_rows:
        raise ValueError(f"strata_shares has {s.shape[0]} entries, expected {n_rows}")
    if np.any(~np.isfinite(s)) or np.any(s <= 0):
        raise ValueError("strata shares must be positive and finite")
    if abs(s.sum() - 1.0) > 1e-9:
        raise ValueError(f"strata shares sum to {s.sum():.12g}, not 1")
    return s


def check_weights(sample_weight, n_rows: int) -> np.ndarray:
    if sample_weight is None:
        return np.ones(n_rows)
    w = column_or_1d(np.asarray(sample_weight, dtype=float))
    if w.shape[0] != n_rows:
        raise ValueError(f"sample_weight has {w.shape[0]} entries, expected {n_rows}")
    if np.any(~np.isfinite(w)) or np.any(w < 0):
        raise ValueError("sample_weight must be nonnegative and finite")
    return w
