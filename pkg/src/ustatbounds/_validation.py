"""Input validation helpers."""
from __future__ import annotations

import numpy as np

from .exceptions import DomainError, ShapeError, ValidationError

PROB_TOL = 1e-12


def check_finite_array(values, name="array", dtype=np.float64) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains NaN or Inf entries")
    return arr


def check_probabilities(probs, name="probs") -> np.ndarray:
    p = check_finite_array(probs, name)
    if p.ndim != 1 or p.size == 0:
        raise ShapeError(f"{name} must be a nonempty 1-d sequence")
    if np.any(p < 0):
        raise ValidationError(f"{name} has negative entries")
    if abs(p.sum() - 1.0) > PROB_TOL * max(1, p.size):
        raise ValidationError(f"{name} sums to {p.sum()!r}, expected 1")
    return p


def check_positive_int(value, name) -> int:
    if isinstance(value, bool) or int(value) != value or value < 1:
        raise ValidationError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_moment_order(p) -> float:
    p = float(p)
    if not np.isfinite(p) or p < 2:
        raise DomainError(f"moment order p must satisfy p >= 2, got {p}")
    return p


def check_nonnegative(value, name) -> float:
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise DomainError(f"{name} must be finite and >= 0, got {value}")
    return value


def check_positive(value, name) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise DomainError(f"{name} must be finite and > 0, got {value}")
    return value


def check_axis_set(axes, order: int, name="axes") -> tuple[int, ...]:
    """Normalize a collection of 1-based axis labels to a sorted tuple."""
    out = tuple(sorted(int(a) for a in axes))
    if len(set(out)) != len(out):
        raise ValidationError(f"{name} has repeated axes: {out}")
    for a in out:
        if not 1 <= a <= order:
            raise ValidationError(f"{name}: axis {a} outside 1..{order}")
    return out
