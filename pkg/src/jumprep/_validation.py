"""Input validation helpers shared by the estimators and operations."""

from __future__ import annotations

import numbers

import numpy as np


class ValidationError(ValueError):
    """Raised when an input violates a documented invariant."""


class IntegrabilityError(ArithmeticError):
    """Raised when a payoff or integrand fails a numerical integrability check."""


class ImpossiblePathError(ValueError):
    """Raised when a path is evaluated where the law gives it zero probability."""


class UnsupportedModelError(NotImplementedError):
    """Raised when a conditional payoff cannot be computed for a model."""


class UnsupportedPayoffError(NotImplementedError):
    """Raised when a joint payoff lies outside the supported product algebra."""


class OracleSizeError(ValueError):
    """Raised when an enumeration tree would exceed the supported size."""


def check_time_array(t, name="t"):
    arr = np.atleast_1d(np.asarray(t, dtype=float))
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be a scalar or 1-d array")
    if np.any(np.isnan(arr)):
        raise ValidationError(f"{name} contains NaN")
    return arr


def check_probability(p, name="p", atol=1e-12):
    p = float(p)
    if not (-atol <= p <= 1.0 + atol):
        raise ValidationError(f"{name}={p} is not a probability")
    return min(max(p, 0.0), 1.0)


def check_positive_int(n, name, minimum=1):
    if isinstance(n, bool) or not isinstance(n, numbers.Integral):
        if isinstance(n, float) and n.is_integer():
            n = int(n)
        else:
            raise ValidationError(f"{name} must be an integer, got {n!r}")
    if n < minimum:
        raise ValidationError(f"{name} must be >= {minimum}, got {n}")
    return int(n)


def check_field_values(values, n_times, n_marks, name="field"):
    values = np.asarray(values, dtype=float)
    if values.shape != (n_times, n_marks):
        values = np.broadcast_to(values, (n_times, n_marks)).astype(float)
    return values


def check_finite(values, name):
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValidationError(f"{name} has non-finite entries")
    return values
