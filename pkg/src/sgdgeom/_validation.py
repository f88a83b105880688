"""Input validation helpers shared by the estimators and functional API."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, column_or_1d


class EvaluationError(ValueError):
    """A basis function or intermediate quantity produced a non-finite value."""


class DimensionError(ValueError):
    """Array shapes do not agree."""


def as_inputs(x) -> np.ndarray:
    """Coerce scalar inputs (1-D, or an ``(n, 1)`` column) to a float vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = check_array(x, ensure_2d=True)
        if x.shape[1] != 1:
            raise DimensionError(
                f"expected a single input feature, got {x.shape[1]} columns")
        return x[:, 0]
    return column_or_1d(np.atleast_1d(x), warn=False).astype(float)


def as_vector(v, size: int | None = None, name: str = "vector") -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if size is not None and v.shape[0] != size:
        raise DimensionError(f"{name} has length {v.shape[0]}, expected {size}")
    return v


def as_square(m, size: int | None = None, name: str = "matrix") -> np.ndarray:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {m.shape}")
    if size is not None and m.shape[0] != size:
        raise DimensionError(f"{name} is {m.shape[0]}x{m.shape[0]}, expected {size}x{size}")
    return m


def check_finite_rows(values: np.ndarray, what: str) -> None:
    """Raise :class:`EvaluationError` naming the first non-finite row."""
    bad = ~np.isfinite(values)
    if bad.any():
        row = int(np.argwhere(bad)[0][0])
        raise EvaluationError(f"non-finite {what} at sample index {row}")
