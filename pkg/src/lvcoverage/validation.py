"""Input validation helpers used at public API boundaries."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, DomainError


def check_array(x, name: str = "array", ndim: int | None = None,
                dtype=None, finite: bool = True) -> np.ndarray:
    """Coerce to ndarray and enforce rank/dtype/finiteness."""
    x = np.asarray(x, dtype=dtype)
    if ndim is not None and x.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-d, got ndim={x.ndim}")
    if finite and x.dtype.kind == "f" and not np.isfinite(x).all():
        raise DomainError(f"{name} contains non-finite values")
    return x


def check_triplet_blocks(x, input_hwd=(120, 120, 3)) -> np.ndarray:
    """Accept one block or a batch; always return (N, H, W, D)."""
    x = np.asarray(x)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != tuple(input_hwd):
        raise DimensionError(
            f"expected blocks shaped {tuple(input_hwd)}, got {x.shape}"
        )
    return x


def check_binary_labels(y, n: int | None = None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise DimensionError(f"labels must be 1-d, got ndim={y.ndim}")
    if n is not None and y.shape[0] != n:
        raise DimensionError(f"expected {n} labels, got {y.shape[0]}")
    if not np.isin(y, (0, 1)).all():
        raise DomainError("labels must be 0 or 1")
    return y.astype(np.int64)


def check_probability(p: float, name: str = "probability") -> float:
    p = float(p)
    if not 0 < p < 1:
        raise DomainError(f"{name} must lie in (0, 1), got {p}")
    return p
