"""Proximal operators for the l1 and non-negative l1 regularizers.

Both operators act elementwise, so they apply unchanged to scalars,
vectors and whole code batches.  ``t`` may be a scalar or anything that
broadcasts against ``v`` (the solvers use per-column thresholds).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ProxSpec", "soft_threshold", "nonneg_soft_threshold", "prox"]


def _check_threshold(t):
    t = np.asarray(t, dtype=np.float64)
    if (t < 0).any():
        raise ValueError("threshold must be non-negative")
    return t


def soft_threshold(v, t, out=None):
    """Elementwise sign(v) * max(0, |v| - t).

    Values with |v| <= t map to exactly 0.  Pass ``out`` (which may alias
    ``v``) to write the result in place; semantics are identical.
    """
    t = _check_threshold(t)
    v = np.asarray(v, dtype=np.float64)
    shrunk = np.maximum(np.abs(v) - t, 0.0)
    return np.multiply(np.sign(v), shrunk, out=out)


def nonneg_soft_threshold(v, t, out=None):
    """Elementwise max(0, v - t); the prox of lam||.||_1 plus the
    indicator on the positive orthant."""
    t = _check_threshold(t)
    v = np.asarray(v, dtype=np.float64)
    return np.maximum(v - t, 0.0, out=out)


@dataclass
class ProxSpec:
    """Threshold (the lam * step product) plus the orthant flag."""

    threshold: float
    non_negative: bool = False

    def __post_init__(self):
        if np.any(np.asarray(self.threshold) < 0):
            raise ValueError("threshold must be non-negative")


def prox(spec: ProxSpec, v, out=None):
    """Apply the configured proximal operator to ``v``."""
    if spec.non_negative:
        return nonneg_soft_threshold(v, spec.threshold, out=out)
    return soft_threshold(v, spec.threshold, out=out)
