"""Closed-form, budget-one feature encoders.

Each encoder maps a batch of signals to codes with a single matrix
product plus a threshold, no iteration loop:

  soft_threshold    z = max(0, W^T x - lam)   (or the signed variant)
  fista_scaled      z = (1/L) soft_lam(W^T x), L the largest eigenvalue
                    of W^T W; the same features scaled by 1/L
  admm_onestep      z = soft_{lam/rho}((W^T W + rho I)^-1 W^T x), with
                    the operator matrix precomputed
  triangle          z_k = max(0, mu(x) - ||x - w_k||), mu the mean
                    distance to the atoms
  triangle_squared  squared-distance variant; on unit-norm dictionaries
                    identical to 2*max(0, W^T x - lam(x)) with the
                    data-dependent threshold lam(x) = mean_k w_k^T x

The first three coincide with one iteration of the corresponding solver
started from zero, which the test suite pins down exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import CodeBatch, Dictionary, as_dictionary, as_signal_batch, \
    lipschitz_constant
from .prox import nonneg_soft_threshold, soft_threshold

__all__ = [
    "SOFT_THRESHOLD",
    "FISTA_SCALED",
    "ADMM_ONESTEP",
    "TRIANGLE",
    "TRIANGLE_SQUARED",
    "ENCODER_KINDS",
    "OneStepEncoder",
    "encode_soft_threshold",
    "encode_fista_onestep",
    "encode_admm_onestep",
    "encode_triangle",
    "encode_triangle_squared",
    "split_dictionary",
]

SOFT_THRESHOLD = "soft_threshold"
FISTA_SCALED = "fista_scaled"
ADMM_ONESTEP = "admm_onestep"
TRIANGLE = "triangle"
TRIANGLE_SQUARED = "triangle_squared"
ENCODER_KINDS = (SOFT_THRESHOLD, FISTA_SCALED, ADMM_ONESTEP, TRIANGLE,
                 TRIANGLE_SQUARED)


def _threshold(v, t, non_negative):
    if non_negative:
        return nonneg_soft_threshold(v, t)
    return soft_threshold(v, t)


def encode_soft_threshold(w, x_batch, lam: float,
                          non_negative: bool = True) -> CodeBatch:
    """Soft threshold features: per column max(0, W^T x - lam), or the
    signed variant sign(W^T x) * max(0, |W^T x| - lam)."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    w = as_dictionary(w)
    x = as_signal_batch(x_batch)
    _check_dims(w, x)
    return CodeBatch(_threshold(w.atoms.T @ x.data, lam, non_negative))


def encode_fista_onestep(w, x_batch, lam: float,
                         non_negative: bool = True) -> CodeBatch:
    """Soft threshold features scaled by 1/L."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    w = as_dictionary(w)
    x = as_signal_batch(x_batch)
    _check_dims(w, x)
    lipschitz = lipschitz_constant(w)
    if lipschitz <= 0:
        raise ValueError("degenerate dictionary: Lipschitz constant is 0")
    return CodeBatch(
        _threshold(w.atoms.T @ x.data, lam, non_negative) / lipschitz)


def encode_admm_onestep(encoder: "OneStepEncoder", x_batch) -> CodeBatch:
    """soft_{lam/rho}(M x) with the precomputed operator
    M = (W^T W + rho I)^-1 W^T held on the encoder."""
    if encoder.kind != ADMM_ONESTEP:
        raise ValueError(f"encoder kind is {encoder.kind!r}, not admm_onestep")
    if encoder.precomputed is None:
        raise RuntimeError("admm_onestep encoder is missing its precomputed "
                           "operator matrix")
    x = as_signal_batch(x_batch)
    _check_dims(encoder.dictionary, x)
    return CodeBatch(_threshold(encoder.precomputed @ x.data,
                                encoder.lam / encoder.rho,
                                encoder.non_negative))


def _distances_sq(w: Dictionary, x) -> np.ndarray:
    # ||x - w_k||^2 expanded; clamp at 0 for near-duplicate atoms before
    # any square root.
    atom_sq = np.einsum("ij,ij->j", w.atoms, w.atoms)
    x_sq = np.einsum("ij,ij->j", x, x)
    d_sq = atom_sq[:, None] + x_sq[None, :] - 2.0 * (w.atoms.T @ x)
    return np.maximum(d_sq, 0.0)


def encode_triangle(w, x_batch) -> CodeBatch:
    """Triangle features max(0, mu(x) - ||x - w_k||) with mu(x) the mean
    distance of x to the atoms."""
    w = as_dictionary(w)
    x = as_signal_batch(x_batch)
    _check_dims(w, x)
    d = np.sqrt(_distances_sq(w, x.data))
    mu = d.mean(axis=0)
    return CodeBatch(np.maximum(mu[None, :] - d, 0.0))


def encode_triangle_squared(w, x_batch) -> CodeBatch:
    """Squared-distance triangle features max(0, mu2(x) - ||x - w_k||^2).

    On unit-norm dictionaries this equals 2*max(0, W^T x - lam(x)) with
    lam(x) the mean of the atom responses; with non-unit atoms the
    encoding is still computed but that identity does not hold, so a
    warning is emitted.
    """
    w = as_dictionary(w)
    x = as_signal_batch(x_batch)
    _check_dims(w, x)
    norms = np.linalg.norm(w.atoms, axis=0)
    if np.max(np.abs(norms - 1.0)) > 1e-8:
        warnings.warn("triangle_squared: atoms are not unit-norm; the "
                      "soft-threshold equivalence does not apply",
                      RuntimeWarning, stacklevel=2)
    d_sq = _distances_sq(w, x.data)
    mu2 = d_sq.mean(axis=0)
    return CodeBatch(np.maximum(mu2[None, :] - d_sq, 0.0))


def split_dictionary(w) -> Dictionary:
    """Return the split dictionary [W, -W] (2K atoms).

    Composes with any encoder to produce split encodings that separate
    positive and negative atom responses.
    """
    w = as_dictionary(w)
    return Dictionary(np.hstack([w.atoms, -w.atoms]), unit_norm=w.unit_norm)


def _check_dims(w: Dictionary, x):
    if w.n != x.n:
        from .core import DimensionMismatch

        raise DimensionMismatch(
            f"dictionary has {w.n} rows, signals have {x.n}")


@dataclass
class OneStepEncoder:
    """A configured closed-form encoder.

    ``rho`` and the precomputed operator matrix are only meaningful for
    the admm_onestep kind (the constructor builds the matrix through the
    dictionary's cached ridge solver, so the factored system stays n x n
    for overcomplete dictionaries).  The triangle kinds ignore ``lam``;
    their threshold is data dependent.
    """

    kind: str
    dictionary: Dictionary
    lam: float = 0.0
    rho: float | None = None
    non_negative: bool = True
    precomputed: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        self.dictionary = as_dictionary(self.dictionary)
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.kind == ADMM_ONESTEP:
            if self.rho is None or self.rho <= 0:
                raise ValueError("admm_onestep requires rho > 0")
            if self.precomputed is None:
                solve = self.dictionary.ridge_solver(self.rho)
                self.precomputed = solve(self.dictionary.atoms.T)
        else:
            if self.rho is not None:
                raise ValueError(f"rho is not used by {self.kind}")
            if self.precomputed is not None:
                raise ValueError(f"{self.kind} takes no precomputed matrix")

    def encode(self, signals) -> CodeBatch:
        if self.kind == SOFT_THRESHOLD:
            return encode_soft_threshold(self.dictionary, signals, self.lam,
                                         self.non_negative)
        if self.kind == FISTA_SCALED:
            return encode_fista_onestep(self.dictionary, signals, self.lam,
                                        self.non_negative)
        if self.kind == ADMM_ONESTEP:
            return encode_admm_onestep(self, signals)
        if self.kind == TRIANGLE:
            return encode_triangle(self.dictionary, signals)
        return encode_triangle_squared(self.dictionary, signals)
