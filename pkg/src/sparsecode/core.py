"""Shared containers and base operations for the sparse coding library.

Everything downstream (the iterative solvers, the one-step encoders, the
patch pipeline) works on the same three objects: a batch of input signals
stored column-wise, a dictionary of atoms, and the column-aligned batch of
codes.  Storing problems as columns means one matrix-matrix product updates
the whole batch at once.  All arithmetic is float64.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

__all__ = [
    "DimensionMismatch",
    "SignalBatch",
    "Dictionary",
    "CodeBatch",
    "SparseCodingProblem",
    "TraceRecord",
    "SolverTrace",
    "TERMINATION_BUDGET",
    "TERMINATION_CONVERGED",
    "TERMINATION_DIVERGED",
    "objective",
    "reconstruction_error",
    "mean_reconstruction_error",
    "lipschitz_constant",
    "as_dictionary",
    "as_signal_batch",
]

TERMINATION_BUDGET = "budget_exhausted"
TERMINATION_CONVERGED = "converged"
TERMINATION_DIVERGED = "diverged"

UNIT_NORM_TOL = 1e-8


class DimensionMismatch(ValueError):
    """Shapes of dictionary, signals and codes do not conform."""


def _as_2d_float(a, name):
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got ndim={arr.ndim}")
    return arr


@dataclass
class SignalBatch:
    """Batch of input vectors, one problem per column (n rows x m columns)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = _as_2d_float(self.data, "signals")
        if self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ValueError("signal batch must be at least 1x1")
        if not np.isfinite(self.data).all():
            raise ValueError("signal batch contains non-finite entries")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def m(self) -> int:
        return self.data.shape[1]


@dataclass
class CodeBatch:
    """Batch of coefficient vectors, column-aligned with a SignalBatch."""

    data: np.ndarray

    def __post_init__(self):
        self.data = _as_2d_float(self.data, "codes")

    @classmethod
    def zeros(cls, k: int, m: int) -> "CodeBatch":
        return cls(np.zeros((k, m)))

    @property
    def k(self) -> int:
        return self.data.shape[0]

    @property
    def m(self) -> int:
        return self.data.shape[1]


class Dictionary:
    """Dense dictionary of K atoms (columns of an n x K matrix).

    Derived quantities that are expensive or reused across solver runs
    (the gradient Lipschitz constant, the Gram matrix, ridge-system
    factorizations) are computed lazily and cached.  First computation is
    guarded by a lock so concurrent readers see a single consistent value.
    """

    def __init__(self, atoms, unit_norm: bool = False):
        self.atoms = _as_2d_float(atoms, "atoms")
        if not np.isfinite(self.atoms).all():
            raise ValueError("dictionary contains non-finite entries")
        self.unit_norm = bool(unit_norm)
        if self.unit_norm:
            norms = np.linalg.norm(self.atoms, axis=0)
            if np.max(np.abs(norms - 1.0)) > UNIT_NORM_TOL:
                raise ValueError("unit_norm set but atom norms deviate from 1")
        self._lock = threading.Lock()
        self._lipschitz = None
        self._lipschitz_degenerate = False
        self._gram = None
        self._ridge_solvers = {}

    @property
    def n(self) -> int:
        return self.atoms.shape[0]

    @property
    def k(self) -> int:
        return self.atoms.shape[1]

    @property
    def lipschitz(self) -> float:
        return lipschitz_constant(self)

    @property
    def lipschitz_degenerate(self) -> bool:
        lipschitz_constant(self)
        return self._lipschitz_degenerate

    @property
    def gram(self) -> np.ndarray:
        """Cached K x K Gram matrix of the atoms."""
        if self._gram is None:
            with self._lock:
                if self._gram is None:
                    self._gram = self.atoms.T @ self.atoms
        return self._gram

    def ridge_solver(self, rho: float):
        """Return a callable applying (W^T W + rho I)^-1 to a K x m matrix.

        The factorization is built once per (dictionary, rho) pair and
        reused.  For overcomplete dictionaries (K > n) the inversion
        identity (W^T W + rho I)^-1 = (I - W^T (W W^T + rho I)^-1 W) / rho
        keeps the factored system n x n.
        """
        if rho <= 0:
            raise ValueError(f"rho must be positive, got {rho}")
        key = float(rho)
        solver = self._ridge_solvers.get(key)
        if solver is not None:
            return solver
        with self._lock:
            solver = self._ridge_solvers.get(key)
            if solver is not None:
                return solver
            w = self.atoms
            n, k = w.shape
            if k <= n:
                factor = cho_factor(w.T @ w + key * np.eye(k))

                def solver(b, _f=factor):
                    return cho_solve(_f, b)

            else:
                factor = cho_factor(w @ w.T + key * np.eye(n))

                def solver(b, _f=factor, _w=w, _rho=key):
                    return (b - _w.T @ cho_solve(_f, _w @ b)) / _rho

            self._ridge_solvers[key] = solver
        return solver


def as_dictionary(w) -> Dictionary:
    return w if isinstance(w, Dictionary) else Dictionary(w)


def as_signal_batch(x) -> SignalBatch:
    return x if isinstance(x, SignalBatch) else SignalBatch(x)


@dataclass
class SparseCodingProblem:
    """One batch of l1-regularized reconstruction problems.

    Per column j the objective is 0.5 ||W z_j - x_j||^2 + lam ||z_j||_1,
    with codes additionally constrained to the positive orthant when
    ``non_negative`` is set.
    """

    dictionary: Dictionary
    signals: SignalBatch
    lam: float = 0.0
    non_negative: bool = False

    def __post_init__(self):
        self.dictionary = as_dictionary(self.dictionary)
        self.signals = as_signal_batch(self.signals)
        if self.dictionary.n != self.signals.n:
            raise DimensionMismatch(
                f"dictionary has {self.dictionary.n} rows, "
                f"signals have {self.signals.n}"
            )
        if self.lam < 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")

    @property
    def n(self) -> int:
        return self.signals.n

    @property
    def k(self) -> int:
        return self.dictionary.k

    @property
    def m(self) -> int:
        return self.signals.m


@dataclass
class TraceRecord:
    """Diagnostics for one solver iteration.

    ``seconds`` is cumulative wall-clock time spent in the iteration loop;
    setup (factorizations, precomputed products) is tracked separately on
    the trace.
    """

    iteration: int
    objective: float
    reconstruction_error: float
    seconds: float


@dataclass
class SolverTrace:
    records: list = field(default_factory=list)
    setup_seconds: float = 0.0
    termination: str = TERMINATION_BUDGET
    iterations_run: int = 0

    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    def reconstruction_errors(self) -> np.ndarray:
        return np.array([r.reconstruction_error for r in self.records])

    @property
    def final(self) -> TraceRecord:
        if not self.records:
            raise ValueError("empty trace")
        return self.records[-1]


def _check_conformance(problem: SparseCodingProblem, codes: CodeBatch):
    if codes.k != problem.k:
        raise DimensionMismatch(
            f"codes have {codes.k} rows, dictionary has {problem.k} atoms"
        )
    if codes.m != problem.m:
        raise DimensionMismatch(
            f"codes have {codes.m} columns, signals have {problem.m}"
        )


def objective(problem: SparseCodingProblem, codes: CodeBatch) -> np.ndarray:
    """Per-column objective 0.5 ||W z - x||^2 + lam ||z||_1.

    Columns that violate the non-negativity constraint (when the problem
    requires it) evaluate to +inf, i.e. the indicator on the positive
    orthant is part of the objective.
    """
    _check_conformance(problem, codes)
    z = codes.data
    resid = problem.dictionary.atoms @ z - problem.signals.data
    vals = 0.5 * np.einsum("ij,ij->j", resid, resid)
    vals += problem.lam * np.sum(np.abs(z), axis=0)
    if problem.non_negative:
        vals = np.where((z < 0).any(axis=0), np.inf, vals)
    return vals


def reconstruction_error(dictionary, codes: CodeBatch, signals) -> np.ndarray:
    """Per-column 2-norm of W z - x."""
    dictionary = as_dictionary(dictionary)
    signals = as_signal_batch(signals)
    if codes.k != dictionary.k or codes.m != signals.m or dictionary.n != signals.n:
        raise DimensionMismatch(
            f"shapes do not conform: W {dictionary.atoms.shape}, "
            f"z {codes.data.shape}, x {signals.data.shape}"
        )
    resid = dictionary.atoms @ codes.data - signals.data
    return np.linalg.norm(resid, axis=0)


def mean_reconstruction_error(dictionary, codes: CodeBatch, signals) -> float:
    return float(np.mean(reconstruction_error(dictionary, codes, signals)))


# Power iteration defaults: fixed start seed and tight tolerance so repeated
# builds produce identical cached constants.
_POWER_MAX_ITER = 1000
_POWER_TOL = 1e-9
_POWER_SEED = 0


def lipschitz_constant(dictionary: Dictionary) -> float:
    """Largest eigenvalue of W^T W, computed by power iteration and cached.

    A zero dictionary yields 0.0 and sets the ``lipschitz_degenerate``
    flag instead of raising.
    """
    dictionary = as_dictionary(dictionary)
    if dictionary._lipschitz is not None:
        return dictionary._lipschitz
    with dictionary._lock:
        if dictionary._lipschitz is not None:
            return dictionary._lipschitz
        value, degenerate = _power_iteration(dictionary.atoms)
        dictionary._lipschitz_degenerate = degenerate
        dictionary._lipschitz = value
    return dictionary._lipschitz


def _power_iteration(w: np.ndarray):
    rng = np.random.default_rng(_POWER_SEED)
    v = rng.standard_normal(w.shape[1])
    nrm = np.linalg.norm(v)
    v /= nrm
    lam = 0.0
    for _ in range(_POWER_MAX_ITER):
        u = w @ v
        lam_new = float(u @ u)  # Rayleigh quotient, since ||v|| == 1
        s = w.T @ u
        s_norm = np.linalg.norm(s)
        if s_norm == 0.0:
            return 0.0, True
        v = s / s_norm
        if abs(lam_new - lam) <= _POWER_TOL * max(lam_new, 1e-300):
            return lam_new, False
        lam = lam_new
    return lam, False
