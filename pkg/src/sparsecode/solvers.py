"""Iterative batch solvers for l1-regularized least squares.

Four algorithms share one interface: FISTA (accelerated proximal
gradient, Beck & Teboulle 2009), SpaRSA (proximal gradient with a
Barzilai-Borwein step, Wright et al. 2009), ADMM (Boyd et al. 2011) and
BLasso (boosting-style forward/backward coordinate steps, Zhao & Yu
2007).  All of them start from the fully sparse iterate z = 0; ADMM also
starts its scaled dual variable at 0.

Problems are solved in batch: the iterate is a K x m matrix and the
proximal-gradient updates become matrix-matrix products, so one call
encodes a whole column batch.  BLasso cannot be merged into matrix
products (each column updates a different coordinate), so its columns
are advanced in lock step with independent per-column state; results are
identical to solving each column on its own.

Every run returns the final codes plus a trace of per-iteration
objective, mean reconstruction error and cumulative wall time, with
setup time (factorizations, precomputed products) reported separately.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import (
    CodeBatch,
    SolverTrace,
    SparseCodingProblem,
    TERMINATION_BUDGET,
    TERMINATION_CONVERGED,
    TERMINATION_DIVERGED,
    TraceRecord,
    lipschitz_constant,
)
from .prox import nonneg_soft_threshold, soft_threshold

__all__ = [
    "FISTA",
    "SPARSA",
    "ADMM",
    "BLASSO",
    "ALGORITHMS",
    "SolverConfig",
    "FistaState",
    "SparsaState",
    "AdmmState",
    "BlassoState",
    "init_state",
    "fista_step",
    "sparsa_step",
    "admm_step",
    "blasso_step",
    "prox_gradient_step",
    "solve",
    "encode_batch",
    "SolverEncoder",
]

FISTA = "fista"
SPARSA = "sparsa"
ADMM = "admm"
BLASSO = "blasso"
ALGORITHMS = (FISTA, SPARSA, ADMM, BLASSO)

# SpaRSA safeguard: objectives are compared against the worst value in a
# short window; on violation the step is retried with doubled alpha.
SPARSA_MAX_RETRIES = 10


@dataclass
class SolverConfig:
    """Algorithm selection plus per-algorithm parameters.

    ``rho`` is required for ADMM and must be absent otherwise; likewise
    ``epsilon`` for BLasso.  ``convergence_tol`` stops a run early when
    the relative iterate change max-norm drops below it (0 disables).
    ``trace_every`` thins the trace (0 records only the final iterate).
    """

    algorithm: str
    max_iterations: int = 100
    rho: float | None = None
    epsilon: float | None = None
    convergence_tol: float = 1e-6
    sparsa_window: int = 5
    sparsa_alpha_bounds: tuple = (1e-30, 1e30)
    blasso_xi: float | None = None
    trace_every: int = 1

    def __post_init__(self):
        self.algorithm = self.algorithm.lower()
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.algorithm == ADMM:
            if self.rho is None or self.rho <= 0:
                raise ValueError("ADMM requires rho > 0")
        elif self.rho is not None:
            raise ValueError(f"rho is only valid for ADMM, not {self.algorithm}")
        if self.algorithm == BLASSO:
            if self.epsilon is None or self.epsilon <= 0:
                raise ValueError("BLasso requires epsilon > 0")
            if self.blasso_xi is not None and self.blasso_xi < 0:
                raise ValueError("blasso_xi must be non-negative")
        elif self.epsilon is not None:
            raise ValueError(f"epsilon is only valid for BLasso, not {self.algorithm}")
        if self.convergence_tol < 0:
            raise ValueError("convergence_tol must be non-negative")
        if self.sparsa_window < 1:
            raise ValueError("sparsa_window must be at least 1")
        lo, hi = self.sparsa_alpha_bounds
        if not (0 < lo <= hi):
            raise ValueError("sparsa_alpha_bounds must satisfy 0 < min <= max")
        if self.trace_every < 0:
            raise ValueError("trace_every must be non-negative")


def _prox(v, threshold, non_negative):
    if non_negative:
        return nonneg_soft_threshold(v, threshold)
    return soft_threshold(v, threshold)


def prox_gradient_step(problem: SparseCodingProblem, z: np.ndarray,
                       step_size: float) -> np.ndarray:
    """One plain proximal gradient step of the given size from iterate z."""
    w = problem.dictionary.atoms
    x = problem.signals.data
    g = z - step_size * (w.T @ (w @ z - x))
    return _prox(g, step_size * problem.lam, problem.non_negative)


# ---------------------------------------------------------------------------
# FISTA


@dataclass
class FistaState:
    """z is the current iterate, z_prev the one before it, y the momentum
    iterate and k the momentum scalar (1 at the start, strictly increasing)."""

    z: np.ndarray
    z_prev: np.ndarray
    y: np.ndarray
    k: float


def fista_step(state: FistaState, problem: SparseCodingProblem,
               lipschitz: float) -> FistaState:
    """One FISTA iteration with fixed step 1/L.

    Proximal gradient step at the momentum iterate y, then the scalar
    update k' = (1 + sqrt(1 + 4 k^2)) / 2 and the momentum combination
    y' = z_new + ((k - 1) / k') (z_new - z_old).  With k = 1 the momentum
    coefficient vanishes, so the first iteration is a plain proximal
    gradient step.
    """
    if lipschitz <= 0:
        raise ValueError("FISTA requires a positive Lipschitz constant")
    z_new = prox_gradient_step(problem, state.y, 1.0 / lipschitz)
    k_new = (1.0 + np.sqrt(1.0 + 4.0 * state.k * state.k)) / 2.0
    y_new = z_new + ((state.k - 1.0) / k_new) * (z_new - state.z)
    return FistaState(z=z_new, z_prev=state.z, y=y_new, k=k_new)


# ---------------------------------------------------------------------------
# SpaRSA


@dataclass
class SparsaState:
    """Per-column Barzilai-Borwein step scalars plus the recent objective
    window used by the non-monotone safeguard."""

    z: np.ndarray
    z_prev: np.ndarray
    alpha: np.ndarray  # (m,) BB scalars, clamped to the configured bounds
    objective_window: np.ndarray  # (w, m), w <= sparsa_window; empty at start


def _sparsa_objective(problem, z):
    w = problem.dictionary.atoms
    resid = w @ z - problem.signals.data
    return 0.5 * np.einsum("ij,ij->j", resid, resid) \
        + problem.lam * np.sum(np.abs(z), axis=0)


def sparsa_step(state: SparsaState, problem: SparseCodingProblem,
                window_size: int = 5,
                alpha_bounds: tuple = (1e-30, 1e30)) -> SparsaState:
    """One SpaRSA iteration.

    Proximal gradient step with per-column step 1/alpha, then the BB
    update alpha' = ||W s||^2 / ||s||^2 for s = z_new - z, clamped to
    ``alpha_bounds``.  A candidate whose objective exceeds the maximum of
    the recent objective window is retried with doubled alpha (up to
    SPARSA_MAX_RETRIES, then accepted); the window is empty on the first
    iteration, so the first step (alpha = 1) is always accepted.
    """
    w = problem.dictionary.atoms
    x = problem.signals.data
    z = state.z
    grad = w.T @ (w @ z - x)
    alpha = state.alpha.copy()

    cand = _prox(z - grad / alpha, problem.lam / alpha, problem.non_negative)
    f_new = _sparsa_objective(problem, cand)
    if state.objective_window.shape[0] > 0:
        window_max = state.objective_window.max(axis=0)
        slack = 1e-12 * np.maximum(1.0, np.abs(window_max))
        for _ in range(SPARSA_MAX_RETRIES):
            bad = f_new > window_max + slack
            if not bad.any():
                break
            alpha[bad] *= 2.0
            sub = _prox(z[:, bad] - grad[:, bad] / alpha[bad],
                        problem.lam / alpha[bad], problem.non_negative)
            cand[:, bad] = sub
            resid = w @ sub - x[:, bad]
            f_new[bad] = 0.5 * np.einsum("ij,ij->j", resid, resid) \
                + problem.lam * np.sum(np.abs(sub), axis=0)

    s = cand - z
    ws = w @ s
    s_sq = np.einsum("ij,ij->j", s, s)
    ws_sq = np.einsum("ij,ij->j", ws, ws)
    # Stalled columns (s == 0) keep their previous alpha.
    alpha_next = np.where(s_sq > 0, ws_sq / np.where(s_sq > 0, s_sq, 1.0), alpha)
    alpha_next = np.clip(alpha_next, alpha_bounds[0], alpha_bounds[1])

    window = np.vstack([state.objective_window, f_new[None, :]])
    if window.shape[0] > window_size:
        window = window[-window_size:]
    return SparsaState(z=cand, z_prev=z, alpha=alpha_next,
                       objective_window=window)


# ---------------------------------------------------------------------------
# ADMM


@dataclass
class AdmmState:
    """Primal x, split variable z (the returned codes) and scaled dual y.

    ``cached_solve`` applies (W^T W + rho I)^-1; ``wtx`` holds the
    precomputed W^T X.  Both are built once per run.
    """

    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    cached_solve: object
    wtx: np.ndarray


def admm_step(state: AdmmState, problem: SparseCodingProblem,
              rho: float) -> AdmmState:
    """One ADMM iteration in scaled form.

    x' = (W^T W + rho I)^-1 (W^T X + rho z - y)
    z' = prox_{lam/rho}(x' + y / rho)
    y' = y + rho (x' - z')

    The dual ascent step size is exactly rho, which keeps the iterates
    dual-feasible.  The x-update sign on the (rho z - y) term is the one
    under which the iteration converges to the lasso optimum; flipping it
    changes the fixed point to an elastic-net solution.
    """
    x_new = state.cached_solve(state.wtx + rho * state.z - state.y)
    z_new = _prox(x_new + state.y / rho, problem.lam / rho,
                  problem.non_negative)
    y_new = state.y + rho * (x_new - z_new)
    return AdmmState(x=x_new, z=z_new, y=y_new,
                     cached_solve=state.cached_solve, wtx=state.wtx)


# ---------------------------------------------------------------------------
# BLasso


@dataclass
class BlassoState:
    """Per-column BLasso state.

    ``l1_budget`` tracks ||z||_1 (the constraint level reached so far)
    and ``current_lambda`` the internal regularization estimate, which
    starts at +inf and only decreases.  ``corr`` caches W^T (W z - X) and
    ``loss`` the quadratic loss per column, both updated incrementally in
    O(K) per step via the Gram matrix.  ``done`` marks columns whose
    regularization path is exhausted.
    """

    z: np.ndarray
    l1_budget: np.ndarray  # (m,)
    current_lambda: np.ndarray  # (m,)
    loss: np.ndarray  # (m,) 0.5 ||W z - x||^2
    corr: np.ndarray  # (K, m) gradient cache W^T (W z - X)
    done: np.ndarray  # (m,) bool


def blasso_step(state: BlassoState, problem: SparseCodingProblem,
                epsilon: float, xi: float | None = None) -> BlassoState:
    """One BLasso iteration: per column either a forward step (the
    coordinate/sign pair with the best quadratic-loss decrease) or a
    backward step (shrinking one active coordinate by epsilon) when that
    reduces the penalized objective at the current internal lambda by
    more than xi.

    Exactly one coordinate changes per active column.  A column finishes
    when no backward step is admissible and the best forward step no
    longer decreases the loss.  Non-negative problems restrict forward
    steps to the positive sign.  The state is updated in place.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if xi is None:
        xi = epsilon * epsilon
    gram = problem.dictionary.gram
    gdiag = np.diag(gram)
    z, c = state.z, state.corr
    eps = float(epsilon)

    # Forward candidate: loss change for z_k += s*eps is
    # s*eps*c_k + eps^2/2 * G_kk, minimized over (k, s).
    half_curv = 0.5 * eps * eps * gdiag[:, None]
    if problem.non_negative:
        fwd_delta = eps * c + half_curv
        fwd_sign = None
    else:
        fwd_delta = -eps * np.abs(c) + half_curv
        fwd_sign = np.where(c > 0, -1.0, 1.0)
    fk = np.argmin(fwd_delta, axis=0)
    cols_all = np.arange(z.shape[1])
    fdelta = fwd_delta[fk, cols_all]

    # Backward candidate: z_k -= sign(z_k)*eps over active coordinates.
    active = np.abs(z) > eps / 2
    bwd_delta = np.where(active, -eps * np.sign(z) * c + half_curv, np.inf)
    bk = np.argmin(bwd_delta, axis=0)
    bdelta = bwd_delta[bk, cols_all]
    has_active = active.any(axis=0)

    # Backward steps must improve the lasso objective at the internal
    # lambda by more than xi: delta_loss - lambda*eps < -xi.
    take_backward = has_active & (bdelta < state.current_lambda * eps - xi)
    path_end = ~take_backward & (fdelta >= 0)
    stepping = ~state.done & ~path_end

    cols = np.nonzero(stepping)[0]
    if cols.size:
        back = take_backward[cols]
        kidx = np.where(back, bk[cols], fk[cols])
        if problem.non_negative:
            delta = np.where(back, -eps * np.sign(z[kidx, cols]), eps)
        else:
            delta = np.where(back, -eps * np.sign(z[kidx, cols]),
                             fwd_sign[kidx, cols] * eps)
        old = z[kidx, cols]
        new = old + delta
        new[np.abs(new) < eps * 1e-9] = 0.0  # snap float residue to exact zero
        eff = new - old
        dloss = eff * c[kidx, cols] + 0.5 * eff * eff * gdiag[kidx]
        z[kidx, cols] = new
        state.loss[cols] += dloss
        state.l1_budget[cols] += np.abs(new) - np.abs(old)
        c[:, cols] += eff[None, :] * gram[:, kidx]
        fwd_cols = cols[~back]
        if fwd_cols.size:
            cand = -dloss[~back] / eps
            state.current_lambda[fwd_cols] = np.minimum(
                state.current_lambda[fwd_cols], cand)
    state.done |= path_end
    return state


# ---------------------------------------------------------------------------
# Shared driver


def init_state(problem: SparseCodingProblem, config: SolverConfig):
    """Build the start state for the configured algorithm (z = 0
    everywhere; ADMM also starts with y = 0)."""
    k, m = problem.k, problem.m
    z0 = np.zeros((k, m))
    if config.algorithm == FISTA:
        return FistaState(z=z0, z_prev=z0.copy(), y=z0.copy(), k=1.0)
    if config.algorithm == SPARSA:
        # First-iteration step size is 1 (no previous iterates for BB).
        return SparsaState(z=z0, z_prev=z0.copy(), alpha=np.ones(m),
                           objective_window=np.empty((0, m)))
    if config.algorithm == ADMM:
        solver = problem.dictionary.ridge_solver(config.rho)
        wtx = problem.dictionary.atoms.T @ problem.signals.data
        return AdmmState(x=z0.copy(), z=z0, y=np.zeros((k, m)),
                         cached_solve=solver, wtx=wtx)
    if config.algorithm == BLASSO:
        x = problem.signals.data
        return BlassoState(
            z=z0,
            l1_budget=np.zeros(m),
            current_lambda=np.full(m, np.inf),
            loss=0.5 * np.einsum("ij,ij->j", x, x),
            corr=-(problem.dictionary.atoms.T @ x),
            done=np.zeros(m, dtype=bool),
        )
    raise ValueError(f"unknown algorithm {config.algorithm!r}")


def _advance(state, problem, config, lipschitz):
    if config.algorithm == FISTA:
        return fista_step(state, problem, lipschitz)
    if config.algorithm == SPARSA:
        return sparsa_step(state, problem, config.sparsa_window,
                           config.sparsa_alpha_bounds)
    if config.algorithm == ADMM:
        return admm_step(state, problem, config.rho)
    return blasso_step(state, problem, config.epsilon, config.blasso_xi)


def _state_is_finite(state, algorithm):
    if not np.isfinite(state.z).all():
        return False
    if algorithm == FISTA:
        return np.isfinite(state.y).all()
    if algorithm == ADMM:
        return np.isfinite(state.x).all() and np.isfinite(state.y).all()
    return True


def _record(records, problem, z, iteration, seconds):
    resid = problem.dictionary.atoms @ z - problem.signals.data
    sq = np.einsum("ij,ij->j", resid, resid)
    obj = float(np.mean(0.5 * sq + problem.lam * np.sum(np.abs(z), axis=0)))
    rec = float(np.mean(np.sqrt(sq)))
    records.append(TraceRecord(iteration=iteration, objective=obj,
                               reconstruction_error=rec, seconds=seconds))


def solve(problem: SparseCodingProblem,
          config: SolverConfig) -> tuple[CodeBatch, SolverTrace]:
    """Run the configured algorithm from z = 0 for at most
    ``max_iterations`` iterations.

    Stops early once the relative iterate change max-norm falls below
    ``convergence_tol``, or, for BLasso, when every column has exhausted
    its regularization path.  If a non-finite value appears mid-run the
    last finite iterate is returned and the trace is marked diverged.
    Non-negative problems use the non-negative prox/threshold variant
    throughout, so the returned codes are elementwise >= 0.
    """
    setup_start = time.perf_counter()
    lipschitz = None
    if config.algorithm == FISTA:
        lipschitz = lipschitz_constant(problem.dictionary)
        if lipschitz <= 0:
            raise ValueError("degenerate dictionary: Lipschitz constant is 0")
    state = init_state(problem, config)
    trace = SolverTrace(setup_seconds=time.perf_counter() - setup_start)

    z_prev = state.z.copy() if config.algorithm == BLASSO else state.z
    termination = TERMINATION_BUDGET
    iterations = 0
    loop_start = time.perf_counter()
    for it in range(1, config.max_iterations + 1):
        state = _advance(state, problem, config, lipschitz)
        if not _state_is_finite(state, config.algorithm):
            state.z = z_prev
            termination = TERMINATION_DIVERGED
            break
        iterations = it
        z = state.z
        if config.trace_every and it % config.trace_every == 0:
            _record(trace.records, problem, z, it,
                    time.perf_counter() - loop_start)
        denom = max(1.0, float(np.max(np.abs(z_prev))))
        change = float(np.max(np.abs(z - z_prev))) / denom
        if config.convergence_tol > 0 and change < config.convergence_tol:
            termination = TERMINATION_CONVERGED
            break
        if config.algorithm == BLASSO and state.done.all():
            termination = TERMINATION_CONVERGED
            break
        z_prev = z.copy() if config.algorithm == BLASSO else z

    if not trace.records or trace.records[-1].iteration != iterations:
        if iterations > 0:
            _record(trace.records, problem, state.z, iterations,
                    time.perf_counter() - loop_start)
    trace.termination = termination
    trace.iterations_run = iterations
    return CodeBatch(state.z), trace


def encode_batch(problem: SparseCodingProblem,
                 config: SolverConfig) -> tuple[CodeBatch, SolverTrace]:
    """Batch encoding entry point; identical to ``solve``.

    FISTA/SpaRSA/ADMM advance the whole batch through matrix-matrix
    products; BLasso advances columns in lock step.  Either way the
    result per column matches solving that column alone.
    """
    return solve(problem, config)


@dataclass
class SolverEncoder:
    """Adapter giving a budgeted solver the one-step encoder interface.

    ``encode`` solves the batch and returns the codes; the last trace and
    accumulated setup seconds are kept for timing bookkeeping.
    """

    dictionary: object
    lam: float
    config: SolverConfig
    non_negative: bool = True

    def __post_init__(self):
        self.last_trace = None
        self.setup_seconds_total = 0.0
        self.diverged_count = 0

    def encode(self, signals) -> CodeBatch:
        problem = SparseCodingProblem(self.dictionary, signals,
                                      self.lam, self.non_negative)
        codes, trace = solve(problem, self.config)
        self.last_trace = trace
        self.setup_seconds_total += trace.setup_seconds
        if trace.termination == TERMINATION_DIVERGED:
            self.diverged_count += 1
        return codes
