"""Independent reference implementations used to check the library.

These deliberately share no code with the package: coordinate descent
for the lasso, dense grid search for the scalar prox problems, and a
direct dense solve for the ridge system.  They are validated against
closed-form scalar cases in test_solvers.py before anything else trusts
them.
"""

import numpy as np


def grid_prox(v: float, t: float, non_negative: bool = False,
              spacing: float = 1e-4) -> float:
    """Brute-force argmin over u of t*|u| + 0.5*(u - v)^2 on a grid."""
    lo, hi = min(0.0, v) - 1.0, max(0.0, v) + 1.0
    if non_negative:
        lo = 0.0
    grid = np.arange(lo, hi + spacing, spacing)
    vals = t * np.abs(grid) + 0.5 * (grid - v) ** 2
    return float(grid[np.argmin(vals)])


def lasso_objective(w, x, z, lam):
    return 0.5 * np.sum((w @ z - x) ** 2) + lam * np.sum(np.abs(z))


def cd_lasso(w, x, lam, non_negative=False, max_sweeps=100_000,
             stall_tol=1e-14):
    """Coordinate descent on 0.5||Wz - x||^2 + lam||z||_1, run until the
    objective stalls.  Returns the final iterate."""
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float).ravel()
    k = w.shape[1]
    col_sq = np.einsum("ij,ij->j", w, w)
    z = np.zeros(k)
    r = x.copy()  # residual x - W z
    f_prev = lasso_objective(w, x, z, lam)
    for _ in range(max_sweeps):
        for j in range(k):
            if col_sq[j] == 0.0:
                continue
            r += w[:, j] * z[j]
            rho = w[:, j] @ r
            if non_negative:
                zj = max(0.0, rho - lam) / col_sq[j]
            else:
                zj = np.sign(rho) * max(0.0, abs(rho) - lam) / col_sq[j]
            z[j] = zj
            r -= w[:, j] * zj
        f = lasso_objective(w, x, z, lam)
        if f_prev - f < stall_tol * max(1.0, abs(f)):
            break
        f_prev = f
    return z


def cd_lasso_batch(w, x_batch, lam, non_negative=False, **kw):
    x_batch = np.atleast_2d(np.asarray(x_batch, dtype=float))
    if x_batch.shape[0] != w.shape[0]:
        x_batch = x_batch.T
    return np.column_stack([cd_lasso(w, x_batch[:, j], lam, non_negative, **kw)
                            for j in range(x_batch.shape[1])])


def dense_ridge_solution(w, x_batch, rho):
    """(W^T W + rho I)^-1 W^T x via a direct K x K dense solve."""
    w = np.asarray(w, dtype=float)
    k = w.shape[1]
    return np.linalg.solve(w.T @ w + rho * np.eye(k), w.T @ x_batch)
