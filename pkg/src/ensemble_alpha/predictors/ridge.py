"""Ridge regression with the penalty picked by generalized cross-validation."""

from __future__ import annotations

import numpy as np

DEFAULT_RIDGE_GRID = tuple(float(v) for v in np.logspace(-3, 3, 13))


def ridge_gcv(X, y, penalty_grid=DEFAULT_RIDGE_GRID):
    """Fit ``(X'X + lam I) b = X'y`` on centred data for the GCV-best ``lam``.

    Returns ``(beta, intercept, lam, gcv_scores)``. The intercept is not
    penalized. ``lam = 0`` is skipped when the design is rank deficient.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    if n == 0:
        raise ValueError("ridge needs at least one row")
    grid = np.asarray(penalty_grid, dtype=float)
    if grid.size == 0 or np.any(grid < 0):
        raise ValueError("penalty grid must be non-empty and non-negative")
    x_mean, y_mean = X.mean(axis=0), y.mean()
    Xc, yc = X - x_mean, y - y_mean
    U, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    uty = U.T @ yc
    s2 = s * s
    rank_deficient = p > n - 1 or (s.size and s[-1] <= s[0] * max(n, p) * np.finfo(float).eps) or s.size < p

    scores = np.full(grid.size, np.inf)
    for i, lam in enumerate(grid):
        if lam == 0 and rank_deficient:
            continue
        shrink = s2 / (s2 + lam) if lam > 0 else np.ones_like(s2)
        fitted = U @ (shrink * uty)
        rss = float(np.sum((yc - fitted) ** 2))
        df = float(shrink.sum())
        denom = (n - df) ** 2
        scores[i] = n * rss / denom if denom > 1e-12 else np.inf
    if np.all(np.isinf(scores)):
        positive = grid[grid > 0]
        if positive.size == 0:
            raise ValueError("singular design and no positive penalty in the grid")
        best = int(np.flatnonzero(grid == positive.min())[0])
    else:
        best = int(np.argmin(scores))
    lam = float(grid[best])
    if lam > 0:
        beta = Vt.T @ (s / (s2 + lam) * uty)
    else:
        beta = Vt.T @ (uty / s)
    intercept = float(y_mean - x_mean @ beta)
    return beta, intercept, lam, scores
