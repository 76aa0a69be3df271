"""LASSO factor screening.

Objective (no 1/2 on the loss)::

    sum_i (y_i - x_i' b)^2 + lam * sum_j |b_j|

solved by cyclic coordinate descent on the Gram matrix. The coordinate
update is ``b_j = S(rho_j, lam / 2) / (x_j' x_j)`` with
``rho_j = x_j' (y - X b) + (x_j' x_j) b_j``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from .panel import FactorPanel, eligibility


class ScreeningError(ValueError):
    pass


class StandardizationError(ScreeningError):
    pass


class FoldError(ScreeningError):
    pass


@njit(cache=True)
def _coordinate_descent(G, c, lam, beta, tol, max_sweeps):
    p = G.shape[0]
    half = 0.5 * lam
    for sweep in range(max_sweeps):
        max_delta = 0.0
        for j in range(p):
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            rho = c[j] + gjj * beta[j]
            for k in range(p):
                rho -= G[j, k] * beta[k]
            if rho > half:
                new = (rho - half) / gjj
            elif rho < -half:
                new = (rho + half) / gjj
            else:
                new = 0.0
            delta = abs(new - beta[j])
            if delta > max_delta:
                max_delta = delta
            beta[j] = new
        if max_delta < tol:
            return sweep + 1, True
    return max_sweeps, False


@dataclass(frozen=True, eq=False)
class LassoFit:
    beta: np.ndarray
    intercept: float
    lam: float
    n_iter: int
    converged: bool

    def predict(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.beta + self.intercept

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(np.abs(self.beta) >= 1e-10)


def check_standardized(X: np.ndarray, mean_tol: float = 1e-6, std_tol: float = 1e-3) -> None:
    mu = X.mean(axis=0)
    sd = X.std(axis=0, ddof=1)
    bad_mean = np.flatnonzero(np.abs(mu) > mean_tol)
    bad_std = np.flatnonzero(np.abs(sd - 1.0) > std_tol)
    if bad_mean.size or bad_std.size:
        col = int(bad_mean[0] if bad_mean.size else bad_std[0])
        raise StandardizationError(f"column {col} is not standardized (mean={mu[col]:.3g}, std={sd[col]:.6g})")


def fit_lasso(
    X,
    y,
    lam: float,
    tol: float = 1e-7,
    max_sweeps: int = 10_000,
    beta0=None,
    require_standardized: bool = True,
) -> LassoFit:
    """Coordinate-descent LASSO on a standardized design.

    The intercept is the mean of ``y`` (columns of ``X`` are centred). Pass
    ``require_standardized=False`` for designs that are centred or
    orthonormal but not unit-variance.
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    if n < 2 or y.size != n:
        raise ScreeningError("need n >= 2 rows and a target of matching length")
    if lam < 0:
        raise ScreeningError("lambda must be non-negative")
    if require_standardized:
        check_standardized(X)
    y_mean = float(y.mean())
    yc = y - y_mean
    G = X.T @ X
    c = X.T @ yc
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    n_iter, converged = _coordinate_descent(G, c, float(lam), beta, float(tol), int(max_sweeps))
    intercept = y_mean - float(X.mean(axis=0) @ beta)
    return LassoFit(beta=beta, intercept=intercept, lam=float(lam), n_iter=int(n_iter), converged=bool(converged))


def kkt_residuals(X, y, fit: LassoFit) -> np.ndarray:
    """Per-coordinate violation of the optimality conditions (0 at the optimum)."""
    X = np.asarray(X, dtype=float)
    r = np.asarray(y, dtype=float) - fit.predict(X)
    g = 2.0 * X.T @ r
    active = fit.beta != 0
    out = np.empty_like(g)
    out[active] = np.abs(g[active] - fit.lam * np.sign(fit.beta[active]))
    out[~active] = np.maximum(np.abs(g[~active]) - fit.lam, 0.0)
    return out


def lambda_max(X, y) -> float:
    """Smallest penalty at which every coefficient is zero."""
    yc = np.asarray(y, dtype=float) - np.mean(y)
    return float(2.0 * np.max(np.abs(np.asarray(X, dtype=float).T @ yc)))


def default_grid(X, y, n_lambda: int = 30, min_ratio: float = 1e-3) -> np.ndarray:
    lmax = lambda_max(X, y)
    if lmax == 0:
        return np.array([1.0])
    return np.geomspace(lmax, lmax * min_ratio, n_lambda)


def _folds(n: int, k: int, groups, seed: int, shuffle: bool) -> list[np.ndarray]:
    if k < 2:
        raise FoldError("need at least 2 folds")
    if groups is not None:
        groups = np.asarray(groups)
        labels = np.unique(groups)
        if labels.size < k:
            raise FoldError(f"{labels.size} groups cannot fill {k} folds")
        if shuffle:
            labels = np.random.default_rng(seed).permutation(labels)
        blocks = np.array_split(labels, k)
        folds = [np.flatnonzero(np.isin(groups, b)) for b in blocks]
    else:
        if n < k:
            raise FoldError(f"{n} rows cannot fill {k} folds")
        order = np.random.default_rng(seed).permutation(n) if shuffle else np.arange(n)
        folds = [np.sort(f) for f in np.array_split(order, k)]
    if any(f.size == 0 for f in folds):
        raise FoldError("empty fold")
    return folds


def _standardize_fit(X: np.ndarray):
    mu = X.mean(axis=0)
    sd = X.std(axis=0, ddof=1)
    live = sd > 0
    Z = np.zeros_like(X)
    Z[:, live] = (X[:, live] - mu[live]) / sd[live]
    return Z, mu, np.where(live, sd, 1.0), live


def _path(Z, y, grid, tol, max_sweeps):
    """Fits along a descending grid with warm starts; returns coefficient rows."""
    betas = np.zeros((len(grid), Z.shape[1]))
    beta = np.zeros(Z.shape[1])
    for i, lam in enumerate(grid):
        fit = fit_lasso(Z, y, lam, tol, max_sweeps, beta0=beta, require_standardized=False)
        beta = fit.beta
        betas[i] = beta
    return betas


def cv_errors(
    X, y, grid: Sequence[float], k_folds: int = 5, seed: int = 0, groups=None, shuffle: bool = False,
    relaxed: bool = True, tol: float = 1e-7, max_sweeps: int = 10_000,
) -> np.ndarray:
    """Out-of-fold mean squared error, one row per fold and one column per grid value.

    With ``relaxed=True`` each grid point is scored by an unpenalized OLS
    refit on that point's support, so the error reflects which factors are
    selected rather than how much they are shrunk.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0 or np.any(grid <= 0):
        raise ScreeningError("grid must be non-empty and strictly positive")
    if np.any(np.diff(grid) >= 0):
        raise ScreeningError("grid must be sorted strictly descending")
    folds = _folds(len(y), k_folds, groups, seed, shuffle)
    errors = np.zeros((len(folds), grid.size))
    for f, val in enumerate(folds):
        train = np.ones(len(y), dtype=bool)
        train[val] = False
        Z, mu, sd, live = _standardize_fit(X[train])
        Z = Z[:, live]
        y_tr = y[train]
        betas = _path(Z, y_tr, grid, tol, max_sweeps)
        if relaxed:
            betas = _refit(Z, y_tr - y_tr.mean(), betas)
        Zv = (X[val][:, live] - mu[live]) / sd[live]
        pred = y_tr.mean() + Zv @ betas.T  # (n_val, n_grid)
        errors[f] = ((y[val][:, None] - pred) ** 2).mean(axis=0)
    return errors


def _refit(Z: np.ndarray, yc: np.ndarray, betas: np.ndarray) -> np.ndarray:
    out = np.zeros_like(betas)
    cache: dict[tuple, np.ndarray] = {}
    for i, b in enumerate(betas):
        support = tuple(np.flatnonzero(b != 0))
        if not support:
            continue
        if support not in cache:
            cols = list(support)
            cache[support] = np.linalg.lstsq(Z[:, cols], yc, rcond=None)[0]
        out[i, list(support)] = cache[support]
    return out


def cv_curve(X, y, grid: Sequence[float], k_folds: int = 5, seed: int = 0, groups=None, shuffle: bool = False,
             relaxed: bool = True) -> np.ndarray:
    """Mean out-of-fold squared error per grid value."""
    return cv_errors(X, y, grid, k_folds, seed, groups, shuffle, relaxed).mean(axis=0)


def _pick(errors: np.ndarray, rule: str) -> int:
    mean = errors.mean(axis=0)
    best = int(np.argmin(mean))  # descending grid: first minimum is the largest lambda
    if rule == "min":
        return best
    if rule == "1se":
        se = errors[:, best].std(ddof=1) / np.sqrt(errors.shape[0])
        return int(np.flatnonzero(mean <= mean[best] + se)[0])
    raise ScreeningError(f"unknown selection rule {rule!r}")


def select_lambda(
    X, y, grid: Sequence[float], k_folds: int = 5, seed: int = 0, groups=None, shuffle: bool = False,
    rule: str = "1se", relaxed: bool = True,
) -> float:
    """Cross-validated penalty from a descending grid.

    ``rule="min"`` takes the lowest mean error (ties to the larger penalty);
    ``rule="1se"`` takes the largest penalty within one standard error of it.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 1:
        if grid[0] <= 0:
            raise ScreeningError("grid must be strictly positive")
        return float(grid[0])
    errors = cv_errors(X, y, grid, k_folds, seed, groups, shuffle, relaxed)
    return float(grid[_pick(errors, rule)])


@dataclass
class ScreeningConfig:
    k_folds: int = 5
    n_lambda: int = 30
    lambda_min_ratio: float = 1e-3
    grid: tuple[float, ...] | None = None
    seed: int = 0
    threshold: float = 1e-10
    rule: str = "1se"
    relaxed: bool = True
    level: str = "second"  # or "first": screen synthesized scores instead


@dataclass
class ScreenResult:
    kept: list[str]
    excluded: list[str]
    lambda_selected: float
    cv_curve: list[tuple[float, float]]
    coefficients: dict[str, float] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        if set(self.kept) & set(self.excluded):
            raise ScreeningError("a factor cannot be both kept and excluded")

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def pooled_design(panel: FactorPanel, mask: np.ndarray | None = None):
    """Stack complete eligible (month, stock) rows; target demeaned within each month."""
    elig = eligibility(panel) if mask is None else mask
    X_rows, y_rows, g_rows = [], [], []
    for t in range(panel.n_months):
        x = panel.values[t]
        r = panel.next_return[t]
        ok = elig[t] & np.isfinite(r) & np.isfinite(x).all(axis=1)
        if ok.sum() < 2:
            continue
        X_rows.append(x[ok])
        y_rows.append(r[ok] - r[ok].mean())
        g_rows.append(np.full(ok.sum(), t))
    if not X_rows:
        raise ScreeningError("panel has no usable rows")
    return np.vstack(X_rows), np.concatenate(y_rows), np.concatenate(g_rows)


def screen_factors(panel: FactorPanel, config: ScreeningConfig | None = None, mask=None) -> ScreenResult:
    """Pool the (preprocessed) panel, cross-validate lambda, drop zero coefficients."""
    cfg = config or ScreeningConfig()
    X, y, groups = pooled_design(panel, mask)
    Z, _, _, live = _standardize_fit(X)
    names = list(panel.factor_names)
    Zl = Z[:, live]
    y = y - y.mean()
    grid = np.asarray(cfg.grid, dtype=float) if cfg.grid else default_grid(Zl, y, cfg.n_lambda, cfg.lambda_min_ratio)
    flags = [f"{names[j]}: constant column" for j in np.flatnonzero(~live)]
    if grid.size > 1:
        fold_errors = cv_errors(Zl, y, grid, cfg.k_folds, cfg.seed, groups, relaxed=cfg.relaxed)
        errors = fold_errors.mean(axis=0)
        lam = float(grid[_pick(fold_errors, cfg.rule)])
    else:
        errors = np.array([np.nan])
        lam = float(grid[0])
    full_path = _path(Zl, y, grid, 1e-7, 10_000)
    nnz = (np.abs(full_path) >= cfg.threshold).sum(axis=1)
    for i in np.flatnonzero(np.diff(nnz) < 0):
        flags.append(f"support shrank from {nnz[i]} to {nnz[i + 1]} as lambda fell to {grid[i + 1]:.4g}")
    fit = fit_lasso(Zl, y, lam)
    if not fit.converged:
        flags.append("final fit did not converge")
    beta = np.zeros(len(names))
    beta[live] = fit.beta
    kept = [n for n, b in zip(names, beta) if abs(b) >= cfg.threshold]
    excluded = [n for n, b in zip(names, beta) if abs(b) < cfg.threshold]
    return ScreenResult(
        kept=kept,
        excluded=excluded,
        lambda_selected=lam,
        cv_curve=[(float(a), float(b)) for a, b in zip(grid, errors)],
        coefficients={n: float(b) for n, b in zip(names, beta)},
        flags=flags,
    )
