"""Cross-sectional factor cleaning.

Canonical order per (month, factor): industry-median imputation, MAD
winsorization, z-score, then OLS neutralization against industry dummies
and (unless the factor is size-like) log market cap.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .panel import FactorPanel, eligibility


class PreprocessError(ValueError):
    pass


class UnimputableError(PreprocessError):
    pass


class ConstantVectorError(PreprocessError):
    pass


class UnderdeterminedError(PreprocessError):
    pass


class DegenerateDispersionWarning(UserWarning):
    pass


class CollinearityWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class CrossSection:
    stock_ids: tuple[str, ...]
    values: np.ndarray
    industry: np.ndarray
    log_mcap: np.ndarray

    def __post_init__(self):
        n = len(self.stock_ids)
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        object.__setattr__(self, "industry", np.asarray(self.industry, dtype=object))
        object.__setattr__(self, "log_mcap", np.asarray(self.log_mcap, dtype=float))
        if not (len(self.values) == len(self.industry) == len(self.log_mcap) == n):
            raise PreprocessError("cross-section arrays must have equal length")

    def with_values(self, values: np.ndarray) -> "CrossSection":
        return CrossSection(self.stock_ids, values, self.industry, self.log_mcap)


def impute_missing(cs: CrossSection) -> CrossSection:
    """Fill NaNs with the industry median, falling back to the pool median."""
    v = cs.values.copy()
    missing = np.isnan(v)
    if not missing.any():
        return cs.with_values(v)
    if missing.all():
        raise UnimputableError("all values missing; nothing to impute from")
    pool_median = float(np.median(v[~missing]))
    for label in np.unique(cs.industry[missing]):
        in_ind = cs.industry == label
        known = v[in_ind & ~missing]
        fill = float(np.median(known)) if known.size else pool_median
        v[in_ind & missing] = fill
    return cs.with_values(v)


def _winsorize(values: np.ndarray, k: float) -> tuple[np.ndarray, bool]:
    v = np.asarray(values, dtype=float)
    finite = v[np.isfinite(v)]
    if finite.size < 2:
        raise PreprocessError("winsorize_mad needs at least 2 finite values")
    m = np.median(finite)
    mad = np.median(np.abs(finite - m))
    if mad == 0:
        return v.copy(), True
    return np.clip(v, m - k * mad, m + k * mad), False


def winsorize_mad(values, k: float = 3.0) -> np.ndarray:
    """Clip to ``median +/- k * MAD`` (unscaled MAD).

    When MAD is zero the input is returned unchanged and a
    :class:`DegenerateDispersionWarning` is emitted.
    """
    out, degenerate = _winsorize(values, k)
    if degenerate:
        warnings.warn("MAD is zero; values left unchanged", DegenerateDispersionWarning, stacklevel=2)
    return out


def zscore(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    sd = v.std(ddof=1) if v.size > 1 else 0.0
    if not sd > 0:
        raise ConstantVectorError("zero standard deviation")
    return (v - v.mean()) / sd


def _design(cs: CrossSection, include_size: bool) -> np.ndarray:
    n = len(cs.stock_ids)
    cols = [np.ones(n)]
    labels = sorted(set(cs.industry.tolist()))
    for label in labels[1:]:  # first label is the reference level
        cols.append((cs.industry == label).astype(float))
    if include_size:
        cols.append(cs.log_mcap)
    return np.column_stack(cols)


def _independent_columns(X: np.ndarray, rtol: float = 1e-10) -> list[int]:
    """Greedy left-to-right column selection; keeps the lowest index of a collinear set."""
    kept: list[int] = []
    Q = np.empty((X.shape[0], 0))
    for j in range(X.shape[1]):
        col = X[:, j]
        norm = np.linalg.norm(col)
        if norm == 0:
            continue
        resid = col - Q @ (Q.T @ col)
        resid = resid - Q @ (Q.T @ resid)  # re-orthogonalize
        rn = np.linalg.norm(resid)
        if rn > rtol * max(norm, 1.0):
            kept.append(j)
            Q = np.column_stack([Q, resid / rn])
    return kept


def _neutralize(cs: CrossSection, include_size: bool) -> tuple[np.ndarray, list[int]]:
    X = _design(cs, include_size)
    kept = _independent_columns(X)
    dropped = [j for j in range(X.shape[1]) if j not in kept]
    n = X.shape[0]
    if n <= len(kept):
        raise UnderdeterminedError(f"{n} stocks for {len(kept)} regressors")
    Xk = X[:, kept]
    Q, _ = np.linalg.qr(Xk)
    y = cs.values
    resid = y - Q @ (Q.T @ y)
    resid = resid - Q @ (Q.T @ resid)
    return resid, dropped


def neutralize(cs: CrossSection, include_size: bool = True) -> np.ndarray:
    """OLS residuals of the factor on intercept + industry dummies (+ log cap).

    Collinear regressors are dropped left to right and reported with a
    :class:`CollinearityWarning`.
    """
    if np.isnan(cs.values).any():
        raise PreprocessError("neutralize requires a complete cross-section; impute first")
    resid, dropped = _neutralize(cs, include_size)
    if dropped:
        warnings.warn(f"dropped collinear regressor columns {dropped}", CollinearityWarning, stacklevel=2)
    return resid


@dataclass
class PreprocessDiagnostics:
    degenerate_mad: int = 0
    constant: int = 0
    collinear: int = 0
    imputed: int = 0
    events: list[str] = field(default_factory=list)


def preprocess_cross_section(
    cs: CrossSection, include_size: bool, k: float = 3.0, diagnostics: PreprocessDiagnostics | None = None
) -> np.ndarray:
    """impute -> winsorize -> zscore -> neutralize for one (month, factor)."""
    diag = diagnostics if diagnostics is not None else PreprocessDiagnostics()
    diag.imputed += int(np.isnan(cs.values).sum())
    cs = impute_missing(cs)
    v, degenerate = _winsorize(cs.values, k)
    diag.degenerate_mad += int(degenerate)
    sd = v.std(ddof=1)
    if not sd > 0:
        diag.constant += 1
        return np.zeros_like(v)
    v = (v - v.mean()) / sd
    resid, dropped = _neutralize(cs.with_values(v), include_size)
    diag.collinear += int(bool(dropped))
    return resid


def preprocess_panel(
    panel: FactorPanel,
    size_factors: Iterable[str] = (),
    k: float = 3.0,
    mask: np.ndarray | None = None,
) -> tuple[FactorPanel, PreprocessDiagnostics]:
    """Clean every (month, factor) cross-section over the eligible universe.

    Ineligible stock-months come back as NaN. Factors named in
    ``size_factors`` are industry-centred only.
    """
    size_set = set(size_factors)
    unknown = size_set - set(panel.factor_names)
    if unknown:
        raise PreprocessError(f"unknown size factors: {sorted(unknown)}")
    elig = eligibility(panel) if mask is None else np.asarray(mask, dtype=bool)
    out = np.full(panel.values.shape, np.nan)
    diag = PreprocessDiagnostics()
    log_cap = np.log(panel.market_cap)
    for t in range(panel.n_months):
        idx = np.flatnonzero(elig[t])
        if idx.size < 3:
            diag.events.append(f"{panel.months[t]}: only {idx.size} eligible stocks, month left empty")
            continue
        ids = tuple(panel.stocks[i] for i in idx)
        for j, name in enumerate(panel.factor_names):
            raw = panel.values[t, idx, j]
            if np.isnan(raw).all():
                diag.events.append(f"{panel.months[t]}/{name}: all missing")
                continue
            cs = CrossSection(ids, raw, panel.industry[t, idx], log_cap[t, idx])
            out[t, idx, j] = preprocess_cross_section(cs, include_size=name not in size_set, k=k, diagnostics=diag)
    return panel.with_factors(panel.factor_names, out), diag


def cross_sectional_standardize(x: np.ndarray) -> np.ndarray:
    """Z-score a vector (or each column of a matrix); constant columns map to 0."""
    x = np.asarray(x, dtype=float)
    mu = x.mean(axis=0)
    sd = x.std(axis=0, ddof=1) if x.shape[0] > 1 else np.zeros_like(mu)
    sd = np.where(sd > 0, sd, np.inf)
    return (x - mu) / sd
