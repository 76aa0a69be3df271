"""Style-factor primitives and entropy-weight synthesis of factor groups.

The primitives turn daily/annual raw series into second-level factor
values. The entropy-weight method (EWM) then collapses each group of
second-level factors into one first-level score per stock and month, with
weights re-estimated every month from the trailing window.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import xlogy

from .panel import FactorPanel, MonthIndex


class FactorError(ValueError):
    pass


class InsufficientHistoryError(FactorError):
    pass


class UndefinedIRError(FactorError):
    pass


class UndefinedGrowthError(FactorError):
    pass


class UndefinedBetaError(FactorError):
    pass


class DegenerateWindowWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class DailySeries:
    dates: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates)
        values = np.asarray(self.values, dtype=float)
        if dates.shape != values.shape or values.ndim != 1:
            raise FactorError("dates and values must be aligned 1-D arrays")
        if dates.size > 1 and not np.all(dates[1:] > dates[:-1]):
            raise FactorError("dates must be strictly increasing")
        if not np.isfinite(values).all():
            raise FactorError("daily values must be finite")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size


def _as_values(s) -> np.ndarray:
    if isinstance(s, DailySeries):
        return s.values
    v = np.asarray(s, dtype=float)
    if v.ndim != 1 or not np.isfinite(v).all():
        raise FactorError("expected a finite 1-D series")
    return v


def _tail(s, window: int) -> np.ndarray:
    v = _as_values(s)
    if window < 1:
        raise FactorError("window must be positive")
    if v.size < window:
        raise InsufficientHistoryError(f"need {window} observations, have {v.size}")
    return v[-window:]


# dispersion below this fraction of the series' magnitude is rounding noise
_FLAT_RTOL = 1e-12


# ---------------------------------------------------------------------------
# Raw-factor primitives
# ---------------------------------------------------------------------------


def halflife_weighted_return(s, window: int, halflife: float = 60.0) -> float:
    """Exponentially weighted mean of the last ``window`` values.

    The newest observation has age 0 and weight 1; weights halve every
    ``halflife`` observations. ``halflife=inf`` gives the plain mean.
    """
    r = _tail(s, window)
    if halflife <= 0:
        raise FactorError("halflife must be positive")
    lam = 0.5 ** (1.0 / halflife) if math.isfinite(halflife) else 1.0
    ages = np.arange(window - 1, -1, -1, dtype=float)
    w = lam**ages
    return float(np.dot(w, r) / w.sum())


def industry_excess_ir(s, industry_mean, window: int = 20) -> float:
    """Mean over standard deviation of the excess over the industry mean."""
    e = _tail(s, window) - _tail(industry_mean, window)
    if window < 2:
        raise UndefinedIRError("need at least two observations")
    sd = e.std(ddof=1)
    if not sd > _FLAT_RTOL * np.abs(e).max():
        raise UndefinedIRError("excess series has zero dispersion")
    return float(e.mean() / sd)


def cgr(annual_values, years: int = 5) -> float:
    """Compound growth rate between the first and last of ``years`` values."""
    v = np.asarray(annual_values, dtype=float)
    if years < 2 or v.size < years:
        raise InsufficientHistoryError(f"need {years} annual values, have {v.size}")
    v = v[-years:]
    first, last = v[0], v[-1]
    if first <= 0 or last <= 0:
        raise UndefinedGrowthError(f"growth undefined from {first} to {last}")
    return float((last / first) ** (1.0 / (years - 1)) - 1.0)


def reversal_flip(stock_metric: float, market_avg: float, stock_return: float) -> float:
    """Flip the return's sign when the stock's metric is below the market average."""
    return float(stock_return) if stock_metric >= market_avg else -float(stock_return)


def ts_beta_residvol(stock, benchmark, window: int = 250) -> tuple[float, float]:
    """OLS slope of stock on benchmark returns and the residual sample std."""
    y = _tail(stock, window)
    x = _tail(benchmark, window)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if not math.sqrt(sxx / window) > _FLAT_RTOL * np.abs(x).max():
        raise UndefinedBetaError("benchmark has zero variance over the window")
    beta = float(xc @ (y - y.mean()) / sxx)
    resid = y - y.mean() - beta * xc
    return beta, float(resid.std(ddof=1))


# ---------------------------------------------------------------------------
# Entropy weight method
# ---------------------------------------------------------------------------


def _minmax(history: np.ndarray, current: np.ndarray | None):
    hist = np.asarray(history, dtype=float)
    finite = hist[np.isfinite(hist)]
    if finite.size == 0:
        raise InsufficientHistoryError("no observed values in the window")
    lo, hi = finite.min(), finite.max()
    if hi == lo:
        z_hist = np.where(np.isfinite(hist), 0.0, np.nan)
        z_cur = None if current is None else np.where(np.isfinite(current), 0.0, np.nan)
        return z_hist, z_cur, True
    span = hi - lo
    z_hist = (hist - lo) / span
    z_cur = None if current is None else np.clip((np.asarray(current, dtype=float) - lo) / span, 0.0, 1.0)
    return z_hist, z_cur, False


def ewm_standardize(history, current) -> np.ndarray:
    """Min-max scale ``current`` by the range of ``history`` (all stocks, all months).

    Values outside the historical range are clipped into ``[0, 1]``. A flat
    window maps everything to 0 and warns.
    """
    _, z, degenerate = _minmax(history, current)
    if degenerate:
        warnings.warn("flat window: min equals max", DegenerateWindowWarning, stacklevel=2)
    return z


def _entropy(z: np.ndarray, n_cells: int | None = None) -> tuple[float, bool]:
    z = np.asarray(z, dtype=float)
    z = z[np.isfinite(z)]
    if np.any(z < 0):
        raise FactorError("entropy inputs must be non-negative")
    n = z.size if n_cells is None else int(n_cells)
    if n < 2:
        raise FactorError("entropy needs at least two cells")
    total = z.sum()
    if total == 0:
        return 1.0, True
    p = z / total
    e = float(-xlogy(p, p).sum() / math.log(n))
    return min(max(e, 0.0), 1.0), False


def ewm_entropy(z, n_cells: int | None = None) -> float:
    """Normalized Shannon entropy of ``p = z / sum(z)`` over the window cells.

    ``n_cells`` defaults to the number of observed cells (``12 * N`` for a
    complete 12-month window). All-zero input returns 1 with a warning.
    """
    e, degenerate = _entropy(z, n_cells)
    if degenerate:
        warnings.warn("all window values are zero; entropy set to 1", DegenerateWindowWarning, stacklevel=2)
    return e


def _weights(entropies: Sequence[float]) -> tuple[np.ndarray, bool]:
    e = np.asarray(entropies, dtype=float)
    if e.size == 0:
        raise FactorError("a group needs at least one member")
    d = 1.0 - e
    total = d.sum()
    if not total > 0:
        return np.full(e.size, 1.0 / e.size), True
    return d / total, False


def ewm_weights(entropies: Sequence[float]) -> np.ndarray:
    """Weights proportional to ``1 - e``; equal weights (with a warning) if every e is 1."""
    w, degenerate = _weights(entropies)
    if degenerate:
        warnings.warn("all members carry zero information; equal weights used", DegenerateWindowWarning, stacklevel=2)
    return w


def ewm_aggregate(z_current, weights) -> np.ndarray:
    """First-level score per stock: ``z_current (N, m) @ weights (m,)``."""
    z = np.asarray(z_current, dtype=float)
    w = np.asarray(weights, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if z.shape[1] != w.size:
        raise FactorError(f"{z.shape[1]} member columns for {w.size} weights")
    return z @ w


@dataclass(frozen=True)
class FactorHierarchy:
    """Mapping from first-level group name to its ordered member factors."""

    groups: Mapping[str, tuple[str, ...]]

    def __post_init__(self):
        groups = {str(g): tuple(str(m) for m in ms) for g, ms in dict(self.groups).items()}
        seen: dict[str, str] = {}
        for g, members in groups.items():
            if not members:
                raise FactorError(f"group {g!r} has no members")
            for m in members:
                if m in seen:
                    raise FactorError(f"factor {m!r} listed under both {seen[m]!r} and {g!r}")
                seen[m] = g
        object.__setattr__(self, "groups", groups)

    @property
    def first_level(self) -> tuple[str, ...]:
        return tuple(self.groups)

    def members(self, group: str) -> tuple[str, ...]:
        return self.groups[group]

    @property
    def m(self) -> dict[str, int]:
        return {g: len(ms) for g, ms in self.groups.items()}

    @property
    def all_members(self) -> tuple[str, ...]:
        return tuple(m for ms in self.groups.values() for m in ms)

    def restrict(self, kept: Sequence[str]) -> "FactorHierarchy":
        """Drop members not in ``kept``; groups left empty disappear."""
        keep = set(kept)
        groups = {g: tuple(m for m in ms if m in keep) for g, ms in self.groups.items()}
        return FactorHierarchy({g: ms for g, ms in groups.items() if ms})

    @classmethod
    def round_robin(cls, factor_names: Sequence[str], n_groups: int, prefix: str = "G") -> "FactorHierarchy":
        groups: dict[str, list[str]] = {f"{prefix}{i + 1}": [] for i in range(n_groups)}
        keys = list(groups)
        for j, name in enumerate(factor_names):
            groups[keys[j % n_groups]].append(name)
        return cls({g: tuple(ms) for g, ms in groups.items() if ms})


@dataclass(frozen=True, eq=False)
class EntropyWeights:
    month: MonthIndex
    vintage: int
    window: tuple[MonthIndex, MonthIndex]
    w: dict[tuple[str, str], float]
    entropy: dict[tuple[str, str], float]

    def group_sum(self, group: str) -> float:
        return sum(v for (g, _), v in self.w.items() if g == group)


@dataclass(eq=False)
class SynthesisResult:
    panel: FactorPanel
    weights: list[EntropyWeights]
    flags: list[str] = field(default_factory=list)

    @property
    def n_vintages(self) -> int:
        return len({w.vintage for w in self.weights})

    def mean_weights(self) -> dict[tuple[str, str], float]:
        keys = self.weights[0].w.keys()
        return {k: float(np.mean([w.w[k] for w in self.weights])) for k in keys}


def _window_weights(x_members: list[np.ndarray], lo: int, hi: int, flags: list[str], label: str):
    entropies, z_hist_all, bounds = [], [], []
    for j, x in enumerate(x_members):
        z_hist, _, degenerate = _minmax(x[lo:hi], None)
        if degenerate:
            flags.append(f"{label}[{j}]: flat window")
        e, flat = _entropy(z_hist)
        if flat:
            flags.append(f"{label}[{j}]: all-zero window, entropy 1")
        entropies.append(e)
        z_hist_all.append(z_hist)
        finite = x[lo:hi][np.isfinite(x[lo:hi])]
        bounds.append((finite.min(), finite.max()))
    w, degenerate = _weights(entropies)
    if degenerate:
        flags.append(f"{label}: every member has entropy 1, equal weights")
    return np.array(entropies), w, z_hist_all, bounds


def _scale(x: np.ndarray, bounds: tuple[float, float]) -> np.ndarray:
    lo, hi = bounds
    if hi == lo:
        return np.where(np.isfinite(x), 0.0, np.nan)
    return np.clip((x - lo) / (hi - lo), 0.0, 1.0)


def rolling_synthesize(panel: FactorPanel, hierarchy: FactorHierarchy, window: int = 12) -> SynthesisResult:
    """Collapse second-level factors into first-level scores with rolling EWM weights.

    The first ``window`` months share one weight vintage estimated on
    themselves. Every later month ``t`` uses weights estimated on months
    ``[t - window, t - 1]`` and its own values min-max scaled by that window's
    range (clipped to ``[0, 1]``). Stocks with any missing member are NaN.
    """
    T = panel.n_months
    if T < window + 1:
        raise InsufficientHistoryError(f"need at least {window + 1} months, panel has {T}")
    missing = [m for m in hierarchy.all_members if m not in panel.factor_names]
    if missing:
        raise FactorError(f"hierarchy members not in panel: {missing}")

    groups = hierarchy.first_level
    out = np.full((T, panel.n_stocks, len(groups)), np.nan)
    per_month_w: list[dict] = [dict() for _ in range(T)]
    per_month_e: list[dict] = [dict() for _ in range(T)]
    flags: list[str] = []

    for gi, g in enumerate(groups):
        members = hierarchy.members(g)
        xs = [panel.factor(m) for m in members]
        # initial vintage, applied to its own window
        e, w, z_hist, _ = _window_weights(xs, 0, window, flags, f"{g}@{panel.months[0]}")
        z0 = np.stack(z_hist, axis=-1)  # (window, N, m)
        out[:window, :, gi] = z0 @ w
        for t in range(window):
            for j, m in enumerate(members):
                per_month_w[t][(g, m)] = float(w[j])
                per_month_e[t][(g, m)] = float(e[j])
        for t in range(window, T):
            e, w, _, bounds = _window_weights(xs, t - window, t, flags, f"{g}@{panel.months[t]}")
            zt = np.stack([_scale(x[t], b) for x, b in zip(xs, bounds)], axis=-1)
            out[t, :, gi] = zt @ w
            for j, m in enumerate(members):
                per_month_w[t][(g, m)] = float(w[j])
                per_month_e[t][(g, m)] = float(e[j])

    weights = []
    for t in range(T):
        if t < window:
            vintage, lo, hi = 0, 0, window - 1
        else:
            vintage, lo, hi = t - window + 1, t - window, t - 1
        weights.append(
            EntropyWeights(
                month=panel.months[t],
                vintage=vintage,
                window=(panel.months[lo], panel.months[hi]),
                w=per_month_w[t],
                entropy=per_month_e[t],
            )
        )
    return SynthesisResult(panel=panel.with_factors(groups, out), weights=weights, flags=flags)


def weight_table(
    result: SynthesisResult, hierarchy: FactorHierarchy, excluded: Sequence[str] = ()
) -> list[dict]:
    """Mean member weight per group over all months, with the exclusion source.

    ``excluded`` lists members removed before synthesis (screening); they
    report weight 0 with source ``"screening"``. Members whose mean EWM
    weight is exactly 0 report source ``"entropy"``.
    """
    means = result.mean_weights()
    excluded_set = set(excluded)
    rows = []
    for g, members in hierarchy.groups.items():
        for m in members:
            if m in excluded_set or (g, m) not in means:
                rows.append({"group": g, "member": m, "weight": 0.0, "excluded_by": "screening"})
                continue
            w = means[(g, m)]
            rows.append({"group": g, "member": m, "weight": w, "excluded_by": "entropy" if w == 0 else ""})
    return rows
