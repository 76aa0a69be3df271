"""Panel data model, long-format ingestion, universe filtering and synthetic panels.

A :class:`FactorPanel` is a dense ``month x stock x factor`` tensor plus the
per-(month, stock) side information the pipeline needs (industry, market cap,
realized next-month return, exclusion flags) and one benchmark return per
month. Missing factor values are stored as ``NaN``; that is the only place a
``NaN`` may appear besides ``next_return`` for stock-months that have no
realized forward return.

``next_return[t, s]`` is the simple return of stock ``s`` over month ``t -> t+1``
and ``benchmark_return[t]`` is aligned the same way.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd


class PanelError(ValueError):
    """Base class for panel construction and ingestion errors."""


class PanelSchemaError(PanelError):
    def __init__(self, column: str, message: str | None = None):
        self.column = column
        super().__init__(message or f"missing required column: {column}")


class PanelParseError(PanelError):
    def __init__(self, line: int, column: str, value: str):
        self.line = line
        self.column = column
        super().__init__(f"line {line}: cannot parse {column}={value!r} as a number")


class PanelStructureError(PanelError):
    pass


class DuplicateRowError(PanelStructureError):
    pass


class MonthRangeError(PanelError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class DegenerateSpecError(PanelError):
    pass


@dataclass(frozen=True, order=True)
class MonthIndex:
    year: int
    month: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise ValueError(f"month must be in 1..12, got {self.month}")

    @classmethod
    def parse(cls, text: str) -> "MonthIndex":
        """Parse ``YYYY-MM`` (a trailing ``-DD`` is tolerated and ignored)."""
        parts = str(text).strip().split("-")
        if len(parts) < 2:
            raise ValueError(f"not a YYYY-MM month: {text!r}")
        return cls(int(parts[0]), int(parts[1]))

    @property
    def ordinal(self) -> int:
        return self.year * 12 + (self.month - 1)

    @classmethod
    def from_ordinal(cls, ordinal: int) -> "MonthIndex":
        return cls(ordinal // 12, ordinal % 12 + 1)

    def __add__(self, months: int) -> "MonthIndex":
        return MonthIndex.from_ordinal(self.ordinal + int(months))

    def __sub__(self, other):
        if isinstance(other, MonthIndex):
            return self.ordinal - other.ordinal
        return self + (-int(other))

    def __str__(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"


def month_range(start: MonthIndex, n: int) -> tuple[MonthIndex, ...]:
    return tuple(start + i for i in range(n))


def _frozen(a: np.ndarray, dtype=None) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class FactorPanel:
    stocks: tuple[str, ...]
    months: tuple[MonthIndex, ...]
    factor_names: tuple[str, ...]
    values: np.ndarray  # (T, N, F), NaN = missing
    industry: np.ndarray  # (T, N) str
    market_cap: np.ndarray  # (T, N)
    next_return: np.ndarray  # (T, N)
    is_st: np.ndarray
    is_suspended: np.ndarray
    is_new_listing: np.ndarray
    benchmark_return: np.ndarray  # (T,)

    def __post_init__(self):
        stocks = tuple(str(s) for s in self.stocks)
        months = tuple(self.months)
        names = tuple(str(f) for f in self.factor_names)
        if any(not s for s in stocks):
            raise PanelStructureError("empty stock id")
        if len(set(stocks)) != len(stocks):
            raise PanelStructureError("stock ids must be unique")
        if len(set(names)) != len(names):
            raise PanelStructureError("factor names must be unique")
        for a, b in zip(months, months[1:]):
            if b.ordinal - a.ordinal != 1:
                raise PanelStructureError(f"months are not contiguous: {a} -> {b}")
        T, N, F = len(months), len(stocks), len(names)
        object.__setattr__(self, "stocks", stocks)
        object.__setattr__(self, "months", months)
        object.__setattr__(self, "factor_names", names)

        checks = {
            "values": ((T, N, F), float),
            "market_cap": ((T, N), float),
            "next_return": ((T, N), float),
            "is_st": ((T, N), bool),
            "is_suspended": ((T, N), bool),
            "is_new_listing": ((T, N), bool),
            "benchmark_return": ((T,), float),
        }
        for name, (shape, dtype) in checks.items():
            arr = np.asarray(getattr(self, name))
            if arr.shape != shape:
                raise PanelStructureError(f"{name} has shape {arr.shape}, expected {shape}")
            object.__setattr__(self, name, _frozen(arr, dtype))
        ind = np.asarray(self.industry, dtype=object)
        if ind.shape != (T, N):
            raise PanelStructureError(f"industry has shape {ind.shape}, expected {(T, N)}")
        object.__setattr__(self, "industry", _frozen(ind.astype(str)))

        if np.isinf(self.values).any() or np.isinf(self.next_return).any():
            raise PanelStructureError("infinite values are not allowed")
        if not np.isfinite(self.benchmark_return).all():
            raise PanelStructureError("benchmark_return must be finite for every month")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def n_months(self) -> int:
        return len(self.months)

    @property
    def n_stocks(self) -> int:
        return len(self.stocks)

    def month_position(self, month: MonthIndex) -> int:
        if not self.months or not (self.months[0] <= month <= self.months[-1]):
            raise MonthRangeError(f"month {month} outside panel range")
        return month.ordinal - self.months[0].ordinal

    def factor(self, name: str) -> np.ndarray:
        """The ``(T, N)`` slice for one factor."""
        return self.values[:, :, self.factor_names.index(name)]

    def replace(self, **changes) -> "FactorPanel":
        data = {f: getattr(self, f) for f in self.__dataclass_fields__}
        data.update(changes)
        return FactorPanel(**data)

    def with_factors(self, names: Sequence[str], values: np.ndarray) -> "FactorPanel":
        return self.replace(factor_names=tuple(names), values=values)

    def select_factors(self, names: Sequence[str]) -> "FactorPanel":
        idx = [self.factor_names.index(n) for n in names]
        return self.with_factors(names, self.values[:, :, idx])

    def slice_months(self, start: int, stop: int) -> "FactorPanel":
        sl = slice(start, stop)
        return self.replace(
            months=self.months[sl],
            values=self.values[sl],
            industry=self.industry[sl],
            market_cap=self.market_cap[sl],
            next_return=self.next_return[sl],
            is_st=self.is_st[sl],
            is_suspended=self.is_suspended[sl],
            is_new_listing=self.is_new_listing[sl],
            benchmark_return=self.benchmark_return[sl],
        )

    def equals(self, other: "FactorPanel") -> bool:
        if not isinstance(other, FactorPanel):
            return False
        if (self.stocks, self.months, self.factor_names) != (other.stocks, other.months, other.factor_names):
            return False
        for name in ("values", "market_cap", "next_return", "benchmark_return"):
            if not np.array_equal(getattr(self, name), getattr(other, name), equal_nan=True):
                return False
        for name in ("industry", "is_st", "is_suspended", "is_new_listing"):
            if not np.array_equal(getattr(self, name), getattr(other, name)):
                return False
        return True


@dataclass(frozen=True, eq=False)
class UniverseMask:
    month: MonthIndex
    eligible: np.ndarray  # (N,) bool

    @property
    def count(self) -> int:
        return int(self.eligible.sum())


def eligibility(panel: FactorPanel) -> np.ndarray:
    """Eligibility for every (month, stock) at once, ``(T, N)`` bool."""
    return ~(panel.is_st | panel.is_suspended | panel.is_new_listing)


def filter_universe(panel: FactorPanel, month: MonthIndex) -> UniverseMask:
    t = panel.month_position(month)
    eligible = eligibility(panel)[t]
    return UniverseMask(month=month, eligible=_frozen(eligible, bool))


# ---------------------------------------------------------------------------
# Long-format I/O
# ---------------------------------------------------------------------------

DEFAULT_SCHEMA: dict[str, str] = {
    "date": "date",
    "ticker": "ticker",
    "industry": "industry",
    "market_cap": "market_cap",
    "next_return": "next_return",
    "is_st": "is_st",
    "is_suspended": "is_suspended",
    "is_new_listing": "is_new_listing",
    "benchmark_return": "benchmark_return",
}
_FLAGS = ("is_st", "is_suspended", "is_new_listing")
_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n", ""}


def _parse_float(raw: str, line: int, column: str, allow_missing: bool) -> float:
    text = raw.strip()
    if text == "":
        if allow_missing:
            return math.nan
        raise PanelParseError(line, column, raw)
    try:
        value = float(text)
    except ValueError:
        raise PanelParseError(line, column, raw) from None
    if math.isnan(value) and not allow_missing:
        raise PanelParseError(line, column, raw)
    if math.isinf(value):
        raise PanelParseError(line, column, raw)
    return value


def _parse_flag(raw: str, line: int, column: str) -> bool:
    text = raw.strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise PanelParseError(line, column, raw)


def load_panel(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    factors: Sequence[str] | None = None,
    delimiter: str = ",",
) -> FactorPanel:
    """Read a long-format delimited file (one row per month x ticker).

    ``schema`` maps canonical field names (see ``DEFAULT_SCHEMA``) to the
    column names used in the file. Every column not named by the schema is
    treated as a factor unless ``factors`` lists them explicitly.

    Stock-months absent from the file are stored as missing and marked
    suspended, so they never enter the universe.
    """
    colmap = dict(DEFAULT_SCHEMA)
    if schema:
        unknown = set(schema) - set(DEFAULT_SCHEMA)
        if unknown:
            raise PanelSchemaError(sorted(unknown)[0], f"unknown schema keys: {sorted(unknown)}")
        colmap.update(schema)

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise PanelSchemaError(colmap["date"], "empty file") from None
        rows = list(reader)

    position = {name: i for i, name in enumerate(header)}
    for canon in DEFAULT_SCHEMA:
        if colmap[canon] not in position:
            raise PanelSchemaError(canon)
    reserved = {colmap[c] for c in DEFAULT_SCHEMA}
    if factors is None:
        factor_cols = [h for h in header if h not in reserved]
    else:
        factor_cols = list(factors)
        for f in factor_cols:
            if f not in position:
                raise PanelSchemaError(f)
    if not factor_cols:
        raise PanelSchemaError("factor", "at least one factor column is required")

    records = []
    seen: set[tuple[MonthIndex, str]] = set()
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise PanelStructureError(f"line {lineno}: expected {len(header)} fields, found {len(row)}")
        get = lambda canon: row[position[colmap[canon]]]
        try:
            month = MonthIndex.parse(get("date"))
        except ValueError:
            raise PanelParseError(lineno, colmap["date"], get("date")) from None
        ticker = get("ticker").strip()
        if not ticker:
            raise PanelStructureError(f"line {lineno}: empty ticker")
        key = (month, ticker)
        if key in seen:
            raise DuplicateRowError(f"line {lineno}: duplicate row for ({month}, {ticker})")
        seen.add(key)
        mcap = _parse_float(get("market_cap"), lineno, colmap["market_cap"], allow_missing=False)
        if mcap <= 0:
            raise PanelParseError(lineno, colmap["market_cap"], get("market_cap"))
        records.append(
            (
                month,
                ticker,
                get("industry").strip(),
                mcap,
                _parse_float(get("next_return"), lineno, colmap["next_return"], allow_missing=True),
                [_parse_flag(get(f), lineno, colmap[f]) for f in _FLAGS],
                _parse_float(get("benchmark_return"), lineno, colmap["benchmark_return"], allow_missing=False),
                [_parse_float(row[position[f]], lineno, f, allow_missing=True) for f in factor_cols],
                lineno,
            )
        )
    if not records:
        raise PanelStructureError("file contains no data rows")

    month_set = sorted({r[0] for r in records})
    for a, b in zip(month_set, month_set[1:]):
        if b.ordinal - a.ordinal != 1:
            raise PanelStructureError(f"months are not contiguous: {a} -> {b}")
    stocks = sorted({r[1] for r in records})
    T, N, F = len(month_set), len(stocks), len(factor_cols)
    m_pos = {m: i for i, m in enumerate(month_set)}
    s_pos = {s: i for i, s in enumerate(stocks)}

    values = np.full((T, N, F), np.nan)
    industry = np.full((T, N), "", dtype=object)
    mcap = np.full((T, N), np.nan)
    nret = np.full((T, N), np.nan)
    flags = np.zeros((3, T, N), dtype=bool)
    flags[1] = True  # absent rows count as suspended
    bench = np.full(T, np.nan)
    for month, ticker, ind, cap, ret, fl, bret, fac, lineno in records:
        t, s = m_pos[month], s_pos[ticker]
        values[t, s] = fac
        industry[t, s] = ind
        mcap[t, s] = cap
        nret[t, s] = ret
        flags[:, t, s] = fl
        if np.isnan(bench[t]):
            bench[t] = bret
        elif bench[t] != bret:
            raise PanelStructureError(f"line {lineno}: benchmark_return differs within month {month}")

    # absent stock-months get a placeholder cap so the array stays finite-positive
    mcap = np.where(np.isnan(mcap), 1.0, mcap)
    return FactorPanel(
        stocks=tuple(stocks),
        months=tuple(month_set),
        factor_names=tuple(factor_cols),
        values=values,
        industry=industry,
        market_cap=mcap,
        next_return=nret,
        is_st=flags[0],
        is_suspended=flags[1],
        is_new_listing=flags[2],
        benchmark_return=bench,
    )


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def write_panel(panel: FactorPanel, path: str | Path, schema: Mapping[str, str] | None = None, delimiter: str = ",") -> None:
    """Write ``panel`` in the long format read by :func:`load_panel`.

    Floats are written with ``repr`` so the file round-trips exactly.
    """
    colmap = dict(DEFAULT_SCHEMA)
    if schema:
        colmap.update(schema)
    header = [colmap[c] for c in DEFAULT_SCHEMA] + list(panel.factor_names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(header)
        for t, month in enumerate(panel.months):
            for s, ticker in enumerate(panel.stocks):
                writer.writerow(
                    [
                        str(month),
                        ticker,
                        panel.industry[t, s],
                        _fmt(panel.market_cap[t, s]),
                        _fmt(panel.next_return[t, s]),
                        int(panel.is_st[t, s]),
                        int(panel.is_suspended[t, s]),
                        int(panel.is_new_listing[t, s]),
                        _fmt(panel.benchmark_return[t]),
                    ]
                    + [_fmt(v) for v in panel.values[t, s]]
                )


def panel_to_frame(panel: FactorPanel) -> pd.DataFrame:
    """Long-format ``DataFrame`` view, handy for ad-hoc analysis."""
    T, N, F = panel.shape
    frame = pd.DataFrame(
        {
            "date": np.repeat([str(m) for m in panel.months], N),
            "ticker": np.tile(panel.stocks, T),
            "industry": panel.industry.reshape(-1),
            "market_cap": panel.market_cap.reshape(-1),
            "next_return": panel.next_return.reshape(-1),
            "is_st": panel.is_st.reshape(-1),
            "is_suspended": panel.is_suspended.reshape(-1),
            "is_new_listing": panel.is_new_listing.reshape(-1),
            "benchmark_return": np.repeat(panel.benchmark_return, N),
        }
    )
    for j, name in enumerate(panel.factor_names):
        frame[name] = panel.values[:, :, j].reshape(-1)
    return frame


# ---------------------------------------------------------------------------
# Synthetic panels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SignalSpec:
    """Return-generating process for synthetic panels.

    ``next_return = sum_j coefficients[j] * factor_j
                  + sum_k c_k * f_a * f_b        (interactions)
                  + sum_k c_k * |f_a|            (abs_terms)
                  + market_vol * m_t + noise_scale * eps``

    ``coefficients`` shorter than the factor count are zero-padded.
    """

    coefficients: tuple[float, ...] = ()
    noise_scale: float = 0.1
    interactions: tuple[tuple[int, int, float], ...] = ()
    abs_terms: tuple[tuple[int, float], ...] = ()
    market_vol: float = 0.0
    persistence: float = 0.0
    n_industries: int = 5
    p_st: float = 0.0
    p_suspended: float = 0.0
    p_new_listing: float = 0.0
    factor_prefix: str = "f"
    factor_names: tuple[str, ...] | None = None

    def coefficient_vector(self, n_factors: int) -> np.ndarray:
        coefs = np.zeros(n_factors)
        given = np.asarray(self.coefficients, dtype=float)
        if given.size > n_factors:
            raise DegenerateSpecError(f"{given.size} coefficients for {n_factors} factors")
        coefs[: given.size] = given
        return coefs

    def is_degenerate(self, n_factors: int) -> bool:
        return (
            self.noise_scale == 0
            and self.market_vol == 0
            and not np.any(self.coefficient_vector(n_factors))
            and not any(c for *_, c in self.interactions)
            and not any(c for _, c in self.abs_terms)
        )


def generate_synthetic_panel(
    n_stocks: int,
    n_months: int,
    n_factors: int,
    signal_spec: SignalSpec,
    seed: int,
    start: MonthIndex = MonthIndex(2018, 1),
) -> FactorPanel:
    """Deterministic synthetic panel with planted linear/non-linear signal.

    Factors are standard normal cross-sections (optionally AR(1) across
    months via ``persistence``). Identical arguments give a bit-identical
    panel: one ``numpy`` Generator, drawn in a fixed order.
    """
    for name, n in (("n_stocks", n_stocks), ("n_months", n_months), ("n_factors", n_factors)):
        if int(n) < 2:
            raise DegenerateSpecError(f"{name} must be >= 2, got {n}")
    if signal_spec.is_degenerate(n_factors):
        raise DegenerateSpecError("zero noise with zero coefficients gives a constant return panel")
    if signal_spec.noise_scale < 0 or signal_spec.market_vol < 0:
        raise DegenerateSpecError("noise_scale and market_vol must be non-negative")
    rho = float(signal_spec.persistence)
    if not 0 <= rho < 1:
        raise DegenerateSpecError("persistence must lie in [0, 1)")

    rng = np.random.default_rng(seed)
    T, N, F = n_months, n_stocks, n_factors
    shocks = rng.standard_normal((T, N, F))
    values = np.empty((T, N, F))
    values[0] = shocks[0]
    scale = math.sqrt(1.0 - rho * rho)
    for t in range(1, T):
        values[t] = rho * values[t - 1] + scale * shocks[t]

    coefs = signal_spec.coefficient_vector(F)
    signal = values @ coefs
    for a, b, c in signal_spec.interactions:
        signal = signal + c * values[:, :, a] * values[:, :, b]
    for a, c in signal_spec.abs_terms:
        signal = signal + c * (np.abs(values[:, :, a]) - math.sqrt(2.0 / math.pi))
    eps = rng.standard_normal((T, N))
    market = rng.standard_normal(T)
    next_return = signal + signal_spec.noise_scale * eps + signal_spec.market_vol * market[:, None]

    n_ind = max(1, int(signal_spec.n_industries))
    ind_codes = rng.integers(0, n_ind, size=N)
    industry = np.tile(np.array([f"IND{c:02d}" for c in ind_codes], dtype=object), (T, 1))
    log_cap0 = rng.normal(np.log(5e10), 1.0, size=N)
    log_cap = log_cap0 + np.cumsum(rng.normal(0.0, 0.05, size=(T, N)), axis=0)
    market_cap = np.exp(log_cap)
    u = rng.random((3, T, N))
    is_st = u[0] < signal_spec.p_st
    is_suspended = u[1] < signal_spec.p_suspended
    is_new = u[2] < signal_spec.p_new_listing

    if signal_spec.factor_names is not None:
        names = tuple(signal_spec.factor_names)
        if len(names) != F:
            raise DegenerateSpecError("factor_names length must equal n_factors")
    else:
        width = max(2, len(str(F)))
        names = tuple(f"{signal_spec.factor_prefix}{j + 1:0{width}d}" for j in range(F))
    width = max(4, len(str(N)))
    stocks = tuple(f"{i + 1:0{width}d}.SZ" for i in range(N))
    return FactorPanel(
        stocks=stocks,
        months=month_range(start, T),
        factor_names=names,
        values=values,
        industry=industry,
        market_cap=market_cap,
        next_return=next_return,
        is_st=is_st,
        is_suspended=is_suspended,
        is_new_listing=is_new,
        benchmark_return=next_return.mean(axis=1),
    )
