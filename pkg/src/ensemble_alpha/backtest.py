"""Walk-forward backtest: train on a trailing window, predict, combine, trade.

Timing convention: features of month ``t`` are known at ``t``;
``next_return[t]`` is realized at ``t + 1``. A decision for month ``t``
may therefore read features of months ``<= t`` and labels of months
``< t``. Every engine read goes through :class:`CausalView`, which logs
the access so tests can assert nothing leaked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .ensemble import ModelHistory, SchemeId, WeightVector, combine, scheme_weights
from .factors import FactorHierarchy, SynthesisResult, rolling_synthesize
from .metrics import ICSeries, evaluate_forecast
from .panel import FactorPanel, MonthIndex, eligibility
from .predictors import MODEL_KINDS, TrainConfig, predict, train_model
from .preprocess import cross_sectional_standardize, preprocess_panel
from .screening import ScreeningConfig, ScreenResult, screen_factors

REPORT_COLUMNS = (
    "Strategy Return",
    "Annualized Return",
    "Annualized Volatility",
    "Excess Return",
    "Sharpe",
    "Beta",
    "Alpha",
    "Maximum Drawdown",
)
STRATEGIES = MODEL_KINDS + tuple(s.value for s in SchemeId)
MATRIX_ROWS = STRATEGIES + ("Benchmark",)
VALIDATION_METRICS = ("rmse", "mape", "precision", "recall", "f1", "ic")


class BacktestError(ValueError):
    pass


class HistoryError(BacktestError):
    pass


class UndefinedBetaError(BacktestError):
    pass


def parse_strategy(text: str) -> str:
    """Canonical strategy name: a single model kind or a weighting scheme."""
    key = text.strip()
    for kind in MODEL_KINDS:
        if key.lower() == kind.lower():
            return kind
    if key.lower() in ("rf", "randomforest", "random_forest"):
        return "Forest"
    return SchemeId.parse(key).value


@dataclass(frozen=True)
class BacktestConfig:
    train_window: int = 12
    test_window: int = 1
    cost_rate: float = 0.003
    cost_mode: str = "total"  # "total", "two_sided" or "flat"
    top_n: int = 30
    scheme: str = "IC_Mean"
    schemes: tuple[str, ...] = STRATEGIES
    seed: int = 0
    periods_per_year: int = 12
    ic_window: int = 20
    metric_window: int = 20
    ic_eps: float = 1e-8
    fallback: bool = False
    features: str = "synthesized"  # or "screened": raw screened factors
    synthesis_window: int = 12
    screen: bool = False
    # a 12-month screen is short; dropping a live factor costs more than keeping noise
    screening: ScreeningConfig = field(default_factory=lambda: ScreeningConfig(rule="min"))
    size_factors: tuple[str, ...] = ()
    winsor_k: float = 3.0
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.train_window < 1 or self.test_window < 1:
            raise BacktestError("windows must be >= 1")
        if self.test_window != 1:
            raise BacktestError("only a one-month test window is supported")
        if not 0 <= self.cost_rate < 1:
            raise BacktestError("cost_rate must lie in [0, 1)")
        if self.cost_mode not in ("total", "two_sided", "flat"):
            raise BacktestError(f"unknown cost mode {self.cost_mode!r}")
        if self.top_n < 1:
            raise BacktestError("top_n must be >= 1")
        if self.features not in ("synthesized", "screened"):
            raise BacktestError(f"unknown feature source {self.features!r}")
        object.__setattr__(self, "scheme", parse_strategy(self.scheme))
        object.__setattr__(self, "schemes", tuple(parse_strategy(s) for s in self.schemes))
        if not self.schemes:
            raise BacktestError("scheme list is empty")


# ---------------------------------------------------------------------------
# Access logging
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Access:
    t: int
    phase: str
    kind: str  # "features", "labels", "eligible", "benchmark"
    month: int


@dataclass
class AccessLog:
    records: list[Access] = field(default_factory=list)

    def add(self, access: Access) -> None:
        self.records.append(access)

    @staticmethod
    def is_violation(a: Access) -> bool:
        if a.phase == "decision":
            if a.kind in ("labels", "benchmark"):
                return a.month >= a.t
            return a.month > a.t
        return a.month > a.t

    @property
    def violations(self) -> list[Access]:
        return [a for a in self.records if self.is_violation(a)]


class CausalView:
    """Read-only month-by-month access to the engine's inputs, with logging."""

    def __init__(self, features: np.ndarray, labels: np.ndarray, eligible: np.ndarray, benchmark: np.ndarray, log: AccessLog):
        self._features = features
        self._labels = labels
        self._eligible = eligible
        self._benchmark = benchmark
        self.log = log
        self.t = -1
        self.phase = "setup"

    def begin(self, t: int, phase: str) -> None:
        self.t, self.phase = t, phase

    def _read(self, kind: str, month: int):
        self.log.add(Access(self.t, self.phase, kind, month))

    def features(self, month: int) -> np.ndarray:
        self._read("features", month)
        return self._features[month]

    def labels(self, month: int) -> np.ndarray:
        self._read("labels", month)
        return self._labels[month]

    def eligible(self, month: int) -> np.ndarray:
        self._read("eligible", month)
        return self._eligible[month]

    def benchmark(self, month: int) -> float:
        self._read("benchmark", month)
        return float(self._benchmark[month])


# ---------------------------------------------------------------------------
# Portfolio, costs, performance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Holdings:
    stocks: tuple[str, ...]
    weights: tuple[float, ...]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.stocks, self.weights))


def form_portfolio(predictions, eligible, stocks: Sequence[str], top_n: int) -> Holdings:
    """Equal-weight the ``top_n`` eligible stocks with the highest prediction.

    Ties go to the lexicographically smaller ticker. With fewer eligible
    stocks than ``top_n`` every eligible stock is held.
    """
    pred = np.asarray(predictions, dtype=float)
    ok = np.asarray(eligible, dtype=bool) & np.isfinite(pred)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        raise BacktestError("no eligible stock to hold")
    tickers = np.array([stocks[i] for i in idx])
    order = np.lexsort((tickers, -pred[idx]))
    chosen = idx[order[: min(top_n, idx.size)]]
    w = 1.0 / chosen.size
    return Holdings(tuple(stocks[i] for i in chosen), tuple(w for _ in chosen))


def turnover(previous: Holdings | None, current: Holdings) -> float:
    """One-way turnover ``0.5 * sum |w_new - w_old|``; 1 for the first month."""
    if previous is None:
        return 1.0
    old, new = previous.as_dict(), current.as_dict()
    keys = set(old) | set(new)
    return 0.5 * sum(abs(new.get(k, 0.0) - old.get(k, 0.0)) for k in keys)


def apply_costs(gross_return: float, turnover: float, cost_rate: float = 0.003, mode: str = "total") -> float:
    if not 0 <= turnover <= 1 + 1e-12:
        raise BacktestError(f"turnover {turnover} outside [0, 1]")
    if mode == "total":
        return gross_return - cost_rate * turnover
    if mode == "two_sided":
        return gross_return - 2.0 * cost_rate * turnover
    if mode == "flat":
        return gross_return - cost_rate
    raise BacktestError(f"unknown cost mode {mode!r}")


@dataclass(frozen=True, eq=False)
class EquityCurve:
    months: tuple[MonthIndex, ...]
    gross_return: np.ndarray
    net_return: np.ndarray
    benchmark_return: np.ndarray
    turnover: np.ndarray = None
    holdings: tuple[tuple[str, ...], ...] = ()

    @property
    def wealth(self) -> np.ndarray:
        """Wealth after each month, starting from 1.0 (the basis itself excluded)."""
        return np.cumprod(1.0 + np.asarray(self.net_return, dtype=float))


@dataclass(frozen=True)
class BacktestReport:
    strategy_return: float
    annualized_return: float
    annualized_volatility: float
    excess_return: float
    sharpe: float
    beta: float
    alpha: float
    max_drawdown: float

    def row(self) -> tuple[float, ...]:
        return (
            self.strategy_return,
            self.annualized_return,
            self.annualized_volatility,
            self.excess_return,
            self.sharpe,
            self.beta,
            self.alpha,
            self.max_drawdown,
        )

    def as_dict(self) -> dict[str, float]:
        return dict(zip(REPORT_COLUMNS, self.row()))


def max_drawdown(wealth) -> float:
    """Largest peak-to-trough fall of a wealth path, as a fraction of the peak."""
    peak = -math.inf
    worst = 0.0
    for w in np.asarray(wealth, dtype=float):
        peak = max(peak, w)
        if peak > 0:
            worst = max(worst, (peak - w) / peak)
    return float(worst)


def performance_report(curve: EquityCurve, periods_per_year: int = 12) -> BacktestReport:
    net = np.asarray(curve.net_return, dtype=float)
    bench = np.asarray(curve.benchmark_return, dtype=float)
    T = net.size
    if T < 2:
        raise BacktestError("performance report needs at least 2 months")
    strategy = float(np.prod(1.0 + net) - 1.0)
    annualized = float((1.0 + strategy) ** (periods_per_year / T) - 1.0)
    vol = float(net.std(ddof=1) * math.sqrt(periods_per_year))
    bench_total = float(np.prod(1.0 + bench) - 1.0)
    var_b = float(bench.var(ddof=1))
    if not var_b > 0:
        raise UndefinedBetaError("benchmark return variance is zero")
    beta = float(np.cov(net, bench, ddof=1)[0, 1] / var_b)
    alpha = float((net.mean() - beta * bench.mean()) * periods_per_year)
    sharpe = annualized / vol if vol > 0 else math.nan
    wealth = np.concatenate([[1.0], np.cumprod(1.0 + net)])
    return BacktestReport(
        strategy_return=strategy,
        annualized_return=annualized,
        annualized_volatility=vol,
        excess_return=strategy - bench_total,
        sharpe=sharpe,
        beta=beta,
        alpha=alpha,
        max_drawdown=max_drawdown(wealth),
    )


# ---------------------------------------------------------------------------
# Feature pipeline
# ---------------------------------------------------------------------------


@dataclass
class FeatureSet:
    values: np.ndarray  # (T, N, K)
    names: tuple[str, ...]
    eligible: np.ndarray  # (T, N)
    screen: ScreenResult | None = None
    synthesis: SynthesisResult | None = None
    hierarchy: FactorHierarchy | None = None
    flags: list[str] = field(default_factory=list)


def build_features(
    panel: FactorPanel, hierarchy: FactorHierarchy | None, config: BacktestConfig, clean: FactorPanel | None = None
) -> FeatureSet:
    """preprocess -> (screen) -> (synthesize), all causal for the first test month.

    Screening sees only the first ``train_window`` months, whose labels are
    realized by the first decision date. ``clean`` skips preprocessing when
    the caller already has the preprocessed panel.
    """
    elig = eligibility(panel)
    flags: list[str] = []
    if clean is None:
        clean, diag = preprocess_panel(panel, config.size_factors, config.winsor_k, elig)
        flags.extend(diag.events)
    if hierarchy is None:
        hierarchy = FactorHierarchy.round_robin(clean.factor_names, min(8, len(clean.factor_names)))
    screen = None
    level = config.screening.level
    if config.screen and level == "second":
        screen = screen_factors(clean.slice_months(0, config.train_window), config.screening, elig[: config.train_window])
        if screen.kept:
            if config.features == "synthesized":
                hierarchy = hierarchy.restrict(screen.kept)
            clean = clean.select_factors(screen.kept)
        else:
            flags.append("screening kept no factor; using all factors")

    if config.features == "screened":
        return FeatureSet(np.asarray(clean.values), clean.factor_names, elig, screen, None, hierarchy, flags)

    synth = rolling_synthesize(clean, hierarchy, config.synthesis_window)
    flags.extend(synth.flags)
    scores = synth.panel
    if config.screen and level == "first":
        screen = screen_factors(scores.slice_months(0, config.train_window), config.screening, elig[: config.train_window])
        if screen.kept:
            scores = scores.select_factors(screen.kept)
        else:
            flags.append("screening kept no factor; using all factors")
    return FeatureSet(np.asarray(scores.values), scores.factor_names, elig, screen, synth, hierarchy, flags)


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------

PredictionHook = Callable[[int, str, np.ndarray, np.ndarray, CausalView], np.ndarray]


@dataclass
class MatrixResult:
    months: tuple[MonthIndex, ...]
    reports: dict[str, BacktestReport]
    curves: dict[str, EquityCurve]
    weights: dict[str, list[WeightVector]]
    history: ModelHistory
    ic: ICSeries
    validation: dict[str, dict[str, float]]
    access_log: AccessLog
    features: FeatureSet
    flags: list[str] = field(default_factory=list)
    predictions: dict[str, list[np.ndarray]] = field(default_factory=dict)

    def table(self) -> list[dict]:
        """Rows of (Weighting, the eight report columns) in matrix order."""
        rows = []
        for name in MATRIX_ROWS:
            if name in self.reports:
                rows.append({"Weighting": name, **self.reports[name].as_dict()})
        return rows


def _model_seed(seed: int, t: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, t, k]).generate_state(1)[0])


def _fixed_weights(strategy: str, month) -> WeightVector:
    return WeightVector(month, {m: float(m == strategy) for m in MODEL_KINDS})


def _standardize_rows(x: np.ndarray) -> np.ndarray:
    return cross_sectional_standardize(x)


def run_matrix(
    panel: FactorPanel,
    hierarchy: FactorHierarchy | None = None,
    config: BacktestConfig | None = None,
    schemes: Iterable[str] | None = None,
    prediction_hook: PredictionHook | None = None,
    features: FeatureSet | None = None,
) -> MatrixResult:
    """Run every requested strategy over one shared walk-forward loop.

    The three models are trained once per month and shared by all
    strategies, so single-model rows and combined rows see identical
    forecasts.
    """
    cfg = config or BacktestConfig()
    strategies = tuple(parse_strategy(s) for s in schemes) if schemes is not None else cfg.schemes
    if not strategies:
        raise BacktestError("scheme list is empty")
    L = cfg.train_window
    T, N = panel.n_months, panel.n_stocks
    if T < L + 1:
        raise HistoryError(f"need at least {L + 1} months, panel has {T}")

    fs = features if features is not None else build_features(panel, hierarchy, cfg)
    log = AccessLog()
    view = CausalView(fs.values, np.asarray(panel.next_return), fs.eligible, np.asarray(panel.benchmark_return), log)
    stocks = panel.stocks
    history = ModelHistory(MODEL_KINDS)
    ic_series = ICSeries()
    flags = list(fs.flags)
    months = panel.months[L:]
    per = {s: {"gross": [], "net": [], "turnover": [], "holdings": [], "weights": []} for s in strategies}
    bench_returns: list[float] = []
    combined_metrics = {s: [] for s in strategies}
    preds_log: dict[str, list[np.ndarray]] = {m: [] for m in MODEL_KINDS}
    previous: dict[str, Holdings | None] = {s: None for s in strategies}
    mlp_cfg = cfg.train.mlp

    for t in range(L, T):
        month = panel.months[t]
        # --- decision: everything here must be known at t
        view.begin(t, "decision")
        Xs, ys = [], []
        for tau in range(t - L, t):
            x, r, ok = view.features(tau), view.labels(tau), view.eligible(tau)
            rows = ok & np.isfinite(r) & np.isfinite(x).all(axis=1)
            if rows.sum() < 2:
                continue
            Xs.append(_standardize_rows(x[rows]))
            ys.append(_standardize_rows(r[rows]))
        if not Xs:
            raise HistoryError(f"no usable training rows for {month}")
        X_train, y_train = np.vstack(Xs), np.concatenate(ys)
        x_now, ok_now = view.features(t), view.eligible(t)
        test_rows = np.flatnonzero(ok_now & np.isfinite(x_now).all(axis=1))
        if test_rows.size < 2:
            raise HistoryError(f"fewer than 2 eligible stocks in {month}")
        X_test = _standardize_rows(x_now[test_rows])
        train_cfg = cfg.train
        if X_train.shape[0] < mlp_cfg.batch_size:
            flags.append(f"{month}: MLP batch reduced to {X_train.shape[0]} rows")
            train_cfg = replace(train_cfg, mlp=replace(mlp_cfg, batch_size=X_train.shape[0]))
        preds = {}
        window = (panel.months[t - L], panel.months[t - 1])
        for k, kind in enumerate(MODEL_KINDS):
            seeded = train_cfg.with_seed(_model_seed(cfg.seed, t, k))
            model = train_model(kind, X_train, y_train, seeded, fs.names, window)
            p = predict(model, X_test, fs.names)
            if prediction_hook is not None:
                p = np.asarray(prediction_hook(t, kind, p, test_rows, view), dtype=float)
            preds[kind] = p
            preds_log[kind].append(p)
        if test_rows.size < cfg.top_n:
            flags.append(f"{month}: {test_rows.size} eligible stocks < top_n={cfg.top_n}, holding all")
        decisions = {}
        for s in strategies:
            w = _fixed_weights(s, month) if s in MODEL_KINDS else scheme_weights(
                SchemeId(s), history, month, cfg.ic_window if SchemeId(s).is_ic else cfg.metric_window,
                cfg.ic_eps, cfg.fallback,
            )
            combined = combine(preds, w)
            full = np.full(N, np.nan)
            full[test_rows] = combined
            decisions[s] = (w, combined, form_portfolio(full, ok_now, stocks, cfg.top_n))

        # --- realization: next_return[t] becomes known at t + 1
        view.begin(t, "realization")
        realized = view.labels(t)[test_rows]
        bench_returns.append(view.benchmark(t))
        realized_z = _standardize_rows(realized)
        pos = {stocks[i]: j for j, i in enumerate(test_rows)}
        for s, (w, combined, hold) in decisions.items():
            gross = float(sum(wt * realized[pos[name]] for name, wt in zip(hold.stocks, hold.weights)))
            to = turnover(previous[s], hold)
            net = apply_costs(gross, to, cfg.cost_rate, cfg.cost_mode)
            rec = per[s]
            rec["gross"].append(gross)
            rec["net"].append(net)
            rec["turnover"].append(to)
            rec["holdings"].append(hold.stocks)
            rec["weights"].append(w)
            previous[s] = hold
            combined_metrics[s].append(_forecast_metrics(combined, realized, realized_z))
        month_metrics, month_ics = {}, {}
        for kind in MODEL_KINDS:
            m = _forecast_metrics(preds[kind], realized, realized_z)
            if not np.isfinite(m["ic"]):
                flags.append(f"{month}: {kind} IC undefined, recorded as 0")
                m["ic"] = 0.0
            month_metrics[kind] = m
            month_ics[kind] = m["ic"]
        history.append(month, month_metrics)
        ic_series.append(month, month_ics)

    bench = np.array(bench_returns)
    curves, reports, weights = {}, {}, {}
    for s in strategies:
        rec = per[s]
        curves[s] = EquityCurve(
            months, np.array(rec["gross"]), np.array(rec["net"]), bench, np.array(rec["turnover"]), tuple(rec["holdings"])
        )
        weights[s] = rec["weights"]
    curves["Benchmark"] = EquityCurve(months, bench.copy(), bench.copy(), bench, np.zeros(bench.size), ())
    if len(months) >= 2:
        for name, curve in curves.items():
            reports[name] = performance_report(curve, cfg.periods_per_year)
    else:
        flags.append("fewer than 2 test months; no performance report")
    validation = {
        s: {k: float(np.nanmean([m[k] for m in combined_metrics[s]])) if combined_metrics[s] else math.nan
            for k in VALIDATION_METRICS}
        for s in strategies
    }
    return MatrixResult(
        months=months,
        reports=reports,
        curves=curves,
        weights=weights,
        history=history,
        ic=ic_series,
        validation=validation,
        access_log=log,
        features=fs,
        flags=flags,
        predictions=preds_log,
    )


def _forecast_metrics(pred: np.ndarray, realized: np.ndarray, realized_z: np.ndarray) -> dict[str, float]:
    """Error metrics on the training-target scale; direction and IC on raw returns."""
    pred = np.asarray(pred, dtype=float)
    scale = evaluate_forecast(pred, realized_z)
    raw = evaluate_forecast(pred, realized)
    return {
        "rmse": scale["rmse"],
        "mape": scale["mape"],
        "precision": raw["precision"],
        "recall": raw["recall"],
        "f1": raw["f1"],
        "ic": raw["ic"],
    }


@dataclass
class RunDiagnostics:
    weights: list[WeightVector]
    history: ModelHistory
    ic: ICSeries
    access_log: AccessLog
    flags: list[str]
    matrix: MatrixResult


def rolling_run(
    panel: FactorPanel,
    hierarchy: FactorHierarchy | None = None,
    config: BacktestConfig | None = None,
    prediction_hook: PredictionHook | None = None,
) -> tuple[EquityCurve, BacktestReport | None, RunDiagnostics]:
    """One strategy (``config.scheme``) through the walk-forward loop."""
    cfg = config or BacktestConfig()
    result = run_matrix(panel, hierarchy, cfg, (cfg.scheme,), prediction_hook)
    curve = result.curves[cfg.scheme]
    diag = RunDiagnostics(result.weights[cfg.scheme], result.history, result.ic, result.access_log, result.flags, result)
    return curve, result.reports.get(cfg.scheme), diag


def screening_comparison(
    panel: FactorPanel, hierarchy: FactorHierarchy | None = None, config: BacktestConfig | None = None, scheme: str = "IC_Mean"
) -> list[dict]:
    """The chosen scheme's report with and without factor screening."""
    cfg = config or BacktestConfig()
    rows = []
    for label, flag in (("After screening", True), ("Before screening", False)):
        res = run_matrix(panel, hierarchy, replace(cfg, screen=flag), (scheme,))
        rows.append({"Weighting": label, **res.reports[parse_strategy(scheme)].as_dict()})
    return rows


def validation_table(result: MatrixResult, schemes: Sequence[str] | None = None) -> list[dict]:
    """Mean monthly metric of each combined forecast (rows: metric, columns: scheme)."""
    cols = [s for s in (schemes or result.validation) if s in result.validation]
    return [{"Metric": k, **{s: result.validation[s][k] for s in cols}} for k in VALIDATION_METRICS]
