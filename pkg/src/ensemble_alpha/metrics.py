"""Forecast evaluation: error metrics, direction classification, rank IC."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


class UndefinedCorrelationError(MetricError):
    pass


def _pair(pred, actual) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=float).ravel()
    a = np.asarray(actual, dtype=float).ravel()
    if p.shape != a.shape:
        raise MetricError(f"length mismatch: {p.size} predictions vs {a.size} actuals")
    return p, a


def rmse(pred, actual) -> float:
    p, a = _pair(pred, actual)
    if p.size == 0:
        raise MetricError("rmse of empty input")
    return float(np.sqrt(np.mean((p - a) ** 2)))


def mape(pred, actual, eps: float = 1e-8) -> float:
    """Mean of ``|p - a| / max(|a|, eps)``; the floor keeps zero actuals finite."""
    p, a = _pair(pred, actual)
    if p.size == 0:
        raise MetricError("mape of empty input")
    return float(np.mean(np.abs(p - a) / np.maximum(np.abs(a), eps)))


@dataclass(frozen=True)
class DirectionOutcome:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(pred, actual, threshold: float = 0.0) -> DirectionOutcome:
    p, a = _pair(pred, actual)
    pp, ap = p > threshold, a > threshold
    return DirectionOutcome(
        tp=int(np.sum(pp & ap)), fp=int(np.sum(pp & ~ap)), tn=int(np.sum(~pp & ~ap)), fn=int(np.sum(~pp & ap))
    )


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def direction_metrics(pred, actual, threshold: float = 0.0) -> tuple[float, float, float]:
    """Precision, recall and F1 of the "rises" class (value > threshold); 0/0 is 0."""
    c = confusion(pred, actual, threshold)
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    f1 = _ratio(2 * precision * recall, precision + recall)
    return precision, recall, f1


def spearman(x, y) -> float:
    """Pearson correlation of average ranks."""
    a, b = _pair(x, y)
    if a.size < 2:
        raise UndefinedCorrelationError("need at least two observations")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise UndefinedCorrelationError("inputs must be finite")
    ra = rankdata(a) - (a.size + 1) / 2.0
    rb = rankdata(b) - (b.size + 1) / 2.0
    den = np.sqrt(np.dot(ra, ra) * np.dot(rb, rb))
    if den == 0:
        raise UndefinedCorrelationError("constant input")
    return float(np.clip(np.dot(ra, rb) / den, -1.0, 1.0))


def ic_at(predictions, realized) -> float:
    """Rank IC between predictions formed at t and returns realized over t -> t+1."""
    return spearman(predictions, realized)


@dataclass
class ICSeries:
    """Per-model monthly IC values in chronological order."""

    months: list = field(default_factory=list)
    values: dict[str, list[float]] = field(default_factory=dict)

    def append(self, month, ics: Mapping[str, float]) -> None:
        if self.values and set(ics) != set(self.values):
            raise MetricError("every month must report the same models")
        self.months.append(month)
        for k, v in ics.items():
            if not -1.0 <= v <= 1.0:
                raise MetricError(f"IC out of range: {v}")
            self.values.setdefault(k, []).append(float(v))

    @property
    def cumulative(self) -> dict[str, np.ndarray]:
        return cumulative_ic(self)


def cumulative_ic(series: ICSeries | Mapping[str, Sequence[float]]) -> dict[str, np.ndarray]:
    values = series.values if isinstance(series, ICSeries) else series
    return {k: np.cumsum(np.asarray(v, dtype=float)) for k, v in values.items()}


METRIC_NAMES = ("rmse", "mape", "precision", "recall", "f1", "ic")


def evaluate_forecast(pred, actual, mape_eps: float = 1e-8) -> dict[str, float]:
    """All six per-month metrics; an undefined IC (constant input) is reported as NaN."""
    precision, recall, f1 = direction_metrics(pred, actual)
    try:
        ic = ic_at(pred, actual)
    except UndefinedCorrelationError:
        ic = float("nan")
    return {
        "rmse": rmse(pred, actual),
        "mape": mape(pred, actual, mape_eps),
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "ic": ic,
    }
