"""Combination weights for the three forecasters.

Two families of schemes:

* metric-based (RMSE, MAPE, Precision, Recall, F1): rolling mean of each
  model's monthly metric over the last ``window`` months (reciprocals for
  the error metrics), normalized to sum to one;
* IC-based (IC_Mean, IC_Ratio): rolling mean of the model's rank IC, or
  mean over (std + eps); negative scores are clipped to zero before
  normalization and an all-zero score vector yields all-zero weights.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd


class EnsembleError(ValueError):
    pass


class InsufficientICHistoryError(EnsembleError):
    pass


class AlignmentError(EnsembleError):
    pass


class SchemeId(str, enum.Enum):
    RMSE = "RMSE"
    MAPE = "MAPE"
    PRECISION = "Precision"
    RECALL = "Recall"
    F1 = "F1"
    IC_MEAN = "IC_Mean"
    IC_RATIO = "IC_Ratio"

    @property
    def is_ic(self) -> bool:
        return self in (SchemeId.IC_MEAN, SchemeId.IC_RATIO)

    @property
    def metric(self) -> str:
        """Key of the per-month metric history this scheme reads."""
        return "ic" if self.is_ic else self.value.lower()

    @classmethod
    def parse(cls, text: str) -> "SchemeId":
        key = text.strip().lower().replace("-", "_")
        for s in cls:
            if s.value.lower() == key or s.name.lower() == key:
                return s
        if key in ("f1_score", "f1score"):
            return cls.F1
        if key in ("ic_ir", "icir"):
            return cls.IC_RATIO
        raise EnsembleError(f"unknown scheme: {text!r}")


RECIPROCAL = {SchemeId.RMSE, SchemeId.MAPE}


@dataclass(frozen=True)
class WeightVector:
    month: object
    w: Mapping[str, float]
    flags: tuple[str, ...] = ()

    @property
    def total(self) -> float:
        return float(sum(self.w.values()))

    def as_array(self, models: Sequence[str]) -> np.ndarray:
        return np.array([self.w[m] for m in models], dtype=float)


def equal_weights(models: Sequence[str], month=None, flags: tuple[str, ...] = ()) -> WeightVector:
    k = len(models)
    return WeightVector(month, {m: 1.0 / k for m in models}, flags)


def metric_weights(
    history: Mapping[str, Sequence[float]],
    scheme: SchemeId,
    window: int = 20,
    month=None,
    eps: float = 1e-12,
) -> WeightVector:
    """Normalize the trailing-window mean of each model's metric.

    With fewer than ``window`` observations the mean runs over what exists.
    RMSE/MAPE observations are inverted (floored at ``eps``) before averaging.
    """
    scheme = SchemeId(scheme)
    if scheme.is_ic:
        raise EnsembleError(f"{scheme.value} is not a metric scheme")
    models = list(history)
    scores = {}
    for m in models:
        obs = np.asarray(history[m], dtype=float)[-window:]
        obs = obs[np.isfinite(obs)]
        if obs.size == 0:
            raise EnsembleError(f"no {scheme.value} history for {m}")
        if scheme in RECIPROCAL:
            obs = 1.0 / np.maximum(obs, eps)
        scores[m] = float(obs.mean())
    total = sum(scores.values())
    if not total > 0:
        return equal_weights(models, month, ("all_scores_zero",))
    return WeightVector(month, {m: s / total for m, s in scores.items()})


def ic_scores(
    history: Mapping[str, Sequence[float]],
    mode: str = "mean",
    window: int = 20,
    eps: float = 1e-8,
) -> dict[str, float]:
    """Trailing IC mean, or mean / (sample std + eps) for ``mode="ratio"``."""
    mode = mode.lower()
    if mode not in ("mean", "ratio"):
        raise EnsembleError(f"unknown IC mode {mode!r}")
    out = {}
    for m, values in history.items():
        ic = np.asarray(values, dtype=float)[-window:]
        if ic.size == 0:
            raise InsufficientICHistoryError(f"no IC history for {m}")
        mu = float(ic.mean())
        if mode == "mean":
            out[m] = mu
            continue
        if ic.size < 2:
            raise InsufficientICHistoryError(f"IC ratio needs 2 observations, {m} has {ic.size}")
        out[m] = mu / (float(ic.std(ddof=1)) + eps)
    return out


def normalize_scores(scores: Mapping[str, float], fallback: bool = False, month=None) -> WeightVector:
    """``w_i = max(s_i, 0) / sum_j max(s_j, 0)``; all-zero weights when that sum is 0."""
    clipped = {m: max(float(s), 0.0) for m, s in scores.items()}
    total = sum(clipped.values())
    if total == 0:
        if fallback:
            return equal_weights(list(scores), month, ("no_positive_score", "fallback_equal"))
        return WeightVector(month, {m: 0.0 for m in scores}, ("no_positive_score",))
    return WeightVector(month, {m: c / total for m, c in clipped.items()})


def combine(predictions: Mapping[str, object], w: WeightVector) -> np.ndarray | pd.Series:
    """Weighted sum of per-model predictions over a common stock set."""
    models = list(w.w)
    missing = [m for m in models if m not in predictions]
    if missing:
        raise AlignmentError(f"no predictions for {missing}")
    first = predictions[models[0]]
    if isinstance(first, pd.Series):
        index = first.index
        for m in models[1:]:
            other = predictions[m]
            if not isinstance(other, pd.Series) or not other.index.equals(index):
                raise AlignmentError(f"{m} predicts a different stock set")
        out = sum(w.w[m] * predictions[m].to_numpy(dtype=float) for m in models)
        return pd.Series(out, index=index)
    arrays = [np.asarray(predictions[m], dtype=float) for m in models]
    if any(a.shape != arrays[0].shape for a in arrays):
        raise AlignmentError("models predict different numbers of stocks")
    return sum(w.w[m] * a for m, a in zip(models, arrays))


def warmup_policy(n_available: int, required: int, models: Sequence[str], month=None) -> WeightVector | None:
    """Equal weights (flagged ``warmup``) while fewer than ``required`` observations exist."""
    if n_available < required:
        return equal_weights(models, month, ("warmup",))
    return None


@dataclass
class ModelHistory:
    """Append-only per-model monthly metric histories, keyed by metric name."""

    models: tuple[str, ...]
    series: dict[str, dict[str, list[float]]] = field(default_factory=dict)
    months: list = field(default_factory=list)

    def append(self, month, metrics: Mapping[str, Mapping[str, float]]) -> None:
        """``metrics[model][metric_name] = value`` for one realized month."""
        self.months.append(month)
        for m in self.models:
            for name, value in metrics[m].items():
                self.series.setdefault(name, {k: [] for k in self.models})[m].append(float(value))

    def __len__(self) -> int:
        return len(self.months)

    def get(self, metric: str) -> dict[str, list[float]]:
        return self.series.get(metric, {m: [] for m in self.models})


def scheme_weights(
    scheme: SchemeId,
    history: ModelHistory,
    month=None,
    window: int = 20,
    ic_eps: float = 1e-8,
    fallback: bool = False,
) -> WeightVector:
    """Weights for ``month`` from histories that end strictly before it.

    Metric schemes average over a partial window as soon as one month is
    available; IC schemes wait for ``window`` full observations.
    """
    scheme = SchemeId(scheme)
    models = history.models
    required = window if scheme.is_ic else 1
    warm = warmup_policy(len(history), required, models, month)
    if warm is not None:
        return warm
    if scheme.is_ic:
        mode = "mean" if scheme is SchemeId.IC_MEAN else "ratio"
        scores = ic_scores(history.get("ic"), mode, window, ic_eps)
        return normalize_scores(scores, fallback=fallback, month=month)
    return metric_weights(history.get(scheme.metric), scheme, window, month)
