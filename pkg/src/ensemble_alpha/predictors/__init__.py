"""Return forecasters: ridge, a small neural network and a random forest."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Any, Mapping, Sequence

import numpy as np

from .forest import fit_forest, fit_tree, predict_forest, predict_tree
from .mlp import ACTIVATIONS, DivergenceError, forward, init_params, loss_and_grad, train_network
from .ridge import DEFAULT_RIDGE_GRID, ridge_gcv

MODEL_KINDS = ("Ridge", "MLP", "Forest")


class PredictorError(ValueError):
    pass


class FeatureAlignmentError(PredictorError):
    def __init__(self, offending: Sequence[str], message: str):
        self.offending = list(offending)
        super().__init__(message)


@dataclass(frozen=True)
class RidgeConfig:
    penalty_grid: tuple[float, ...] = DEFAULT_RIDGE_GRID

    def __post_init__(self):
        if not self.penalty_grid or any(v < 0 for v in self.penalty_grid):
            raise PredictorError("ridge penalty grid must be non-empty and non-negative")


@dataclass(frozen=True)
class MLPConfig:
    hidden: tuple[int, ...] = (32,)
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 64
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        if any(h < 1 for h in self.hidden) or self.batch_size < 1 or self.epochs < 0:
            raise PredictorError("MLP layer sizes and batch size must be positive, epochs non-negative")
        if not self.learning_rate > 0:
            raise PredictorError("learning rate must be > 0")
        if self.activation not in ACTIVATIONS:
            raise PredictorError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 200
    max_depth: int | None = 8
    min_leaf: int = 5
    features_per_split: int | None = None  # None: ceil(p / 3)
    seed: int = 0
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1 or self.min_leaf < 1:
            raise PredictorError("n_trees and min_leaf must be positive")
        if self.max_depth is not None and self.max_depth < 0:
            raise PredictorError("max_depth must be non-negative or None")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise PredictorError("features_per_split must be positive")


@dataclass(frozen=True)
class TrainConfig:
    ridge: RidgeConfig = field(default_factory=RidgeConfig)
    mlp: MLPConfig = field(default_factory=MLPConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrainConfig":
        """Build from the ``[predictors]`` config section; unknown keys raise."""
        parts = {"ridge": RidgeConfig, "mlp": MLPConfig, "forest": ForestConfig}
        unknown = set(data) - set(parts)
        if unknown:
            raise PredictorError(f"unknown predictors keys: {sorted(unknown)}")
        built = {}
        for key, kind in parts.items():
            section = dict(data.get(key, {}))
            allowed = {f.name for f in fields(kind)}
            bad = set(section) - allowed
            if bad:
                raise PredictorError(f"unknown predictors.{key} keys: {sorted(bad)}")
            for name in ("penalty_grid", "hidden"):
                if name in section:
                    section[name] = tuple(section[name])
            built[key] = kind(**section)
        return cls(**built)

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, mlp=replace(self.mlp, seed=seed), forest=replace(self.forest, seed=seed))


@dataclass(frozen=True, eq=False)
class TrainedModel:
    kind: str
    params: Any
    feature_names: tuple[str, ...]
    train_months: tuple = ()
    info: Mapping[str, Any] = field(default_factory=dict)


def _prepare(X, y=None):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise PredictorError(f"X must be 2-D, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise PredictorError("X contains non-finite values")
    if y is None:
        return X
    y = np.asarray(y, dtype=float).ravel()
    if y.size != X.shape[0]:
        raise PredictorError(f"X has {X.shape[0]} rows but y has {y.size}")
    if not np.isfinite(y).all():
        raise PredictorError("y contains non-finite values")
    return X, y


def _names(feature_names, p: int) -> tuple[str, ...]:
    if feature_names is None:
        return tuple(f"x{j}" for j in range(p))
    names = tuple(feature_names)
    if len(names) != p:
        raise PredictorError(f"{len(names)} feature names for {p} columns")
    return names


def train_ridge(X, y, penalty_grid=DEFAULT_RIDGE_GRID, feature_names=None, train_months=()) -> TrainedModel:
    X, y = _prepare(X, y)
    if X.shape[0] == 0:
        raise PredictorError("ridge needs n > 0")
    beta, intercept, lam, scores = ridge_gcv(X, y, penalty_grid)
    return TrainedModel(
        "Ridge",
        {"beta": beta, "intercept": intercept},
        _names(feature_names, X.shape[1]),
        tuple(train_months),
        {"lambda": lam, "gcv": scores.tolist()},
    )


def train_mlp(X, y, config: MLPConfig | None = None, feature_names=None, train_months=()) -> TrainedModel:
    cfg = config or MLPConfig()
    X, y = _prepare(X, y)
    if X.shape[0] < cfg.batch_size:
        raise PredictorError(f"MLP needs n >= batch size {cfg.batch_size}, got {X.shape[0]}")
    params, history = train_network(
        X, y, cfg.hidden, cfg.activation, cfg.learning_rate, cfg.epochs, cfg.batch_size, cfg.seed
    )
    return TrainedModel(
        "MLP",
        {"weights": params, "activation": cfg.activation},
        _names(feature_names, X.shape[1]),
        tuple(train_months),
        {"loss_history": history},
    )


def train_forest(X, y, config: ForestConfig | None = None, feature_names=None, train_months=()) -> TrainedModel:
    cfg = config or ForestConfig()
    X, y = _prepare(X, y)
    if X.shape[0] < 2:
        raise PredictorError("forest needs n >= 2")
    mtry = cfg.features_per_split or max(1, math.ceil(X.shape[1] / 3))
    trees = fit_forest(X, y, cfg.n_trees, cfg.max_depth, cfg.min_leaf, min(mtry, X.shape[1]), cfg.seed, cfg.bootstrap)
    return TrainedModel(
        "Forest",
        {"trees": trees},
        _names(feature_names, X.shape[1]),
        tuple(train_months),
        {"features_per_split": mtry},
    )


def train_model(kind: str, X, y, config: TrainConfig, feature_names=None, train_months=()) -> TrainedModel:
    if kind == "Ridge":
        return train_ridge(X, y, config.ridge.penalty_grid, feature_names, train_months)
    if kind == "MLP":
        return train_mlp(X, y, config.mlp, feature_names, train_months)
    if kind == "Forest":
        return train_forest(X, y, config.forest, feature_names, train_months)
    raise PredictorError(f"unknown model kind {kind!r}")


def predict(model: TrainedModel, X_test, feature_names=None) -> np.ndarray:
    """Predictions for each row of ``X_test``.

    When ``feature_names`` is given it must match the training names in
    order; otherwise the column count must match.
    """
    X = _prepare(X_test)
    if feature_names is not None:
        names = tuple(feature_names)
        if names != model.feature_names:
            offending = sorted(set(names) ^ set(model.feature_names))
            if not offending:
                offending = [a for a, b in zip(names, model.feature_names) if a != b]
            raise FeatureAlignmentError(offending, f"feature mismatch: {offending}")
    if X.shape[1] != len(model.feature_names):
        raise FeatureAlignmentError(
            [], f"expected {len(model.feature_names)} features, got {X.shape[1]}"
        )
    if model.kind == "Ridge":
        return X @ model.params["beta"] + model.params["intercept"]
    if model.kind == "MLP":
        return forward(model.params["weights"], X, model.params["activation"])
    if model.kind == "Forest":
        return predict_forest(model.params["trees"], X)
    raise PredictorError(f"unknown model kind {model.kind!r}")


__all__ = [
    "MODEL_KINDS",
    "DivergenceError",
    "FeatureAlignmentError",
    "ForestConfig",
    "MLPConfig",
    "PredictorError",
    "RidgeConfig",
    "TrainConfig",
    "TrainedModel",
    "fit_tree",
    "init_params",
    "loss_and_grad",
    "predict",
    "predict_tree",
    "train_forest",
    "train_mlp",
    "train_model",
    "train_ridge",
]
