"""Multi-factor stock selection with an IC-weighted ensemble of three forecasters."""

from .backtest import BacktestConfig, BacktestReport, EquityCurve, rolling_run, run_matrix
from .ensemble import SchemeId
from .factors import FactorHierarchy, rolling_synthesize
from .panel import FactorPanel, MonthIndex, SignalSpec, generate_synthetic_panel, load_panel, write_panel
from .predictors import TrainConfig
from .preprocess import preprocess_panel
from .screening import ScreeningConfig, screen_factors

__version__ = "0.1.0"

__all__ = [
    "BacktestConfig",
    "BacktestReport",
    "EquityCurve",
    "FactorHierarchy",
    "FactorPanel",
    "MonthIndex",
    "SchemeId",
    "ScreeningConfig",
    "SignalSpec",
    "TrainConfig",
    "generate_synthetic_panel",
    "load_panel",
    "preprocess_panel",
    "rolling_run",
    "rolling_synthesize",
    "run_matrix",
    "screen_factors",
    "write_panel",
]
