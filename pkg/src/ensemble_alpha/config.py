"""Run configuration: one TOML file, overridden by command-line flags."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .backtest import STRATEGIES, BacktestConfig, parse_strategy
from .factors import FactorHierarchy
from .panel import MonthIndex, SignalSpec
from .predictors import TrainConfig
from .screening import ScreeningConfig


class ConfigError(ValueError):
    pass


SECTIONS = ("data", "preprocess", "hierarchy", "screening", "predictors", "ensemble", "backtest", "output")
TOP_LEVEL = ("seed",)

_ALLOWED = {
    "data": {"panel", "synth"},
    "synth": {
        "n_stocks", "n_months", "n_factors", "coefficients", "noise_scale", "interactions", "abs_terms",
        "market_vol", "persistence", "n_industries", "p_st", "p_suspended", "p_new_listing", "start",
    },
    "preprocess": {"size_factors", "winsor_k"},
    "hierarchy": {"groups", "n_groups"},
    "screening": {"enabled", "k_folds", "n_lambda", "lambda_min_ratio", "grid", "rule", "relaxed", "level", "threshold"},
    "ensemble": {"schemes", "ic_window", "metric_window", "ic_eps", "fallback"},
    "backtest": {"train_window", "test_window", "cost_rate", "cost_mode", "top_n", "features", "synthesis_window", "compare_screening"},
    "output": {"dir"},
}

DEFAULT_SYNTH = {
    "n_stocks": 100,
    "n_months": 48,
    "n_factors": 16,
    "coefficients": [0.01, 0.008, 0.008, 0.006, 0.006, 0.004, 0.004, 0.004],
    "noise_scale": 0.1,
    "interactions": [[0, 1, 0.01], [2, 3, 0.01]],
    "abs_terms": [[4, 0.01]],
    "market_vol": 0.04,
    "persistence": 0.5,
    "n_industries": 5,
    "p_st": 0.0,
    "p_suspended": 0.0,
    "p_new_listing": 0.0,
    "start": "2018-01",
}


def _check_keys(section: str, data: Mapping[str, Any]) -> None:
    unknown = set(data) - _ALLOWED[section]
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")


@dataclass
class RunConfig:
    seed: int = 0
    panel_path: Path | None = None
    synth: dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_SYNTH))
    hierarchy_groups: dict[str, tuple[str, ...]] | None = None
    n_groups: int = 8
    backtest: BacktestConfig = field(default_factory=BacktestConfig)
    screening: ScreeningConfig = field(default_factory=ScreeningConfig)
    compare_screening: bool = False
    out_dir: Path = Path("out")
    source: Path | None = None

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls.from_dict({})
        p = Path(path)
        try:
            raw = tomllib.loads(p.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {p}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from None
        return cls.from_dict(raw, base=p.parent, source=p)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], base: Path | None = None, source: Path | None = None) -> "RunConfig":
        unknown = set(raw) - set(SECTIONS) - set(TOP_LEVEL)
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        base = base or Path.cwd()
        cfg = cls(source=source)
        cfg.seed = int(raw.get("seed", 0))

        data = dict(raw.get("data", {}))
        _check_keys("data", data)
        if "panel" in data:
            cfg.panel_path = (base / data["panel"]).resolve()
            if not cfg.panel_path.is_file():
                raise ConfigError(f"panel file not found: {cfg.panel_path}")
        synth = dict(data.get("synth", {}))
        _check_keys("synth", synth)
        cfg.synth.update(synth)
        if int(cfg.synth["n_stocks"]) < 2 or int(cfg.synth["n_months"]) < 2 or int(cfg.synth["n_factors"]) < 2:
            raise ConfigError("synth n_stocks, n_months and n_factors must each be >= 2")

        hier = dict(raw.get("hierarchy", {}))
        _check_keys("hierarchy", hier)
        if "groups" in hier:
            cfg.hierarchy_groups = {str(g): tuple(m) for g, m in hier["groups"].items()}
        cfg.n_groups = int(hier.get("n_groups", 8))

        pre = dict(raw.get("preprocess", {}))
        _check_keys("preprocess", pre)
        scr = dict(raw.get("screening", {}))
        _check_keys("screening", scr)
        ens = dict(raw.get("ensemble", {}))
        _check_keys("ensemble", ens)
        bt = dict(raw.get("backtest", {}))
        _check_keys("backtest", bt)
        out = dict(raw.get("output", {}))
        _check_keys("output", out)
        if "dir" in out:
            cfg.out_dir = base / out["dir"]

        try:
            train = TrainConfig.from_dict(raw.get("predictors", {}))
            common = dict(
                k_folds=int(scr.get("k_folds", 5)),
                n_lambda=int(scr.get("n_lambda", 30)),
                lambda_min_ratio=float(scr.get("lambda_min_ratio", 1e-3)),
                grid=tuple(scr["grid"]) if "grid" in scr else None,
                seed=cfg.seed,
                threshold=float(scr.get("threshold", 1e-10)),
                relaxed=bool(scr.get("relaxed", True)),
                level=str(scr.get("level", "second")),
            )
            # standalone screening defaults to the one-standard-error rule,
            # the in-backtest screen to the CV minimum
            cfg.screening = ScreeningConfig(rule=str(scr.get("rule", "1se")), **common)
            screening = ScreeningConfig(rule=str(scr.get("rule", "min")), **common)
            schemes = tuple(parse_strategy(s) for s in ens.get("schemes", STRATEGIES))
            cfg.compare_screening = bool(bt.pop("compare_screening", False))
            cfg.backtest = BacktestConfig(
                seed=cfg.seed,
                schemes=schemes,
                screen=bool(scr.get("enabled", False)),
                screening=screening,
                size_factors=tuple(pre.get("size_factors", ())),
                winsor_k=float(pre.get("winsor_k", 3.0)),
                ic_window=int(ens.get("ic_window", 20)),
                metric_window=int(ens.get("metric_window", 20)),
                ic_eps=float(ens.get("ic_eps", 1e-8)),
                fallback=bool(ens.get("fallback", False)),
                train=train,
                **bt,
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return cfg

    def override(self, seed=None, out=None, schemes=None, top_n=None, cost_rate=None, panel=None) -> "RunConfig":
        """Apply command-line flags (flag > config > default)."""
        cfg = replace(self)
        bt = cfg.backtest
        if seed is not None:
            cfg.seed = int(seed)
            bt = replace(bt, seed=cfg.seed, screening=replace(bt.screening, seed=cfg.seed))
            cfg.screening = replace(cfg.screening, seed=cfg.seed)
        if schemes is not None:
            names = [s for s in schemes.split(",") if s.strip()]
            if not names:
                raise ConfigError("--schemes is empty")
            try:
                bt = replace(bt, schemes=tuple(parse_strategy(s) for s in names))
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        try:
            if top_n is not None:
                bt = replace(bt, top_n=int(top_n))
            if cost_rate is not None:
                bt = replace(bt, cost_rate=float(cost_rate))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        cfg.backtest = bt
        if out is not None:
            cfg.out_dir = Path(out)
        if panel is not None:
            cfg.panel_path = Path(panel)
        return cfg

    def signal_spec(self) -> SignalSpec:
        s = self.synth
        return SignalSpec(
            coefficients=tuple(float(c) for c in s["coefficients"]),
            noise_scale=float(s["noise_scale"]),
            interactions=tuple((int(a), int(b), float(c)) for a, b, c in s["interactions"]),
            abs_terms=tuple((int(a), float(c)) for a, c in s["abs_terms"]),
            market_vol=float(s["market_vol"]),
            persistence=float(s["persistence"]),
            n_industries=int(s["n_industries"]),
            p_st=float(s["p_st"]),
            p_suspended=float(s["p_suspended"]),
            p_new_listing=float(s["p_new_listing"]),
        )

    def synth_start(self) -> MonthIndex:
        return MonthIndex.parse(str(self.synth["start"]))

    def hierarchy(self, factor_names) -> FactorHierarchy:
        if self.hierarchy_groups is not None:
            return FactorHierarchy(self.hierarchy_groups)
        return FactorHierarchy.round_robin(factor_names, min(self.n_groups, len(factor_names)))
