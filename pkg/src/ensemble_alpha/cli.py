"""Command-line front end: ``synth``, ``screen``, ``backtest`` and ``report``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import shutil
import sys
import tempfile
from dataclasses import asdict
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from ._threads import worker_count
from .backtest import (
    MATRIX_ROWS,
    REPORT_COLUMNS,
    VALIDATION_METRICS,
    MatrixResult,
    run_matrix,
    screening_comparison,
)
from .config import ConfigError, RunConfig
from .factors import FactorHierarchy, weight_table
from .metrics import cumulative_ic
from .panel import FactorPanel, generate_synthetic_panel, load_panel, write_panel
from .predictors import MODEL_KINDS
from .preprocess import preprocess_panel
from .screening import screen_factors

MANIFEST = "manifest.json"


class CLIError(Exception):
    pass


# ---------------------------------------------------------------------------
# Output tree helpers
# ---------------------------------------------------------------------------


def _clean(obj: Any) -> Any:
    """JSON-safe copy: NaN/inf become null, numpy scalars become Python ones."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _fmt(x: Any) -> str:
    if isinstance(x, (float, np.floating)):
        return "" if not math.isfinite(float(x)) else repr(float(x))
    return str(x)


class OutputTree:
    """Files are staged in a temporary directory and moved into place at the end."""

    def __init__(self, target: Path):
        self.target = Path(target)
        self.target.parent.mkdir(parents=True, exist_ok=True)
        self.stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.target.parent))
        self.files: list[str] = []

    def _path(self, rel: str) -> Path:
        p = self.stage / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(rel)
        return p

    def text(self, rel: str, content: str) -> None:
        self._path(rel).write_bytes(content.encode("utf-8"))

    def json(self, rel: str, obj: Any) -> None:
        self.text(rel, json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")

    def csv(self, rel: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        self.text(rel, buf.getvalue())

    def binary(self, rel: str, data: bytes) -> None:
        self._path(rel).write_bytes(data)

    def commit(self) -> None:
        digests = {
            rel: hashlib.sha256((self.stage / rel).read_bytes()).hexdigest() for rel in sorted(set(self.files))
        }
        (self.stage / MANIFEST).write_text(json.dumps({"files": digests}, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        if self.target.exists():
            if self.target.is_dir() and (not any(self.target.iterdir()) or (self.target / MANIFEST).exists()):
                shutil.rmtree(self.target)
            else:
                self.abort()
                raise CLIError(f"refusing to overwrite {self.target}: not an output directory of this tool")
        os.replace(self.stage, self.target)

    def abort(self) -> None:
        shutil.rmtree(self.stage, ignore_errors=True)


def verify_manifest(directory: Path) -> list[str]:
    """Names of files whose digest no longer matches the manifest."""
    manifest = json.loads((directory / MANIFEST).read_text(encoding="utf-8"))
    bad = []
    for rel, digest in manifest["files"].items():
        p = directory / rel
        if not p.is_file() or hashlib.sha256(p.read_bytes()).hexdigest() != digest:
            bad.append(rel)
    return bad


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _synthetic(cfg: RunConfig) -> FactorPanel:
    s = cfg.synth
    return generate_synthetic_panel(
        int(s["n_stocks"]), int(s["n_months"]), int(s["n_factors"]), cfg.signal_spec(), cfg.seed, cfg.synth_start()
    )


def _panel(cfg: RunConfig) -> FactorPanel:
    if cfg.panel_path is None:
        return _synthetic(cfg)
    if not Path(cfg.panel_path).is_file():
        raise CLIError(f"panel file not found: {cfg.panel_path}")
    return load_panel(cfg.panel_path)


def cmd_synth(cfg: RunConfig) -> int:
    panel = _synthetic(cfg)
    spec = asdict(cfg.signal_spec())
    tree = OutputTree(cfg.out_dir)
    try:
        buf = tempfile.NamedTemporaryFile(suffix=".csv", delete=False)
        buf.close()
        write_panel(panel, buf.name)
        tree.binary("panel.csv", Path(buf.name).read_bytes())
        os.unlink(buf.name)
        tree.json("synth.json", {"seed": cfg.seed, "shape": list(panel.shape), "signal_spec": spec})
        tree.commit()
    except BaseException:
        tree.abort()
        raise
    print(json.dumps(_clean({"seed": cfg.seed, "signal_spec": spec, "panel": str(cfg.out_dir / "panel.csv")}), sort_keys=True))
    return 0


def cmd_screen(cfg: RunConfig) -> int:
    panel = _panel(cfg)
    bt = cfg.backtest
    clean, _ = preprocess_panel(panel, bt.size_factors, bt.winsor_k)
    result = screen_factors(clean, cfg.screening)
    tree = OutputTree(cfg.out_dir)
    try:
        tree.json("screen.json", result.to_dict())
        tree.csv("cv_curve.csv", ("lambda", "cv_error"), result.cv_curve)
        tree.commit()
    except BaseException:
        tree.abort()
        raise
    print(json.dumps({"kept": result.kept, "excluded": result.excluded, "lambda": result.lambda_selected}))
    return 0


def _equity_svg(result: MatrixResult) -> bytes:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "ensemble-alpha"
    matplotlib.rcParams["svg.fonttype"] = "none"
    fig, ax = plt.subplots(figsize=(8, 4.5))
    x = np.arange(len(result.months) + 1)
    for name, curve in result.curves.items():
        wealth = np.concatenate([[1.0], curve.wealth])
        ax.plot(x, wealth, label=name, lw=2.0 if name == "Benchmark" else 1.2)
    labels = ["start"] + [str(m) for m in result.months]
    step = max(1, len(labels) // 8)
    ax.set_xticks(x[::step])
    ax.set_xticklabels(labels[::step], rotation=30, fontsize=7)
    ax.set_ylabel("wealth")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def write_backtest_tree(
    tree: OutputTree, cfg: RunConfig, result: MatrixResult, comparison: list[dict] | None, hierarchy: FactorHierarchy
) -> None:
    months = [str(m) for m in result.months]
    rows = [name for name in MATRIX_ROWS if name in result.curves]
    tree.json(
        "report.json",
        {
            "seed": cfg.seed,
            "months": months,
            "reports": {name: result.reports[name].as_dict() for name in rows if name in result.reports},
            "validation": result.validation,
            "features": list(result.features.names),
            "screen": result.features.screen.to_dict() if result.features.screen else None,
            "flags": result.flags,
        },
    )
    tree.csv(
        "summary.csv",
        ("Weighting",) + REPORT_COLUMNS,
        [(name, *result.reports[name].row()) for name in rows if name in result.reports],
    )
    schemes = [s for s in result.validation]
    tree.csv(
        "validation.csv",
        ("Metric", *schemes),
        [(k, *(result.validation[s][k] for s in schemes)) for k in VALIDATION_METRICS],
    )
    for name in rows:
        c = result.curves[name]
        wealth = c.wealth
        tree.csv(
            f"equity/{name}.csv",
            ("month", "gross", "net", "benchmark", "wealth"),
            zip(months, c.gross_return, c.net_return, c.benchmark_return, wealth),
        )
    for name, series in result.weights.items():
        tree.csv(
            f"weights/{name}.csv",
            ("month", "model", "weight", "flags"),
            ((str(w.month), m, w.w[m], ";".join(w.flags)) for w in series for m in MODEL_KINDS),
        )
    ics = {m: result.ic.values[m] for m in MODEL_KINDS}
    cum = cumulative_ic(ics)
    tree.csv(
        "ic.csv",
        ("month", "model", "ic", "cumulative_ic"),
        ((months[i], m, ics[m][i], cum[m][i]) for i in range(len(months)) for m in MODEL_KINDS),
    )
    metric_names = list(result.history.series)
    tree.csv(
        "metrics.csv",
        ("month", "model", "metric", "value"),
        (
            (months[i], m, k, result.history.series[k][m][i])
            for i in range(len(months))
            for m in MODEL_KINDS
            for k in metric_names
        ),
    )
    # plot data: one x column, one y column per series
    tree.csv(
        "plots/equity.csv",
        ("month", *rows),
        zip(months, *(result.curves[n].wealth for n in rows)),
    )
    tree.csv("plots/cumulative_ic.csv", ("month", *MODEL_KINDS), zip(months, *(cum[m] for m in MODEL_KINDS)))
    for k in metric_names:
        tree.csv(
            f"plots/metric_{k}.csv",
            ("month", *MODEL_KINDS),
            zip(months, *(result.history.series[k][m] for m in MODEL_KINDS)),
        )
    for name, series in result.weights.items():
        tree.csv(
            f"plots/weights_{name}.csv",
            ("month", *MODEL_KINDS),
            ((str(w.month), *(w.w[m] for m in MODEL_KINDS)) for w in series),
        )
    if result.features.synthesis is not None:
        excluded = result.features.screen.excluded if result.features.screen else ()
        table = weight_table(result.features.synthesis, hierarchy, excluded)
        tree.csv(
            "entropy_weights.csv",
            ("group", "member", "weight", "excluded_by"),
            ((r["group"], r["member"], r["weight"], r["excluded_by"]) for r in table),
        )
    if comparison is not None:
        tree.csv(
            "screening_comparison.csv",
            ("Weighting",) + REPORT_COLUMNS,
            ((r["Weighting"], *(r[c] for c in REPORT_COLUMNS)) for r in comparison),
        )
    tree.binary("plots/equity.svg", _equity_svg(result))


def cmd_backtest(cfg: RunConfig) -> int:
    panel = _panel(cfg)
    hierarchy = cfg.hierarchy(panel.factor_names)
    bt = cfg.backtest
    result = run_matrix(panel, hierarchy, bt)
    comparison = None
    if cfg.compare_screening:
        comparison = screening_comparison(panel, hierarchy, bt, "IC_Mean")
    tree = OutputTree(cfg.out_dir)
    try:
        write_backtest_tree(tree, cfg, result, comparison, hierarchy)
        tree.commit()
    except BaseException:
        tree.abort()
        raise
    print(_table_text(result.table()))
    return 0


def _table_text(rows: list[dict]) -> str:
    header = ["Weighting", *REPORT_COLUMNS]
    lines = ["\t".join(header)]
    for r in rows:
        lines.append("\t".join([r["Weighting"]] + [f"{100 * r[c]:.2f}%" if r[c] is not None else "--" for c in REPORT_COLUMNS]))
    return "\n".join(lines)


def cmd_report(cfg: RunConfig) -> int:
    """Print the summary table of an existing backtest output directory."""
    d = Path(cfg.out_dir)
    if not (d / "report.json").is_file():
        raise CLIError(f"no report.json in {d}")
    if (d / MANIFEST).is_file():
        bad = verify_manifest(d)
        if bad:
            raise CLIError(f"manifest digest mismatch: {', '.join(bad)}")
    report = json.loads((d / "report.json").read_text(encoding="utf-8"))
    reports = report["reports"]
    rows = [{"Weighting": name, **reports[name]} for name in MATRIX_ROWS if name in reports]
    print(_table_text(rows))
    return 0


COMMANDS = {"synth": cmd_synth, "screen": cmd_screen, "backtest": cmd_backtest, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ensemble-alpha", description="Multi-model ensemble stock selection.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("synth", "write a synthetic factor panel"),
        ("screen", "LASSO factor screening on a panel"),
        ("backtest", "walk-forward backtest of every weighting scheme"),
        ("report", "print the summary table of a backtest output directory"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="TOML configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--panel", type=Path, help="panel file (overrides [data] panel)")
        if name == "backtest":
            p.add_argument("--schemes", help="comma-separated strategies, e.g. Ridge,IC_Mean")
            p.add_argument("--top-n", type=int, dest="top_n")
            p.add_argument("--cost-rate", type=float, dest="cost_rate")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        worker_count()
        cfg = RunConfig.load(args.config).override(
            seed=args.seed,
            out=args.out,
            schemes=getattr(args, "schemes", None),
            top_n=getattr(args, "top_n", None),
            cost_rate=getattr(args, "cost_rate", None),
            panel=args.panel,
        )
        return COMMANDS[args.command](cfg)
    except (ConfigError, CLIError, ValueError, OSError, KeyError) as exc:
        reason = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {reason}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
