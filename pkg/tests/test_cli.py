import hashlib
import json
from pathlib import Path

import pytest

from ensemble_alpha.cli import main, verify_manifest
from ensemble_alpha.config import ConfigError, RunConfig

FAST = """
seed = 1

[data.synth]
n_stocks = 40
n_months = 16
n_factors = 8

[backtest]
top_n = 10

[predictors.mlp]
epochs = 3

[predictors.forest]
n_trees = 8
"""


@pytest.fixture
def fast_config(tmp_path):
    p = tmp_path / "fast.toml"
    p.write_text(FAST, encoding="utf-8")
    return p


def digests(root: Path) -> dict[str, str]:
    return {str(f.relative_to(root)): hashlib.sha256(f.read_bytes()).hexdigest() for f in sorted(root.rglob("*")) if f.is_file()}


class TestSynth:
    def test_default_dims(self, tmp_path, capsys):
        assert main(["synth", "--out", str(tmp_path / "s")]) == 0
        meta = json.loads((tmp_path / "s" / "synth.json").read_text())
        assert meta["shape"][:2] == [48, 100]
        printed = json.loads(capsys.readouterr().out)
        assert printed["seed"] == 0 and "signal_spec" in printed

    def test_same_seed_same_digest(self, tmp_path):
        main(["synth", "--seed", "3", "--out", str(tmp_path / "a")])
        main(["synth", "--seed", "3", "--out", str(tmp_path / "b")])
        assert digests(tmp_path / "a") == digests(tmp_path / "b")

    def test_zero_stocks(self, tmp_path, capsys):
        cfg = tmp_path / "zero.toml"
        cfg.write_text("[data.synth]\nn_stocks = 0\n")
        assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "z")]) == 2
        err = capsys.readouterr().err.strip()
        assert err.startswith("error: ConfigError:") and "\n" not in err
        assert not (tmp_path / "z").exists()


class TestScreen:
    def test_planted(self, tmp_path, capsys):
        cfg = tmp_path / "planted.toml"
        cfg.write_text(
            "[data.synth]\nn_stocks = 100\nn_months = 24\nn_factors = 20\n"
            "coefficients = [0.02, 0.02, 0.02]\ninteractions = []\nabs_terms = []\nnoise_scale = 0.1\n"
        )
        hits = 0
        for seed in range(10):
            out = tmp_path / f"scr{seed}"
            assert main(["screen", "--config", str(cfg), "--seed", str(seed), "--out", str(out)]) == 0
            kept = json.loads((out / "screen.json").read_text())["kept"]
            hits += kept == ["f01", "f02", "f03"]
        capsys.readouterr()
        assert hits >= 9

    def test_noise_panel(self, tmp_path):
        cfg = tmp_path / "noise.toml"
        cfg.write_text(
            "[data.synth]\nn_stocks = 50\nn_months = 12\nn_factors = 6\n"
            "coefficients = []\ninteractions = []\nabs_terms = []\nnoise_scale = 1.0\n"
        )
        assert main(["screen", "--config", str(cfg), "--out", str(tmp_path / "n")]) == 0
        res = json.loads((tmp_path / "n" / "screen.json").read_text())
        assert len(res["kept"]) + len(res["excluded"]) == 6

    def test_missing_panel(self, tmp_path, capsys):
        rc = main(["screen", "--panel", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")])
        assert rc != 0
        assert capsys.readouterr().err.startswith("error:")

    def test_screen_reads_panel_file(self, tmp_path, capsys):
        main(["synth", "--seed", "2", "--out", str(tmp_path / "s")])
        panel = tmp_path / "s" / "panel.csv"
        assert main(["screen", "--panel", str(panel), "--out", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o" / "cv_curve.csv").read_text().startswith("lambda,cv_error")


class TestBacktest:
    def test_tree_and_manifest(self, tmp_path, fast_config, capsys):
        out = tmp_path / "bt"
        assert main(["backtest", "--config", str(fast_config), "--out", str(out)]) == 0
        text = capsys.readouterr().out
        assert text.splitlines()[0].startswith("Weighting\tStrategy Return")
        report = json.loads((out / "report.json").read_text())
        assert len(report["reports"]) == 11
        for name in ("summary.csv", "validation.csv", "ic.csv", "metrics.csv", "plots/equity.svg",
                     "plots/cumulative_ic.csv", "equity/Benchmark.csv", "weights/IC_Mean.csv", "entropy_weights.csv"):
            assert (out / name).is_file(), name
        assert verify_manifest(out) == []
        assert main(["report", "--out", str(out)]) == 0
        assert capsys.readouterr().out.splitlines()[-1].startswith("Benchmark")

    def test_flags_override(self, tmp_path, fast_config, capsys):
        out = tmp_path / "o"
        rc = main(["backtest", "--config", str(fast_config), "--out", str(out), "--schemes", "Ridge,ic_ratio",
                   "--top-n", "5", "--cost-rate", "0.01"])
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert set(report["reports"]) == {"Ridge", "IC_Ratio", "Benchmark"}
        cfg = RunConfig.load(fast_config).override(top_n=5, cost_rate=0.01, seed=9)
        assert (cfg.backtest.top_n, cfg.backtest.cost_rate, cfg.backtest.seed) == (5, 0.01, 9)

    def test_bad_scheme(self, tmp_path, fast_config, capsys):
        rc = main(["backtest", "--config", str(fast_config), "--out", str(tmp_path / "o"), "--schemes", "Sharpe"])
        assert rc == 2
        assert not (tmp_path / "o").exists()

    def test_comparison_mode(self, tmp_path, capsys):
        cfg = tmp_path / "cmp.toml"
        cfg.write_text(FAST.replace("[backtest]\n", "[backtest]\ncompare_screening = true\n"))
        out = tmp_path / "c"
        assert main(["backtest", "--config", str(cfg), "--out", str(out), "--schemes", "IC_Mean"]) == 0
        lines = (out / "screening_comparison.csv").read_text().splitlines()
        assert [l.split(",")[0] for l in lines[1:]] == ["After screening", "Before screening"]

    def test_tampered_manifest(self, tmp_path, fast_config, capsys):
        out = tmp_path / "bt"
        main(["backtest", "--config", str(fast_config), "--out", str(out), "--schemes", "Ridge"])
        (out / "summary.csv").write_text("changed\n")
        assert main(["report", "--out", str(out)]) == 1
        assert "summary.csv" in capsys.readouterr().err

    def test_refuses_foreign_directory(self, tmp_path, fast_config, capsys):
        out = tmp_path / "mine"
        out.mkdir()
        (out / "keep.txt").write_text("x")
        assert main(["backtest", "--config", str(fast_config), "--out", str(out), "--schemes", "Ridge"]) != 0
        assert (out / "keep.txt").read_text() == "x"

    def test_bad_thread_env(self, tmp_path, fast_config, monkeypatch, capsys):
        monkeypatch.setenv("ENSEMBLE_ALPHA_THREADS", "many")
        assert main(["backtest", "--config", str(fast_config), "--out", str(tmp_path / "o")]) != 0


class TestConfig:
    def test_unknown_key(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("[backtest]\nwindow = 3\n")
        with pytest.raises(ConfigError):
            RunConfig.load(p)

    def test_unknown_section(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"plots": {}})

    def test_panel_path_resolved(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text('[data]\npanel = "missing.csv"\n')
        with pytest.raises(ConfigError):
            RunConfig.load(p)
