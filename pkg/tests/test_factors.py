import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ensemble_alpha.factors import (
    DailySeries,
    DegenerateWindowWarning,
    FactorError,
    FactorHierarchy,
    InsufficientHistoryError,
    UndefinedBetaError,
    UndefinedGrowthError,
    UndefinedIRError,
    cgr,
    ewm_aggregate,
    ewm_entropy,
    ewm_standardize,
    ewm_weights,
    halflife_weighted_return,
    industry_excess_ir,
    reversal_flip,
    rolling_synthesize,
    ts_beta_residvol,
    weight_table,
)
from ensemble_alpha.panel import SignalSpec, generate_synthetic_panel

from oracles import entropy_reference


class TestHalflife:
    def test_constant(self):
        assert halflife_weighted_return([0.01] * 30, window=20) == pytest.approx(0.01, abs=1e-15)

    def test_infinite_halflife_is_mean(self):
        r = [0.01, -0.02, 0.04, 0.0]
        assert halflife_weighted_return(r, 4, halflife=math.inf) == pytest.approx(np.mean(r), abs=1e-15)

    def test_two_terms(self):
        # newest day has age 0: (lam * 0 + 1 * 0.02) / (lam + 1), lam = 0.5 ** (1/60)
        lam = 0.5 ** (1 / 60)
        expected = 0.02 / (1 + lam)
        assert halflife_weighted_return([0.0, 0.02], 2, 60) == pytest.approx(expected, abs=1e-15)
        assert expected == pytest.approx(0.0100578, abs=1e-7)

    def test_short(self):
        with pytest.raises(InsufficientHistoryError):
            halflife_weighted_return([0.1], 2)

    def test_daily_series_input(self):
        s = DailySeries(np.arange(3), [0.0, 0.0, 0.03])
        assert halflife_weighted_return(s, 1) == 0.03
        with pytest.raises(FactorError):
            DailySeries(np.array([2, 1]), [0.0, 0.0])


class TestIndustryIR:
    def test_constant_excess(self):
        base = np.linspace(0, 0.1, 20)
        with pytest.raises(UndefinedIRError):
            industry_excess_ir(base + 0.01, base)

    def test_alternating(self):
        e = np.array([1.0, -1.0] * 10)
        assert industry_excess_ir(e, np.zeros(20)) == pytest.approx(0.0, abs=1e-15)

    def test_hand_example(self):
        out = industry_excess_ir([1.0, 2.0, 3.0, 4.0], np.zeros(4), window=4)
        assert out == pytest.approx(2.5 / np.std([1, 2, 3, 4], ddof=1), abs=1e-15)
        assert out == pytest.approx(1.9364, abs=1e-4)


class TestCgr:
    def test_doubling(self):
        assert cgr([1, 1.1, 1.3, 1.6, 2]) == pytest.approx(2 ** 0.25 - 1, abs=1e-15)
        assert cgr([1, 1.1, 1.3, 1.6, 2]) == pytest.approx(0.1892, abs=1e-4)

    def test_constant(self):
        assert cgr([3.0] * 5) == 0.0

    @pytest.mark.parametrize("v", [[0, 1, 1, 1, 1], [1, 1, 1, 1, -1]])
    def test_undefined(self, v):
        with pytest.raises(UndefinedGrowthError):
            cgr(v)


class TestReversal:
    def test_below(self):
        assert reversal_flip(0.5, 1.0, 0.03) == -0.03

    def test_tie(self):
        assert reversal_flip(1.0, 1.0, 0.03) == 0.03

    def test_above(self):
        assert reversal_flip(2.0, 1.0, -0.01) == -0.01


class TestBeta:
    def test_scaled(self):
        b = np.random.default_rng(0).normal(0, 0.01, 250)
        beta, sd = ts_beta_residvol(2 * b, b)
        assert beta == pytest.approx(2.0, abs=1e-12)
        assert sd < 1e-12

    def test_constant_benchmark(self):
        with pytest.raises(UndefinedBetaError):
            ts_beta_residvol(np.random.default_rng(1).normal(size=250), np.full(250, 0.001))

    def test_planted_noise(self):
        rng = np.random.default_rng(2)
        b = rng.normal(0, 0.01, 250)
        _, sd = ts_beta_residvol(b + rng.normal(0, 0.01, 250), b)
        assert sd == pytest.approx(0.01, rel=0.2)


class TestEwmPrimitives:
    def test_standardize(self):
        hist = np.array([[2.0, 3.0], [6.0, 4.0]])
        assert ewm_standardize(hist, [2.0, 6.0, 5.0, 10.0, -1.0]).tolist() == [0.0, 1.0, 0.75, 1.0, 0.0]

    def test_flat_window(self):
        with pytest.warns(DegenerateWindowWarning):
            assert ewm_standardize(np.ones((3, 2)), [1.0, 2.0]).tolist() == [0.0, 0.0]

    def test_entropy_cases(self):
        assert ewm_entropy([0.4] * 6) == pytest.approx(1.0, abs=1e-15)
        assert ewm_entropy([0, 0, 0.7, 0]) == 0.0
        assert ewm_entropy([1.0, 3.0]) == pytest.approx(-(0.25 * math.log(0.25) + 0.75 * math.log(0.75)) / math.log(2), abs=1e-15)
        assert ewm_entropy([1.0, 3.0]) == pytest.approx(0.8113, abs=1e-4)
        with pytest.warns(DegenerateWindowWarning):
            assert ewm_entropy([0.0, 0.0, 0.0]) == 1.0

    @given(st.lists(st.floats(0, 1), min_size=2, max_size=30), st.floats(1e-3, 1e3))
    def test_entropy_bounds_and_scale(self, z, c):
        if sum(z) == 0:
            return
        e = ewm_entropy(z)
        assert 0.0 <= e <= 1.0
        assert ewm_entropy([c * v for v in z]) == pytest.approx(e, abs=1e-9)

    def test_weights(self):
        assert ewm_weights([1.0, 0.5]).tolist() == [0.0, 1.0]
        assert ewm_weights([0.5, 0.5]).tolist() == [0.5, 0.5]
        np.testing.assert_allclose(ewm_weights([0.8113, 0.0]), [0.1887 / 1.1887, 1 / 1.1887], atol=1e-15)
        np.testing.assert_allclose(ewm_weights([0.8113, 0.0]), [0.1587, 0.8413], atol=1e-4)
        with pytest.warns(DegenerateWindowWarning):
            assert ewm_weights([1.0, 1.0, 1.0]).tolist() == pytest.approx([1 / 3] * 3)

    def test_aggregate(self):
        z = np.array([0.3, 0.9])
        assert ewm_aggregate(z, [1.0]).tolist() == [0.3, 0.9]
        assert ewm_aggregate([[0.2, 0.8]], [0.5, 0.5])[0] == pytest.approx(0.5)
        assert ewm_aggregate(np.zeros((3, 2)), [0.4, 0.6]).tolist() == [0.0, 0.0, 0.0]


class TestHierarchy:
    def test_duplicate_member(self):
        with pytest.raises(FactorError):
            FactorHierarchy({"A": ("x",), "B": ("x", "y")})

    def test_restrict_and_round_robin(self):
        h = FactorHierarchy.round_robin(["a", "b", "c", "d", "e"], 2)
        assert h.groups == {"G1": ("a", "c", "e"), "G2": ("b", "d")}
        assert h.restrict(["b", "d"]).groups == {"G2": ("b", "d")}
        assert h.m == {"G1": 3, "G2": 2}


def _panel(T, N, F, seed):
    return generate_synthetic_panel(N, T, F, SignalSpec(coefficients=(0.1,)), seed=seed)


class TestRollingSynthesis:
    def test_reference_oracle(self):
        for seed in range(4):
            p = _panel(13, 4, 2, seed)
            h = FactorHierarchy({"G": ("f01", "f02")})
            res = rolling_synthesize(p, h)
            scores, weights = entropy_reference([p.factor("f01"), p.factor("f02")])
            np.testing.assert_allclose(res.panel.values[:, :, 0], scores, atol=1e-12, rtol=0)
            for t in range(13):
                got = [res.weights[t].w[("G", m)] for m in ("f01", "f02")]
                np.testing.assert_allclose(got, weights[t], atol=1e-12, rtol=0)

    def test_reference_oracle_longer(self):
        p = _panel(20, 5, 3, 11)
        h = FactorHierarchy({"A": ("f01", "f03"), "B": ("f02",)})
        res = rolling_synthesize(p, h)
        scores, _ = entropy_reference([p.factor("f01"), p.factor("f03")])
        np.testing.assert_allclose(res.panel.values[:, :, 0], scores, atol=1e-12, rtol=0)
        # single-member group: weight 1, score is the scaled member
        assert all(w.w[("B", "f02")] == 1.0 for w in res.weights)

    def test_thirteen_months(self):
        p = _panel(13, 6, 2, 3)
        res = rolling_synthesize(p, FactorHierarchy({"G": ("f01", "f02")}))
        assert res.panel.n_months == 13
        assert res.n_vintages == 2
        # the second vintage is estimated on the same 12 months as the first
        assert res.weights[12].w == res.weights[0].w

    def test_too_short(self):
        with pytest.raises(InsufficientHistoryError):
            rolling_synthesize(_panel(12, 4, 2, 0), FactorHierarchy({"G": ("f01", "f02")}))

    def test_stationary_panel(self):
        base = _panel(15, 5, 2, 5)
        v = np.repeat(base.values[:1], 15, axis=0)
        res = rolling_synthesize(base.replace(values=v), FactorHierarchy({"G": ("f01", "f02")}))
        first = res.weights[0].w
        assert all(w.w == first for w in res.weights)

    @given(st.integers(0, 10_000))
    def test_invariants(self, seed):
        p = _panel(16, 6, 4, seed)
        h = FactorHierarchy({"A": ("f01", "f02", "f03"), "B": ("f04",)})
        res = rolling_synthesize(p, h)
        for w in res.weights:
            for g in h.first_level:
                assert abs(w.group_sum(g) - 1.0) <= 1e-12
            assert all(v >= 0 for v in w.w.values())
            assert all(0 <= e <= 1 for e in w.entropy.values())
        assert np.nanmin(res.panel.values) >= 0 and np.nanmax(res.panel.values) <= 1

    def test_weight_table(self):
        p = _panel(14, 5, 3, 1)
        h = FactorHierarchy({"A": ("f01", "f02"), "B": ("f03",)})
        res = rolling_synthesize(p, h)
        full = FactorHierarchy({"A": ("f01", "f02", "f09"), "B": ("f03",)})
        rows = weight_table(res, full, excluded=["f09"])
        by = {r["member"]: r for r in rows}
        assert by["f09"]["excluded_by"] == "screening" and by["f09"]["weight"] == 0.0
        assert by["f01"]["weight"] + by["f02"]["weight"] == pytest.approx(1.0)
