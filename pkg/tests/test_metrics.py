import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from ensemble_alpha.metrics import (
    ICSeries,
    MetricError,
    UndefinedCorrelationError,
    confusion,
    cumulative_ic,
    direction_metrics,
    evaluate_forecast,
    ic_at,
    mape,
    rmse,
    spearman,
)

from oracles import confusion_oracle, spearman_no_ties, spearman_oracle

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


class TestRmse:
    def test_identical_is_zero(self):
        assert rmse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0

    def test_hand_value(self):
        assert rmse([3.0, -4.0], [0.0, 0.0]) == pytest.approx(math.sqrt(12.5), abs=1e-15)

    def test_constant_offset(self):
        a = np.linspace(-1, 1, 7)
        assert rmse(a + 0.25, a) == pytest.approx(0.25, abs=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(MetricError):
            rmse([], [])

    @given(st.lists(st.tuples(finite, finite), min_size=1, max_size=30))
    def test_symmetric(self, pairs):
        p, a = zip(*pairs)
        assert rmse(p, a) == rmse(a, p)


class TestMape:
    def test_double(self):
        assert mape([2.0], [1.0]) == 1.0

    def test_identical(self):
        assert mape([0.1, -0.2], [0.1, -0.2]) == 0.0

    def test_zero_actual_uses_floor(self):
        assert mape([1.0], [0.0], eps=1e-8) == pytest.approx(1e8)

    def test_not_symmetric(self):
        assert mape([2.0], [1.0]) != mape([1.0], [2.0])


class TestDirection:
    def test_all_up_half_actual_up(self):
        p, r, f = direction_metrics([1, 1, 1, 1], [1, -1, 1, -1])
        assert (p, r) == (0.5, 1.0)
        assert f == pytest.approx(2 / 3, abs=1e-15)

    def test_perfect(self):
        assert direction_metrics([0.1, -0.1, 0.3], [0.2, -0.5, 0.1]) == (1.0, 1.0, 1.0)

    def test_no_predicted_positive(self):
        p, r, f = direction_metrics([-1, -1], [1, -1])
        assert (p, r, f) == (0.0, 0.0, 0.0)

    @given(st.lists(st.tuples(finite, finite), min_size=1, max_size=40))
    def test_confusion_matches_oracle(self, pairs):
        p, a = zip(*pairs)
        c = confusion(p, a)
        assert (c.tp, c.fp, c.tn, c.fn) == confusion_oracle(p, a)
        assert c.total == len(pairs)

    @given(st.lists(st.tuples(finite, finite), min_size=1, max_size=40), st.floats(1e-3, 1e3))
    def test_invariant_to_positive_scaling(self, pairs, scale):
        p, a = zip(*pairs)
        scaled = [scale * v for v in p]
        # scaling can underflow tiny positives to 0; restrict to values that stay on their side
        if any((v > 0) != (s > 0) for v, s in zip(p, scaled)):
            return
        assert direction_metrics(p, a) == direction_metrics(scaled, a)


class TestSpearman:
    def test_identical_order(self):
        assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == 1.0

    def test_reversed(self):
        assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0

    def test_hand_example(self):
        x, y = [1, 2, 3, 4, 5], [1, 3, 2, 5, 4]
        assert spearman_no_ties(x, y) == pytest.approx(0.8, abs=1e-15)
        assert spearman(x, y) == pytest.approx(0.8, abs=1e-12)

    def test_constant_rejected(self):
        with pytest.raises(UndefinedCorrelationError):
            spearman([1, 1, 1], [1, 2, 3])

    def test_matches_oracle_with_ties(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            n = int(rng.integers(2, 40))
            x = rng.integers(0, 6, n).astype(float)
            y = rng.normal(size=n).round(1)
            if len(set(x)) < 2 or len(set(y)) < 2:
                continue
            assert abs(spearman(x, y) - spearman_oracle(x, y)) <= 1e-12

    @given(
        st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=25, unique=True),
        st.integers(0, 2**31 - 1),
    )
    def test_invariant_under_increasing_transform(self, xs, seed):
        x = np.array(xs)
        y = np.random.default_rng(seed).normal(size=x.size)
        base = spearman(x, y)
        ex = np.exp(x / 50.0)
        assume(np.unique(ex).size == x.size)  # exp can merge values closer than one ulp
        assert spearman(ex, y) == pytest.approx(base, abs=1e-12)
        assert spearman(x, y**3 + 2 * y) == pytest.approx(base, abs=1e-12)


class TestIC:
    def test_perfect_and_inverse(self):
        r = np.array([0.02, -0.01, 0.05, 0.0])
        assert ic_at(r, r) == 1.0
        assert ic_at(-r, r) == -1.0

    def test_null_distribution(self):
        rng = np.random.default_rng(5)
        small = sum(abs(ic_at(rng.normal(size=300), rng.normal(size=300))) < 0.2 for _ in range(500))
        assert small / 500 >= 0.95

    def test_cumulative(self):
        np.testing.assert_allclose(cumulative_ic({"m": [0.1, -0.05]})["m"], [0.1, 0.05], atol=1e-15)
        assert cumulative_ic({"m": [0.0, 0.0]})["m"].tolist() == [0.0, 0.0]
        assert cumulative_ic({"m": [0.3]})["m"].tolist() == [0.3]

    def test_series_append_and_range(self):
        s = ICSeries()
        s.append("2020-01", {"a": 0.1, "b": -0.2})
        s.append("2020-02", {"a": 0.2, "b": 0.1})
        np.testing.assert_allclose(s.cumulative["a"], [0.1, 0.3])
        with pytest.raises(MetricError):
            s.append("2020-03", {"a": 1.5, "b": 0.0})
        with pytest.raises(MetricError):
            s.append("2020-03", {"a": 0.1})

    def test_evaluate_forecast_constant_prediction(self):
        out = evaluate_forecast([0.0, 0.0, 0.0], [0.1, -0.1, 0.2])
        assert math.isnan(out["ic"])
        assert out["rmse"] > 0
