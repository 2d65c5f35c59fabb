import csv
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from kinn.evaluation import (
    SessionResult,
    aggregate,
    exact_upper_tail,
    mape,
    mean_std,
    rmse,
    session_metrics,
    signed_ranks,
    wilcoxon_one_sided,
    write_session_csv,
    write_summary_csv,
)


def brute_force_p(x, y):
    """P(T+ >= observed) by enumerating every sign assignment."""
    d, ranks = signed_ranks(x, y)
    observed = ranks[d > 0].sum()
    hits = 0
    for signs in itertools.product((0, 1), repeat=d.size):
        if np.dot(signs, ranks) >= observed - 1e-9:
            hits += 1
    return hits / 2**d.size


class TestMetrics:
    def test_mape_example(self):
        assert mape([100.0, 200.0], [110.0, 180.0]) == pytest.approx(0.1)

    def test_mape_zero_actual(self):
        with pytest.raises(ValueError, match="zero"):
            mape([0.0, 1.0], [1.0, 1.0])

    def test_rmse(self):
        assert rmse([1.0, 1.0], [4.0, 5.0]) == pytest.approx(np.sqrt(12.5))

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            mape([1.0, 2.0], [1.0])

    def test_pooling(self):
        actual = [np.array([100.0, 100.0]), np.array([100.0])]
        fc = [np.array([110.0, 100.0]), np.array([70.0])]
        days = session_metrics(0, actual, fc, "days")
        windows = session_metrics(0, actual, fc, "windows")
        assert days.mape == pytest.approx(0.4 / 3)
        assert windows.mape == pytest.approx((0.05 + 0.3) / 2)
        assert days.n == windows.n == 3

    def test_mean_std(self):
        assert mean_std([1.0, 2.0, 3.0]) == (2.0, 1.0, False)
        assert mean_std([4.0]) == (4.0, 0.0, True)


class TestWilcoxon:
    @pytest.mark.parametrize("n", range(5, 11))
    def test_exact_matches_enumeration(self, backend, n):
        rng = np.random.default_rng(n)
        for _ in range(5):
            x, y = rng.normal(size=n), rng.normal(size=n)
            res = wilcoxon_one_sided(x, y, method="exact")
            assert res.p_value == brute_force_p(x, y)

    def test_exact_with_ties(self, backend):
        x = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0])
        y = np.array([0.0, 3.0, 2.0, 5.0, 3.0, 6.0, 8.0])   # |d| = 1,1,1,1,2,0,1
        res = wilcoxon_one_sided(x, y, method="exact")
        assert res.n == 6
        assert res.p_value == pytest.approx(brute_force_p(x, y), abs=1e-15)

    def test_normal_close_to_exact_at_12(self, backend):
        rng = np.random.default_rng(12)
        worst = 0.0
        for _ in range(200):
            x, y = rng.normal(size=12), rng.normal(size=12)
            e = wilcoxon_one_sided(x, y, method="exact").p_value
            a = wilcoxon_one_sided(x, y, method="normal").p_value
            worst = max(worst, abs(e - a))
        assert worst < 0.01

    def test_agrees_with_scipy(self, rng):
        for n in (8, 20):
            x, y = rng.normal(size=n), rng.normal(0.3, 1, size=n)
            ours = wilcoxon_one_sided(x, y, method="exact" if n <= 12 else "normal")
            ref = stats.wilcoxon(x, y, alternative="greater",
                                 method="exact" if n <= 12 else "approx", correction=True)
            assert ours.statistic == ref.statistic
            assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-9)

    def test_obvious_improvement(self):
        base = np.linspace(0.05, 0.08, 34)
        kinn = base - 0.01 - np.linspace(0, 0.003, 34)
        res = wilcoxon_one_sided(base, kinn)
        assert res.method == "normal"
        assert res.statistic == 34 * 35 / 2
        assert res.p_value < 1e-6

    def test_all_zero_is_degenerate(self):
        res = wilcoxon_one_sided(np.ones(6), np.ones(6))
        assert res.degenerate and res.p_value == 1.0

    def test_too_few(self):
        with pytest.raises(ValueError, match="at least 5"):
            wilcoxon_one_sided([1.0, 2.0, 3.0], [0.0, 0.0, 0.0])

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(-6, 6).filter(bool), min_size=5, max_size=12))
    def test_tail_complement(self, diffs):
        """P(T+ >= t) + P(T+ <= t) = 1 + P(T+ = t), with integer-valued ties."""
        d = np.array(diffs, dtype=float)
        x, y = d, np.zeros_like(d)
        res = wilcoxon_one_sided(x, y, method="exact")
        flipped = wilcoxon_one_sided(y, x, method="exact")
        _, ranks = signed_ranks(x, y)
        total = ranks.sum()
        assert res.statistic + flipped.statistic == pytest.approx(total)
        point = exact_upper_tail(ranks, res.statistic) - exact_upper_tail(ranks, res.statistic + 0.5)
        assert res.p_value + flipped.p_value - 1.0 == pytest.approx(point, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-10, 10).filter(lambda v: abs(v) > 1e-6), min_size=5, max_size=30))
    def test_p_in_unit_interval(self, diffs):
        res = wilcoxon_one_sided(np.array(diffs), np.zeros(len(diffs)))
        assert 0.0 <= res.p_value <= 1.0


def _results(values):
    return [SessionResult(i, v, v * 100, 10) for i, v in enumerate(values)]


class TestAggregate:
    def test_summary_values(self):
        base = [0.05, 0.06, 0.07, 0.08, 0.09, 0.10]
        kin = [0.04, 0.05, 0.05, 0.06, 0.06, 0.07]
        t = aggregate("kgate_norm", _results(base), _results(kin))
        assert t.mean_ann == pytest.approx(np.mean(base))
        assert t.std_ann == pytest.approx(np.std(base, ddof=1))
        assert t.wilcoxon_p == pytest.approx(1 / 64)
        assert t.flags == []

    def test_failed_sessions_dropped_pairwise(self):
        base = _results([0.05, 0.06, 0.07, 0.08, 0.09, 0.10])
        kin = _results([0.04, 0.05, 0.05, 0.06, 0.06, 0.07])
        kin[2] = SessionResult(2, float("nan"), float("nan"), 0, failed=True)
        t = aggregate("m", base, kin)
        assert "failed_sessions=1" in t.flags
        assert t.mean_ann == pytest.approx(np.mean([0.05, 0.06, 0.08, 0.09, 0.10]))
        assert t.wilcoxon.n == 5

    def test_single_session_flag(self):
        t = aggregate("m", _results([0.05]), _results([0.04]))
        assert "single_session" in t.flags
        assert any(f.startswith("wilcoxon_unavailable") for f in t.flags)

    def test_mismatched_sessions(self):
        with pytest.raises(ValueError):
            aggregate("m", _results([0.1, 0.2]), _results([0.1]))

    def test_csv_writers(self, tmp_path):
        base, kin = _results([0.05, 0.06, 0.07, 0.08, 0.09]), _results([0.04] * 5)
        write_session_csv(tmp_path / "s.csv", [("m", "baseline", r) for r in base])
        rows = list(csv.DictReader(open(tmp_path / "s.csv")))
        assert rows[0] == {"model": "m", "arm": "baseline", "session": "0", "mape": "0.05",
                           "rmse": "5.0"}
        write_summary_csv(tmp_path / "t.csv", [aggregate("m", base, kin)])
        (row,) = csv.DictReader(open(tmp_path / "t.csv"))
        assert float(row["wilcoxon_p"]) == pytest.approx(1 / 32)
        assert float(row["mean_kinn"]) == 0.04
