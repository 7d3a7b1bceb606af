import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dropconf.ensemble import from_passes, mc_dropout_predict, pass_stats
from dropconf.net import NetConfig, init_mlp


def tiny_model(dropout_p, seed=0):
    return init_mlp(3, NetConfig(hidden_sizes=(6, 4), dropout_p=dropout_p), seed=seed)


class TestPassStats:
    def test_constant_sequence(self):
        assert pass_stats([1, 1, 1]) == (1.0, 0.0)

    def test_two_point_population_std(self):
        assert pass_stats([0, 2]) == (1.0, 1.0)

    def test_single_member(self):
        assert pass_stats([5]) == (5.0, 0.0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            pass_stats([])

    @settings(max_examples=60, deadline=None)
    @given(
        row=st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30),
        shift=st.floats(-100, 100),
    )
    def test_order_invariance_and_shift_equivariance(self, row, shift):
        mean, std = pass_stats(row)
        mean_r, std_r = pass_stats(list(reversed(row)))
        assert mean == pytest.approx(mean_r, rel=1e-9, abs=1e-9)
        assert std == pytest.approx(std_r, rel=1e-9, abs=1e-9)
        mean_s, std_s = pass_stats([v + shift for v in row])
        assert mean_s == pytest.approx(mean + shift, rel=1e-9, abs=1e-6)
        assert std_s == pytest.approx(std, rel=1e-6, abs=1e-6)


class TestMcDropout:
    def test_zero_dropout_all_passes_identical(self):
        model = tiny_model(0.0)
        X = np.random.default_rng(0).standard_normal((5, 3))
        pred = mc_dropout_predict(model, X, 10, seed=1)
        assert np.all(pred.passes == pred.passes[:, [0]])
        # identical passes; std is 0 up to the mean's rounding noise
        assert np.all(pred.stds < 1e-12)

    def test_default_member_count(self):
        model = tiny_model(0.2)
        X = np.zeros((2, 3))
        pred = mc_dropout_predict(model, X, 100, seed=2)
        assert pred.n_members == 100
        assert pred.passes.shape == (2, 100)

    def test_summaries_match_pass_matrix(self):
        model = tiny_model(0.5)
        X = np.random.default_rng(1).standard_normal((8, 3))
        pred = mc_dropout_predict(model, X, 40, seed=3)
        assert np.allclose(pred.means, pred.passes.mean(axis=1), atol=1e-12)
        assert np.allclose(pred.stds, pred.passes.std(axis=1), atol=1e-12)

    def test_deterministic_per_seed(self):
        model = tiny_model(0.3)
        X = np.random.default_rng(2).standard_normal((4, 3))
        a = mc_dropout_predict(model, X, 20, seed=9)
        b = mc_dropout_predict(model, X, 20, seed=9)
        assert np.array_equal(a.passes, b.passes)
        c = mc_dropout_predict(model, X, 20, seed=10)
        assert not np.array_equal(a.passes, c.passes)

    def test_scheduling_independence(self):
        # pass p of a long run equals the same pass computed in a shorter run:
        # streams are keyed by (seed, pass index), not execution order
        model = tiny_model(0.4)
        X = np.random.default_rng(3).standard_normal((6, 3))
        full = mc_dropout_predict(model, X, 15, seed=4)
        prefix = mc_dropout_predict(model, X, 7, seed=4)
        assert np.array_equal(full.passes[:, :7], prefix.passes)

    def test_spread_monotone_in_dropout_p(self):
        X = np.random.default_rng(4).standard_normal((30, 3))
        mean_spread = []
        for p in (0.1, 0.25, 0.5):
            model = tiny_model(p, seed=7)
            pred = mc_dropout_predict(model, X, 100, seed=5)
            mean_spread.append(pred.stds.mean())
        assert mean_spread[0] < mean_spread[1] < mean_spread[2]


class TestFromPasses:
    def test_row_example(self):
        pred = from_passes(np.array([[0.0, 2.0]]))
        assert pred.means[0] == 1.0 and pred.stds[0] == 1.0

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            from_passes(np.empty((3, 0)))
