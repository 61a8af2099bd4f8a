import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from latentsculpt.latent import (
    LatentCode,
    LatentStats,
    Space,
    broadcast_to_wplus,
    estimate_latent_stats,
    initial_latent,
    regularization_loss,
    stats_from_draws,
    truncate,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
# quarter-steps keep nonzero differences far from underflow
quarters = st.integers(-4000, 4000).map(lambda i: i / 4)


def codes(rows=st.integers(1, 5), cols=st.integers(1, 8), elements=finite):
    return st.tuples(rows, cols).flatmap(lambda s: arrays(np.float64, s, elements=elements))


def _stats(mean, std=None):
    mean = np.asarray(mean, dtype=np.float64)
    return LatentStats(LatentCode(mean), np.zeros_like(mean) if std is None else std, 10)


class TestLatentCode:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            LatentCode(np.array([[0.0, np.nan]]))

    def test_w_form_has_one_row(self):
        with pytest.raises(ValueError):
            LatentCode(np.zeros((2, 3)), Space.W)

    def test_values_are_read_only_copies(self):
        a = np.zeros((2, 3))
        w = LatentCode(a)
        a[0, 0] = 5.0
        assert w.values[0, 0] == 0.0
        with pytest.raises(ValueError):
            w.values[0, 0] = 1.0

    @given(codes())
    def test_json_round_trip_is_exact(self, v):
        w = LatentCode(v)
        back = LatentCode.from_json(w.to_json())
        assert back == w
        assert back.values.tobytes() == w.values.tobytes()

    def test_json_layout(self):
        doc = json.loads(LatentCode(np.arange(6.0).reshape(1, 6), Space.W).to_json())
        assert doc == {"shape": [1, 6], "space": "W", "values": [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]}

    def test_json_size_mismatch(self):
        with pytest.raises(ValueError):
            LatentCode.from_json(json.dumps({"shape": [2, 2], "space": "W_PLUS", "values": [1.0]}))


class TestBroadcast:
    def test_four_copies(self):
        r = np.array([[1.0, -2.0, 3.0]])
        out = broadcast_to_wplus(LatentCode(r, Space.W), 4)
        assert out.space is Space.W_PLUS
        np.testing.assert_array_equal(out.values, np.repeat(r, 4, axis=0))

    def test_zero_row_single_layer(self):
        out = broadcast_to_wplus(LatentCode(np.zeros((1, 5)), Space.W), 1)
        np.testing.assert_array_equal(out.values, np.zeros((1, 5)))

    def test_seeded_rows_match_input(self):
        row = np.random.default_rng(3).standard_normal((1, 16))
        out = broadcast_to_wplus(LatentCode(row, Space.W), 3)
        for i in range(3):
            assert np.array_equal(out.values[i], row[0])

    def test_rejects_wplus_input(self):
        with pytest.raises(ValueError):
            broadcast_to_wplus(LatentCode(np.zeros((2, 3))), 2)

    def test_rejects_zero_layers(self):
        with pytest.raises(ValueError):
            broadcast_to_wplus(LatentCode(np.zeros((1, 3)), Space.W), 0)

    @given(arrays(np.float64, (1, 6), elements=finite), st.integers(1, 6))
    def test_row_extraction_is_identity(self, row, n):
        out = broadcast_to_wplus(LatentCode(row, Space.W), n)
        for i in range(n):
            assert LatentCode(out.values[i : i + 1], Space.W) == LatentCode(row, Space.W)


class TestStats:
    def test_constant_sampler(self):
        c = LatentCode(np.full((2, 3), 1.5))
        s = estimate_latent_stats(lambda rng: c, 10, 0)
        assert s.mean == c
        np.testing.assert_array_equal(s.per_dim_std, 0.0)
        assert s.sample_count == 10

    def test_gaussian_mean_converges(self):
        mu = np.linspace(-1, 1, 8).reshape(2, 4)
        s = estimate_latent_stats(lambda rng: LatentCode(mu + rng.standard_normal(mu.shape)), 10_000, 1)
        assert np.max(np.abs(s.mean.values - mu)) < 0.05

    def test_deterministic(self):
        f = lambda rng: LatentCode(rng.standard_normal((2, 3)))  # noqa: E731
        assert estimate_latent_stats(f, 50, 4) == estimate_latent_stats(f, 50, 4)

    def test_rejects_small_n(self):
        with pytest.raises(ValueError):
            estimate_latent_stats(lambda rng: LatentCode(np.zeros((1, 1))), 1, 0)

    def test_permutation_invariant(self):
        draws = np.random.default_rng(2).standard_normal((40, 2, 3))
        a = stats_from_draws(draws)
        b = stats_from_draws(draws[np.random.default_rng(9).permutation(40)])
        np.testing.assert_allclose(a.mean.values, b.mean.values, rtol=0, atol=1e-14)
        np.testing.assert_allclose(a.per_dim_std, b.per_dim_std, rtol=0, atol=1e-14)

    def test_std_uses_sample_convention(self):
        draws = np.array([[[0.0]], [[2.0]]])
        assert stats_from_draws(draws).per_dim_std[0, 0] == pytest.approx(np.sqrt(2.0))

    def test_dict_round_trip(self):
        s = stats_from_draws(np.random.default_rng(0).standard_normal((5, 2, 3)))
        assert LatentStats.from_dict(json.loads(json.dumps(s.to_dict()))) == s


class TestRegularization:
    def test_zero_at_mean(self):
        mean = np.random.default_rng(0).standard_normal((2, 3))
        assert float(regularization_loss(LatentCode(mean), _stats(mean), 7.0)) == 0.0

    def test_squared_norm_four(self):
        mean = np.zeros((2, 2))
        w = LatentCode(np.array([[2.0, 0.0], [0.0, 0.0]]))
        assert float(regularization_loss(w, _stats(mean), 1.0)) == 4.0

    def test_gradient_matches_central_differences(self):
        rng = np.random.default_rng(5)
        mean = rng.standard_normal((3, 4))
        w = torch.tensor(rng.standard_normal((3, 4)), requires_grad=True)
        stats = _stats(mean)
        (g,) = torch.autograd.grad(regularization_loss(w, stats, 0.7), w)
        h = 1e-6
        fd = np.zeros((3, 4))
        base = w.detach().numpy()
        for idx in np.ndindex(3, 4):
            e = np.zeros((3, 4))
            e[idx] = h
            up = float(regularization_loss(LatentCode(base + e), stats, 0.7))
            dn = float(regularization_loss(LatentCode(base - e), stats, 0.7))
            fd[idx] = (up - dn) / (2 * h)
        np.testing.assert_allclose(g.numpy(), fd, rtol=1e-4, atol=1e-8)
        np.testing.assert_allclose(g.numpy(), 2 * 0.7 * (base - mean), rtol=1e-12)

    @given(codes(st.just(2), st.just(3), quarters), codes(st.just(2), st.just(3), quarters), st.floats(0, 100))
    def test_nonnegative_and_linear_in_lambda(self, w, mean, lam):
        s = _stats(mean)
        one = float(regularization_loss(LatentCode(w), s, 1.0))
        val = float(regularization_loss(LatentCode(w), s, lam))
        assert val >= 0.0
        assert val == pytest.approx(lam * one, rel=1e-12, abs=1e-300)
        assert (one == 0.0) == np.array_equal(w, mean)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            regularization_loss(LatentCode(np.zeros((2, 3))), _stats(np.zeros((3, 3))), 1.0)

    def test_negative_lambda(self):
        with pytest.raises(ValueError):
            regularization_loss(LatentCode(np.zeros((1, 1))), _stats(np.zeros((1, 1))), -1.0)


class TestInit:
    def test_mean_by_default(self):
        s = _stats(np.ones((2, 2)), np.ones((2, 2)))
        assert initial_latent(s) == s.mean

    def test_perturbation_scaled_by_std(self):
        std = np.array([[0.0, 1.0], [2.0, 0.0]])
        s = _stats(np.zeros((2, 2)), std)
        w = initial_latent(s, 0.1, seed=3)
        noise = np.random.default_rng(3).standard_normal((2, 2))
        np.testing.assert_allclose(w.values, 0.1 * std * noise)
        assert initial_latent(s, 0.1, seed=3) == w

    @settings(max_examples=30)
    @given(codes(st.just(2), st.just(3)), st.floats(0, 3))
    def test_truncate_bounds(self, w, n_std):
        std = np.full((2, 3), 0.5)
        s = _stats(np.zeros((2, 3)), std)
        out = truncate(LatentCode(w), s, n_std).values
        assert np.all(np.abs(out) <= n_std * 0.5 + 1e-12)
