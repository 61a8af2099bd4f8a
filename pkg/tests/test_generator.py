import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from latentsculpt.generator import (
    SIDE_RANGE,
    CameraPose,
    GeneratorConfig,
    RenderQuality,
    ToyGenerator,
    ToySceneParams,
    decode_scene,
    psnr,
    render_oracle,
    render_params,
    sample_side_pose,
)
from latentsculpt.illumination import AMBIENT_UNIT, SHLighting
from latentsculpt.latent import LatentCode

GEN = ToyGenerator()
RNG_W = GEN.sample_latent(np.random.default_rng(0))
SMALL = CameraPose(image_size=16)


def zero_code():
    return LatentCode(np.zeros(GEN.latent_shape))


class TestCameraPose:
    @pytest.mark.parametrize("kw", [{"theta": 0.0}, {"theta": math.pi}, {"radius": 0.0}, {"fov_y": math.pi},
                                    {"image_size": 0}])
    def test_rejects_invalid(self, kw):
        with pytest.raises(ValueError):
            CameraPose(**kw)

    @given(st.floats(0.1, math.pi - 0.1), st.floats(-math.pi, math.pi))
    def test_world_to_camera_is_rotation(self, theta, phi):
        R = CameraPose(theta=theta, phi=phi).world_to_camera()
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0)

    def test_center_ray_points_at_origin(self):
        pose = CameraPose(theta=1.2, phi=0.4, image_size=2)
        d = pose.ray_directions().reshape(-1, 3).mean(0)
        d /= np.linalg.norm(d)
        to_origin = -pose.position() / np.linalg.norm(pose.position())
        np.testing.assert_allclose(d, to_origin, atol=1e-12)

    def test_top_row_looks_up(self):
        dirs = CameraPose(image_size=8).ray_directions()
        assert dirs[0, :, 2].mean() > 0 > dirs[-1, :, 2].mean()


class TestQuality:
    def test_rejects_near_after_far(self):
        with pytest.raises(ValueError):
            RenderQuality(near=3.0, far=2.0)

    def test_rejects_single_sample(self):
        with pytest.raises(ValueError):
            RenderQuality(samples_per_ray=1)


class TestDecode:
    def test_zero_code_ranges(self):
        p = GEN.decode(zero_code().tensor())
        bias = GEN.weights["blob_b"].reshape(8, 8)
        torch.testing.assert_close(p["centers"], 0.8 * torch.tanh(bias[:, 0:3]), rtol=0, atol=0)
        assert torch.all(p["scales"] >= 0.05)
        assert torch.all(p["densities"] >= 0.1)
        assert torch.all((p["albedo"] > 0) & (p["albedo"] < 1))

    def test_deterministic(self):
        a = decode_scene(RNG_W, 0)
        b = decode_scene(RNG_W, 0)
        for key in ("centers", "scales", "densities", "albedo"):
            assert np.array_equal(getattr(a, key), getattr(b, key))
        assert a.light == b.light

    def test_seed_changes_weights(self):
        assert ToyGenerator(GeneratorConfig(weights_seed=1)).checksum() != GEN.checksum()

    def test_light_slice_only_moves_light(self):
        row, cols = GEN.light_slice
        v = RNG_W.values.copy()
        v[row, cols] += np.random.default_rng(1).standard_normal(9)
        a = GEN.decode_scene(RNG_W)
        b = GEN.decode_scene(LatentCode(v))
        for key in ("centers", "scales", "densities", "albedo"):
            assert np.array_equal(getattr(a, key), getattr(b, key))
        assert not np.allclose(a.light.coeffs, b.light.coeffs)

    def test_rest_of_code_leaves_light(self):
        row, cols = GEN.light_slice
        v = RNG_W.values.copy()
        mask = np.ones_like(v, dtype=bool)
        mask[row, cols] = False
        v[mask] += 0.3
        assert GEN.decode_scene(LatentCode(v)).light == GEN.decode_scene(RNG_W).light

    def test_rejects_wrong_shape(self):
        with pytest.raises(ValueError):
            GEN.decode(torch.zeros(3, 64, dtype=torch.float64))

    def test_pose_never_enters_the_scene(self):
        pts = np.random.default_rng(4).uniform(-1, 1, size=(100, 3))
        before = GEN.decode_scene(RNG_W)
        for theta, phi in [(1.2, 0.3), (1.9, 2.5)]:
            GEN.render(RNG_W, CameraPose(theta=theta, phi=phi, image_size=8))
        after = GEN.decode_scene(RNG_W)
        assert np.array_equal(before.density_at(pts), after.density_at(pts))
        assert np.array_equal(before.albedo_at(pts), after.albedo_at(pts))
        # independent per-point evaluation of the mixture
        for p, d in zip(pts[:10], before.density_at(pts[:10])):
            ref = sum(
                dk * math.exp(-float(np.sum((p - c) ** 2)) / (2 * s * s))
                for dk, c, s in zip(before.densities, before.centers, before.scales)
            )
            assert d == pytest.approx(ref, rel=1e-12)


def _ambient_params(w):
    p = GEN.decode(w.tensor())
    p["light"] = torch.tensor([AMBIENT_UNIT] + [0.0] * 8, dtype=torch.float64)
    return p


def _empty_params():
    # floor densities and scales, parked in a corner outside the default frustum
    return {
        "centers": torch.tensor([[0.8, 0.0, 0.8]] * 8, dtype=torch.float64),
        "scales": torch.full((8,), 0.05, dtype=torch.float64),
        "densities": torch.full((8,), 0.1, dtype=torch.float64),
        "albedo": torch.full((8, 3), 0.5, dtype=torch.float64),
        "light": torch.tensor([AMBIENT_UNIT] + [0.0] * 8, dtype=torch.float64),
    }


class TestRender:
    def test_empty_scene(self):
        view = render_params(_empty_params(), CameraPose(image_size=16), RenderQuality())
        assert float(view.coverage.max()) < 1e-3
        assert float(view.rgb.max()) < 1e-3

    def test_ambient_light_gives_albedo(self, bb):
        view = render_params(_ambient_params(RNG_W), bb.default_pose, RenderQuality())
        torch.testing.assert_close(view.rgb, view.albedo, rtol=0, atol=1e-4)

    def test_matches_high_sample_oracle(self, bb):
        view = bb.render(RNG_W)
        ref = render_oracle(GEN.decode_scene(RNG_W), bb.default_pose, 128)
        assert psnr(view.rgb, ref.rgb) >= 40.0

    def test_oracle_self_convergence(self):
        params = GEN.decode_scene(RNG_W)
        pose = CameraPose()
        assert psnr(render_oracle(params, pose, 64).rgb, render_oracle(params, pose, 128).rgb) >= 45.0

    def test_oracle_agrees_with_render(self, bb):
        view = bb.render(RNG_W)
        ref = render_oracle(GEN.decode_scene(RNG_W), bb.default_pose, 32)
        for key in ("rgb", "albedo", "coverage", "normal"):
            torch.testing.assert_close(getattr(view, key).detach(), getattr(ref, key), rtol=0, atol=1e-5)

    def test_oracle_empty_scene_is_black(self):
        p = ToySceneParams(np.zeros((2, 3)), np.ones(2), np.zeros(2), np.ones((2, 3)), SHLighting.ambient())
        assert float(render_oracle(p, SMALL, 8).rgb.abs().max()) == 0.0

    def test_oracle_rejects_bad_range(self):
        with pytest.raises(ValueError):
            render_oracle(GEN.decode_scene(RNG_W), SMALL, 8, near=4.0, far=1.0)

    def test_normals_unit_where_covered(self, bb):
        view = bb.render(RNG_W)
        cov = view.coverage.detach() > 1e-3
        norms = torch.linalg.vector_norm(view.normal.detach(), dim=-1)
        assert torch.all(torch.abs(norms[cov] - 1) <= 1e-5)
        assert torch.all(norms[~cov] == 0)

    def test_bitwise_deterministic(self):
        a = GEN.render(RNG_W, SMALL)
        b = GEN.render(RNG_W, SMALL)
        for key in ("rgb", "normal", "albedo", "coverage"):
            assert getattr(a, key).detach().numpy().tobytes() == getattr(b, key).detach().numpy().tobytes()

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.0, 5.0))
    def test_buffers_in_range(self, seed, scale):
        w = LatentCode(scale * np.random.default_rng(seed).standard_normal(GEN.latent_shape))
        view = GEN.render(w, CameraPose(image_size=8), RenderQuality(samples_per_ray=8))
        for buf in (view.rgb, view.coverage, view.albedo):
            assert float(buf.min()) >= 0.0 and float(buf.max()) <= 1.0

    def test_mean_rgb_gradient_matches_finite_differences(self):
        pose = CameraPose(image_size=16)
        q = RenderQuality(samples_per_ray=16)
        w = RNG_W.tensor(requires_grad=True)
        (g,) = torch.autograd.grad(GEN.render(w, pose, q).rgb.mean(), w)
        h = 1e-3
        base = RNG_W.values
        fd = np.zeros_like(base)
        with torch.no_grad():
            for idx in np.ndindex(*base.shape):
                e = np.zeros_like(base)
                e[idx] = h
                up = float(GEN.render(torch.tensor(base + e), pose, q).rgb.mean())
                dn = float(GEN.render(torch.tensor(base - e), pose, q).rgb.mean())
                fd[idx] = (up - dn) / (2 * h)
        g = g.numpy()
        assert np.linalg.norm(fd - g) <= 1e-2 * np.linalg.norm(g)
        scale = np.abs(g).max()
        big = np.abs(g) > 1e-2 * scale
        np.testing.assert_allclose(fd[big], g[big], rtol=1e-2)
        np.testing.assert_allclose(fd[~big], g[~big], atol=1e-4 * scale)


class TestSidePose:
    def test_draws_inside_range(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            p = sample_side_pose(rng, CameraPose())
            assert SIDE_RANGE[0] <= p.theta <= SIDE_RANGE[1]
            assert SIDE_RANGE[0] <= p.phi <= SIDE_RANGE[1]

    def test_range_is_half_pi_plus_minus_twelfth(self):
        assert SIDE_RANGE == pytest.approx((math.pi / 2 - math.pi / 12, math.pi / 2 + math.pi / 12))

    def test_theta_mean(self):
        rng = np.random.default_rng(1)
        thetas = [sample_side_pose(rng, SMALL).theta for _ in range(100_000)]
        assert abs(np.mean(thetas) - math.pi / 2) <= 0.005

    def test_copies_base_fields_and_is_deterministic(self):
        base = CameraPose(radius=3.1, fov_y=0.5, image_size=24)
        a = sample_side_pose(np.random.default_rng(5), base)
        b = sample_side_pose(np.random.default_rng(5), base)
        assert a == b
        assert (a.radius, a.fov_y, a.image_size) == (3.1, 0.5, 24)


def test_psnr_identical_is_infinite():
    x = torch.rand(4, 4, 3, dtype=torch.float64)
    assert psnr(x, x) == math.inf
    assert psnr(x, x + 0.1) == pytest.approx(20.0)
