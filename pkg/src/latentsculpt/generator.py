"""Frozen toy 3D generator: latent code -> Gaussian-blob radiance field -> volume-rendered view.

The generator is a seeded affine decode from a W+ code to blob parameters and
scene lighting, followed by differentiable front-to-back alpha compositing.
``render_oracle`` re-implements the same physics in plain numpy from decoded
parameters and is used only as an independent check.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F

from .illumination import SHLighting, _sh_basis, AMBIENT_UNIT
from .latent import LatentCode, Space, broadcast_to_wplus

SIDE_RANGE = (math.pi / 2 - math.pi / 12, math.pi / 2 + math.pi / 12)
NORMAL_COVERAGE_MIN = 1e-3


@dataclass(frozen=True)
class CameraPose:
    theta: float = math.pi / 2
    phi: float = math.pi / 2
    radius: float = 2.7
    fov_y: float = 0.4
    image_size: int = 64

    def __post_init__(self):
        if not 0.0 < self.theta < math.pi:
            raise ValueError(f"theta must lie in (0, pi), got {self.theta}")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if not 0.0 < self.fov_y < math.pi:
            raise ValueError("fov_y must lie in (0, pi)")
        if self.image_size < 1:
            raise ValueError("image_size must be positive")

    def position(self) -> np.ndarray:
        st = math.sin(self.theta)
        return self.radius * np.array(
            [st * math.cos(self.phi), st * math.sin(self.phi), math.cos(self.theta)]
        )

    def world_to_camera(self) -> np.ndarray:
        """Rows are the camera right, up and backward axes in world coordinates."""
        forward = -self.position() / self.radius
        right = np.cross(forward, [0.0, 0.0, 1.0])
        right /= np.linalg.norm(right)
        up = np.cross(right, forward)
        return np.stack([right, up, -forward])

    def ray_directions(self) -> np.ndarray:
        """(H, W, 3) unit ray directions through pixel centres, row 0 at the top."""
        n = self.image_size
        half = math.tan(self.fov_y / 2)
        coords = (np.arange(n) + 0.5) / n * 2.0 - 1.0
        xs = coords * half
        ys = -coords * half
        right, up, back = self.world_to_camera()
        d = -back[None, None, :] + xs[None, :, None] * right + ys[:, None, None] * up
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "phi": self.phi,
            "radius": self.radius,
            "fov_y": self.fov_y,
            "image_size": self.image_size,
        }


@dataclass(frozen=True)
class RenderQuality:
    samples_per_ray: int = 32
    near: float = 1.2
    far: float = 4.2

    def __post_init__(self):
        if self.near >= self.far:
            raise ValueError(f"near ({self.near}) must be < far ({self.far})")
        if self.samples_per_ray < 2:
            raise ValueError("samples_per_ray must be >= 2")


@dataclass(frozen=True)
class RenderedView:
    rgb: torch.Tensor
    normal: torch.Tensor
    albedo: torch.Tensor
    coverage: torch.Tensor
    pose: CameraPose

    def detach(self) -> "RenderedView":
        return RenderedView(
            self.rgb.detach(), self.normal.detach(), self.albedo.detach(),
            self.coverage.detach(), self.pose,
        )


@dataclass(frozen=True, eq=False)
class ToySceneParams:
    centers: np.ndarray
    scales: np.ndarray
    densities: np.ndarray
    albedo: np.ndarray
    light: SHLighting

    @property
    def n_blobs(self) -> int:
        return self.centers.shape[0]

    def density_at(self, points: np.ndarray) -> np.ndarray:
        d2 = ((points[:, None, :] - self.centers[None]) ** 2).sum(-1)
        return (self.densities * np.exp(-d2 / (2 * self.scales**2))).sum(-1)

    def albedo_at(self, points: np.ndarray) -> np.ndarray:
        d2 = ((points[:, None, :] - self.centers[None]) ** 2).sum(-1)
        wk = self.densities * np.exp(-d2 / (2 * self.scales**2))
        return (wk @ self.albedo) / (wk.sum(-1, keepdims=True) + 1e-12)


@dataclass(frozen=True)
class GeneratorConfig:
    latent_dim: int = 64
    n_layers: int = 4
    n_blobs: int = 8
    weights_seed: int = 0

    @property
    def flat_dim(self) -> int:
        return self.latent_dim * self.n_layers


# blob parameters per blob: center(3), scale(1), density(1), albedo(3)
_PER_BLOB = 8
_LIGHT_SLICE = 9


def _init_weights(cfg: GeneratorConfig) -> dict[str, torch.Tensor]:
    if cfg.latent_dim < _LIGHT_SLICE:
        raise ValueError(f"latent_dim must be >= {_LIGHT_SLICE}")
    rng = np.random.default_rng(cfg.weights_seed)
    k = cfg.n_blobs
    n_in = cfg.flat_dim - _LIGHT_SLICE
    # pre-activation spread per parameter group, for unit-variance latents
    spread = np.concatenate([np.full(3, 0.22), [0.3], [3.0], np.full(3, 1.0)])
    blob_w = rng.standard_normal((k, _PER_BLOB, n_in)) / math.sqrt(n_in)
    blob_w *= spread[None, :, None]
    bias = np.empty((k, _PER_BLOB))
    bias[:, 0:3] = rng.uniform(-0.25, 0.25, size=(k, 3))
    bias[:, 3] = rng.uniform(-2.6, -2.0, size=k)
    bias[:, 4] = rng.uniform(20.0, 35.0, size=k)
    bias[:, 5:8] = rng.normal(0.0, 0.8, size=(k, 3))
    light_w = rng.standard_normal((_LIGHT_SLICE, _LIGHT_SLICE)) * 0.12
    light_b = np.zeros(_LIGHT_SLICE)
    light_b[0] = 0.75 * AMBIENT_UNIT
    # key light from the default viewing side (+y), slightly above
    light_b[1] = 0.6
    light_b[2] = 0.3
    light_b[4:] = rng.normal(0.0, 0.05, size=5)
    as_t = lambda a: torch.tensor(a, dtype=torch.float64)  # noqa: E731
    return {
        "blob_w": as_t(blob_w.reshape(k * _PER_BLOB, n_in)),
        "blob_b": as_t(bias.reshape(-1)),
        "light_w": as_t(light_w),
        "light_b": as_t(light_b),
    }


class ToyGenerator:
    """Latent-conditioned Gaussian-blob scene with latent-controlled SH lighting.

    The last ``9`` entries of the last latent row drive the lighting only; the
    remaining entries drive the blob parameters only.
    """

    def __init__(self, config: GeneratorConfig = GeneratorConfig(), weights=None):
        self.config = config
        if weights is None:
            weights = _init_weights(config)
        self.weights = {k: v.detach().clone() for k, v in weights.items()}

    @property
    def latent_shape(self) -> tuple[int, int]:
        return (self.config.n_layers, self.config.latent_dim)

    @property
    def light_slice(self) -> tuple[int, slice]:
        d = self.config.latent_dim
        return (self.config.n_layers - 1, slice(d - _LIGHT_SLICE, d))

    def with_weights(self, weights: dict[str, torch.Tensor]) -> "ToyGenerator":
        return ToyGenerator(self.config, weights)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for key in sorted(self.weights):
            h.update(key.encode())
            h.update(self.weights[key].detach().numpy().tobytes())
        return h.hexdigest()

    def sample_latent(self, rng: np.random.Generator) -> LatentCode:
        """Stand-in for the mapping network: a standard-normal W row broadcast to W+."""
        row = rng.standard_normal((1, self.config.latent_dim))
        return broadcast_to_wplus(LatentCode(row, Space.W), self.config.n_layers)

    def _check(self, w: torch.Tensor):
        if tuple(w.shape) != self.latent_shape:
            raise ValueError(f"latent shape {tuple(w.shape)} != generator shape {self.latent_shape}")

    def decode(self, w: torch.Tensor, weights: dict[str, torch.Tensor] | None = None) -> dict:
        """Differentiable decode; ``weights`` overrides the frozen ones (pivotal tuning)."""
        self._check(w)
        wts = self.weights if weights is None else weights
        flat = w.reshape(-1)
        n_in = self.config.flat_dim - _LIGHT_SLICE
        pre = (wts["blob_w"] @ flat[:n_in] + wts["blob_b"]).reshape(self.config.n_blobs, _PER_BLOB)
        light = wts["light_w"] @ flat[n_in:] + wts["light_b"]
        return {
            "centers": 0.8 * torch.tanh(pre[:, 0:3]),
            "scales": F.softplus(pre[:, 3]) + 0.05,
            "densities": F.softplus(pre[:, 4]) + 0.1,
            "albedo": torch.sigmoid(pre[:, 5:8]),
            "light": light,
        }

    def decode_scene(self, w: LatentCode) -> ToySceneParams:
        with torch.no_grad():
            p = self.decode(w.tensor())
        return ToySceneParams(
            centers=p["centers"].numpy(),
            scales=p["scales"].numpy(),
            densities=p["densities"].numpy(),
            albedo=p["albedo"].numpy(),
            light=SHLighting(p["light"].numpy()),
        )

    def render(
        self,
        w,
        pose: CameraPose,
        quality: RenderQuality = RenderQuality(),
        weights: dict[str, torch.Tensor] | None = None,
    ) -> RenderedView:
        wt = w.tensor() if isinstance(w, LatentCode) else w
        return render_params(self.decode(wt, weights), pose, quality)


def render_params(params: dict, pose: CameraPose, quality: RenderQuality) -> RenderedView:
    """Alpha-composite the blob field along every pixel ray."""
    n = pose.image_size
    s = quality.samples_per_ray
    delta = (quality.far - quality.near) / s
    dirs = torch.as_tensor(pose.ray_directions().reshape(-1, 3))
    origin = torch.as_tensor(pose.position())
    ts = quality.near + (torch.arange(s, dtype=torch.float64) + 0.5) * delta
    pts = origin + ts[None, :, None] * dirs[:, None, :]  # (R, S, 3)

    centers, scales, dens = params["centers"], params["scales"], params["densities"]
    diff = pts[:, :, None, :] - centers  # (R, S, K, 3)
    inv_var = 1.0 / (scales * scales)
    g = dens * torch.exp(-0.5 * (diff * diff).sum(-1) * inv_var)  # (R, S, K)
    sigma = g.sum(-1)
    out = ((g * inv_var)[..., None] * diff).sum(-2)  # -grad sigma
    normals = out / torch.sqrt((out * out).sum(-1, keepdim=True) + 1e-24)
    albedo = (g @ params["albedo"]) / (sigma[..., None] + 1e-12)
    irr = (_sh_basis(normals) * params["light"]).sum(-1).clamp(min=0.0)
    color = albedo * irr[..., None]

    tau = sigma * delta
    alpha = 1.0 - torch.exp(-tau)
    trans = torch.exp(-(torch.cumsum(tau, dim=-1) - tau))
    wgt = trans * alpha  # (R, S)

    # equals wgt.sum(-1) by telescoping, but cannot round past 1
    coverage = -torch.expm1(-tau.sum(-1))
    rgb = (wgt[..., None] * color).sum(-2).clamp(0.0, 1.0)
    alb = (wgt[..., None] * albedo).sum(-2).clamp(0.0, 1.0)
    raw_n = (wgt[..., None] * normals).sum(-2)
    norm = torch.sqrt((raw_n * raw_n).sum(-1, keepdim=True) + 1e-30)
    covered = (coverage > NORMAL_COVERAGE_MIN)[..., None]
    normal = torch.where(covered, raw_n / norm, torch.zeros_like(raw_n))
    return RenderedView(
        rgb=rgb.reshape(n, n, 3),
        normal=normal.reshape(n, n, 3),
        albedo=alb.reshape(n, n, 3),
        coverage=coverage.reshape(n, n),
        pose=pose,
    )


def _np_sh(n: np.ndarray) -> np.ndarray:
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    return np.stack(
        [
            np.full_like(x, 0.28209479177387814),
            0.4886025119029199 * y,
            0.4886025119029199 * z,
            0.4886025119029199 * x,
            1.0925484305920792 * x * y,
            1.0925484305920792 * y * z,
            0.31539156525252005 * (3 * z * z - 1),
            1.0925484305920792 * x * z,
            0.5462742152960396 * (x * x - y * y),
        ],
        axis=-1,
    )


def render_oracle(
    params: ToySceneParams,
    pose: CameraPose,
    samples_per_ray: int,
    near: float = 1.2,
    far: float = 4.2,
) -> RenderedView:
    """Independent numpy renderer marching sample by sample with a running transmittance."""
    RenderQuality(samples_per_ray, near, far)
    size = pose.image_size
    dirs = pose.ray_directions().reshape(-1, 3)
    origin = pose.position()
    step = (far - near) / samples_per_ray
    T = np.ones(dirs.shape[0])
    rgb = np.zeros_like(dirs)
    alb = np.zeros_like(dirs)
    nrm = np.zeros_like(dirs)
    for i in range(samples_per_ray):
        p = origin + (near + (i + 0.5) * step) * dirs
        rel = p[:, None, :] - params.centers[None]
        var = params.scales**2
        gk = params.densities * np.exp(-(rel**2).sum(-1) / (2 * var))
        sigma = gk.sum(-1)
        grad = -(gk[..., None] * rel / var[None, :, None]).sum(1)
        gnorm = np.linalg.norm(grad, axis=-1, keepdims=True)
        n = -grad / np.maximum(gnorm, 1e-300)
        a = (gk @ params.albedo) / (sigma[:, None] + 1e-12)
        shading = np.maximum(_np_sh(n) @ params.light.coeffs, 0.0)
        alpha = 1.0 - np.exp(-sigma * step)
        wgt = T * alpha
        rgb += wgt[:, None] * a * shading[:, None]
        alb += wgt[:, None] * a
        nrm += wgt[:, None] * n
        T = T * (1.0 - alpha)
    coverage = 1.0 - T
    length = np.linalg.norm(nrm, axis=-1, keepdims=True)
    normal = np.where(coverage[:, None] > NORMAL_COVERAGE_MIN, nrm / np.maximum(length, 1e-300), 0.0)
    as_t = lambda a, *shape: torch.as_tensor(a.reshape(*shape))  # noqa: E731
    return RenderedView(
        rgb=as_t(np.clip(rgb, 0.0, 1.0), size, size, 3),
        normal=as_t(normal, size, size, 3),
        albedo=as_t(alb, size, size, 3),
        coverage=as_t(coverage, size, size),
        pose=pose,
    )


def sample_side_pose(
    rng: np.random.Generator,
    base: CameraPose,
    theta_range: tuple[float, float] = SIDE_RANGE,
    phi_range: tuple[float, float] = SIDE_RANGE,
) -> CameraPose:
    theta = rng.uniform(*theta_range)
    phi = rng.uniform(*phi_range)
    return replace(base, theta=float(theta), phi=float(phi))


def decode_scene(w: LatentCode, weights_seed: int, config: GeneratorConfig | None = None) -> ToySceneParams:
    cfg = replace(config or GeneratorConfig(), weights_seed=weights_seed)
    return ToyGenerator(cfg).decode_scene(w)


def psnr(a, b, peak: float = 1.0) -> float:
    a = torch.as_tensor(a, dtype=torch.float64)
    b = torch.as_tensor(b, dtype=torch.float64)
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)
