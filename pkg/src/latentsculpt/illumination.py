"""Order-2 real spherical harmonics, Lambertian shading and differentiable light estimation.

Coefficient order is (l, m) = (0,0), (1,-1), (1,0), (1,1), (2,-2), (2,-1), (2,0), (2,1), (2,2).
Lighting coefficients multiply the basis directly: radiance = albedo * max(0, Y(n) . L).
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import torch

if TYPE_CHECKING:
    from .generator import RenderedView

C0 = 0.5 / math.sqrt(math.pi)
C1 = math.sqrt(3.0 / (4.0 * math.pi))
C2 = 0.5 * math.sqrt(15.0 / math.pi)
C20 = 0.25 * math.sqrt(5.0 / math.pi)
C22 = 0.25 * math.sqrt(15.0 / math.pi)

# constant light that shades every normal to exactly albedo
AMBIENT_UNIT = 2.0 * math.sqrt(math.pi)

LUMA = (0.299, 0.587, 0.114)
BANDS = (slice(0, 1), slice(1, 4), slice(4, 9))


class Frame(str, enum.Enum):
    WORLD = "WORLD"
    CAMERA = "CAMERA"


class FrameMismatchError(ValueError):
    pass


class InsufficientCoverageError(ValueError):
    pass


class RankDeficiencyError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SHLighting:
    coeffs: np.ndarray
    frame: Frame = Frame.WORLD

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64, copy=True).reshape(-1)
        if c.shape != (9,):
            raise ValueError(f"SH lighting needs 9 coefficients, got {c.size}")
        if not np.all(np.isfinite(c)):
            raise ValueError("SH coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "frame", Frame(self.frame))

    def __eq__(self, other):
        if not isinstance(other, SHLighting):
            return NotImplemented
        return self.frame == other.frame and np.array_equal(self.coeffs, other.coeffs)

    def tensor(self) -> torch.Tensor:
        return torch.tensor(self.coeffs, dtype=torch.float64)

    @classmethod
    def ambient(cls, level: float = 1.0, frame: Frame = Frame.WORLD) -> "SHLighting":
        c = np.zeros(9)
        c[0] = AMBIENT_UNIT * level
        return cls(c, frame)

    def to_json(self) -> str:
        return json.dumps({"frame": self.frame.value, "coeffs": [float(x) for x in self.coeffs]})

    @classmethod
    def from_json(cls, text: str) -> "SHLighting":
        doc = json.loads(text)
        unknown = set(doc) - {"frame", "coeffs"}
        if unknown:
            raise ValueError(f"unknown keys in SH lighting file: {sorted(unknown)}")
        return cls(np.asarray(doc["coeffs"], dtype=np.float64), Frame(doc.get("frame", "WORLD")))


def _sh_basis(n: torch.Tensor) -> torch.Tensor:
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    return torch.stack(
        [
            torch.full_like(x, C0),
            C1 * y,
            C1 * z,
            C1 * x,
            C2 * x * y,
            C2 * y * z,
            C20 * (3.0 * z * z - 1.0),
            C2 * x * z,
            C22 * (x * x - y * y),
        ],
        dim=-1,
    )


def _check_unit(n: torch.Tensor, tol: float = 1e-5) -> None:
    norms = torch.linalg.vector_norm(n.detach(), dim=-1)
    if not torch.all(torch.abs(norms - 1.0) <= tol):
        raise ValueError("normals must have unit length")


def sh_basis(n) -> torch.Tensor:
    """Real SH basis up to l=2 for unit vectors of shape (..., 3)."""
    n = torch.as_tensor(n, dtype=torch.float64)
    _check_unit(n)
    return _sh_basis(n)


def shade(albedo: torch.Tensor, n: torch.Tensor, coeffs: torch.Tensor) -> torch.Tensor:
    """Unchecked clamped-Lambertian shading; normals assumed unit."""
    irradiance = (_sh_basis(n) * coeffs).sum(-1).clamp(min=0.0)
    return albedo * irradiance[..., None]


def lambertian_shade(albedo, n, light: SHLighting) -> torch.Tensor:
    albedo = torch.as_tensor(albedo, dtype=torch.float64)
    n = torch.as_tensor(n, dtype=torch.float64)
    _check_unit(n)
    return shade(albedo, n, light.tensor()).clamp(0.0, 1.0)


def luminance(rgb: torch.Tensor) -> torch.Tensor:
    return rgb[..., 0] * LUMA[0] + rgb[..., 1] * LUMA[1] + rgb[..., 2] * LUMA[2]


def estimate_lighting(
    view: "RenderedView",
    ridge: float = 1e-6,
    frame: Frame = Frame.WORLD,
    albedo_normalize: bool = True,
) -> SHLighting:
    return SHLighting(
        estimate_lighting_tensor(view, ridge, frame, albedo_normalize).detach().numpy(), frame
    )


def estimate_lighting_tensor(
    view: "RenderedView",
    ridge: float = 1e-6,
    frame: Frame = Frame.WORLD,
    albedo_normalize: bool = True,
) -> torch.Tensor:
    """Ridge least-squares fit of per-pixel shading to Y(n) . L over well-covered pixels.

    The shading signal is luminance(rgb), divided by luminance(albedo) when
    ``albedo_normalize`` is set; the division also cancels partial coverage
    at silhouettes. Differentiable in the rgb, albedo and normal buffers.
    """
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    mask = view.coverage.detach() > 0.5
    count = int(mask.sum())
    if count < 9:
        raise InsufficientCoverageError(f"only {count} pixels have coverage > 0.5; need >= 9")
    y = luminance(view.rgb)[mask]
    if albedo_normalize:
        y = y / luminance(view.albedo)[mask].clamp(min=1e-6)
    normals = view.normal[mask]
    if Frame(frame) is Frame.CAMERA:
        rot = torch.as_tensor(view.pose.world_to_camera(), dtype=normals.dtype)
        normals = normals @ rot.T
    basis = _sh_basis(normals)
    gram = basis.T @ basis
    if ridge == 0.0:
        if torch.linalg.matrix_rank(gram.detach()) < 9:
            raise RankDeficiencyError("normal matrix is singular; use ridge > 0")
    else:
        gram = gram + ridge * torch.eye(9, dtype=gram.dtype)
    return torch.linalg.solve(gram, basis.T @ y)


def illumination_loss(
    view: "RenderedView",
    target: SHLighting,
    ridge: float = 1e-6,
    frame: Frame = Frame.WORLD,
    albedo_normalize: bool = True,
) -> torch.Tensor:
    """L1 distance between the estimated and target SH coefficients."""
    if Frame(target.frame) is not Frame(frame):
        raise FrameMismatchError(f"target frame {target.frame.value} != estimator frame {Frame(frame).value}")
    est = estimate_lighting_tensor(view, ridge, frame, albedo_normalize)
    return (est - target.tensor()).abs().sum()


def fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def is_rotation(R: np.ndarray, tol: float = 1e-6) -> bool:
    R = np.asarray(R, dtype=np.float64)
    return (
        R.shape == (3, 3)
        and np.allclose(R @ R.T, np.eye(3), atol=tol)
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


_ROTATION_DIRS = fibonacci_sphere(256)


def sh_rotate(light: SHLighting, R) -> SHLighting:
    """Coefficients of f(d) = Y(R^-1 d) . L, fitted on 256 spread directions.

    Exact up to round-off since rotations keep each band closed.
    """
    R = np.asarray(R, dtype=np.float64)
    if not is_rotation(R):
        raise ValueError("sh_rotate needs a proper rotation matrix")
    dirs = torch.as_tensor(_ROTATION_DIRS)
    basis = _sh_basis(dirs).numpy()
    # rows of dirs @ R equal R^T d = R^-1 d
    rotated = _sh_basis(torch.as_tensor(_ROTATION_DIRS @ R)).numpy()
    values = rotated @ light.coeffs
    coeffs, *_ = np.linalg.lstsq(basis, values, rcond=None)
    return SHLighting(coeffs, light.frame)
