"""Score distillation with an analytic prompt-conditioned denoiser.

The denoiser is the posterior-mean noise predictor for a Gaussian image-latent
distribution N(target_mu, spread^2 I) registered per prompt, so its score pulls
encoded renders toward the prompt's exemplar.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

LATENT_DIM = 16
POOL_SIZE = 16


class UnknownPromptError(KeyError):
    def __str__(self):
        return f"unknown prompt: {self.args[0]!r}"


def alpha_bar(t) -> float | torch.Tensor:
    """Cosine schedule cos^2(pi t / 2) on (0, 1]."""
    if isinstance(t, torch.Tensor):
        if torch.any((t <= 0) | (t > 1)):
            raise ValueError("t must lie in (0, 1]")
        return torch.cos(0.5 * math.pi * t) ** 2
    t = float(t)
    if not 0.0 < t <= 1.0:
        raise ValueError(f"t must lie in (0, 1], got {t}")
    return math.cos(0.5 * math.pi * t) ** 2


@dataclass(frozen=True)
class DiffusionSchedule:
    t_min: float = 0.02
    t_max: float = 0.98
    weighting: str = "one_minus_alpha_bar"

    def __post_init__(self):
        if not 0.0 < self.t_min < self.t_max < 1.0:
            raise ValueError("need 0 < t_min < t_max < 1")
        if self.weighting not in ("one_minus_alpha_bar", "unit"):
            raise ValueError(f"unknown sds weighting {self.weighting!r}")

    def alpha_bar(self, t):
        return alpha_bar(t)

    def sds_weight(self, t: float) -> float:
        if self.weighting == "unit":
            return 1.0
        return 1.0 - alpha_bar(t)

    def sample_timestep(self, rng: np.random.Generator) -> float:
        return sample_timestep(rng, self.t_min, self.t_max)


def sample_timestep(rng: np.random.Generator, t_min: float = 0.02, t_max: float = 0.98) -> float:
    return float(rng.uniform(t_min, t_max))


def noise_latent(z, t: float, eps):
    z = torch.as_tensor(z, dtype=torch.float64)
    eps = torch.as_tensor(eps, dtype=torch.float64)
    if z.shape != eps.shape:
        raise ValueError(f"noise shape {tuple(eps.shape)} != latent shape {tuple(z.shape)}")
    a = alpha_bar(t)
    return math.sqrt(a) * z + math.sqrt(1.0 - a) * eps


class ImageEncoder:
    """Average-pool to 16x16, flatten, frozen linear map to LATENT_DIM (no bias)."""

    def __init__(self, image_size: int = 64, dim: int = LATENT_DIM, seed: int = 0, gain: float = 8.0):
        if image_size % POOL_SIZE:
            raise ValueError(f"image_size must be a multiple of {POOL_SIZE}")
        self.image_size = image_size
        self.dim = dim
        self.seed = seed
        self.gain = gain
        n_in = POOL_SIZE * POOL_SIZE * 3
        rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
        self.matrix = torch.tensor(rng.standard_normal((dim, n_in)) * gain / math.sqrt(n_in))

    def pool(self, x: torch.Tensor) -> torch.Tensor:
        k = self.image_size // POOL_SIZE
        return F.avg_pool2d(x.permute(2, 0, 1)[None], k)[0].reshape(-1)

    def __call__(self, x) -> torch.Tensor:
        x = torch.as_tensor(x, dtype=torch.float64)
        if tuple(x.shape) != (self.image_size, self.image_size, 3):
            raise ValueError(f"expected a {self.image_size}x{self.image_size}x3 image, got {tuple(x.shape)}")
        return self.matrix @ self.pool(x)


def encode_image(x, encoder: ImageEncoder | None = None) -> torch.Tensor:
    if encoder is None:
        encoder = ImageEncoder(int(torch.as_tensor(x).shape[0]))
    return encoder(x)


@dataclass
class PromptEntry:
    target_mu: np.ndarray
    spread: float
    source: str = ""

    def __post_init__(self):
        self.target_mu = np.asarray(self.target_mu, dtype=np.float64)
        if not np.all(np.isfinite(self.target_mu)):
            raise ValueError("target_mu must be finite")
        if not self.spread > 0:
            raise ValueError("spread must be positive")


@dataclass
class PromptBank:
    entries: dict[str, PromptEntry] = field(default_factory=dict)

    def __contains__(self, prompt: str) -> bool:
        return prompt in self.entries

    def get(self, prompt: str) -> PromptEntry:
        try:
            return self.entries[prompt]
        except KeyError:
            raise UnknownPromptError(prompt) from None

    def register(self, prompt: str, exemplar, encoder: ImageEncoder, spread: float = 0.5, source: str = ""):
        with torch.no_grad():
            mu = encoder(exemplar).numpy()
        self.entries[prompt] = PromptEntry(mu, spread, source)
        return self.entries[prompt]

    def to_dict(self) -> dict:
        return {
            p: {"target_mu": [float(v) for v in e.target_mu], "spread": e.spread, "source": e.source}
            for p, e in self.entries.items()
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PromptBank":
        return cls({p: PromptEntry(e["target_mu"], e["spread"], e.get("source", "")) for p, e in doc.items()})

    @classmethod
    def load(cls, path, encoder: ImageEncoder) -> "PromptBank":
        """Read ``{prompt: {"image": path, "spread": s}}``; image paths are relative to the file."""
        from .io import read_image

        path = Path(path)
        doc = json.loads(path.read_text())
        bank = cls()
        for prompt, item in doc.items():
            unknown = set(item) - {"image", "spread"}
            if unknown:
                raise ValueError(f"prompt {prompt!r}: unknown keys {sorted(unknown)}")
            img_path = (path.parent / item["image"]).resolve()
            bank.register(prompt, read_image(img_path), encoder, float(item.get("spread", 0.5)), str(img_path))
        return bank


def denoise(z_t, y: str, t: float, bank: PromptBank) -> torch.Tensor:
    """MMSE noise prediction for z ~ N(target_mu, s^2 I); batches along leading axes."""
    entry = bank.get(y)
    z_t = torch.as_tensor(z_t, dtype=torch.float64)
    mu = torch.as_tensor(entry.target_mu)
    if mu.shape != z_t.shape[-1:]:
        raise ValueError(f"latent dim {tuple(z_t.shape)} != prompt target dim {tuple(mu.shape)}")
    a = alpha_bar(t)
    s2 = entry.spread**2
    return math.sqrt(1.0 - a) * (z_t - math.sqrt(a) * mu) / (a * s2 + 1.0 - a)


Denoiser = Callable[[torch.Tensor, float], torch.Tensor]


@dataclass
class SDSSample:
    t: float
    eps: np.ndarray
    residual: np.ndarray
    weight: float


def sds_residual(z: torch.Tensor, t: float, eps, denoiser: Denoiser) -> torch.Tensor:
    z_t = noise_latent(z.detach(), t, eps)
    with torch.no_grad():
        return denoiser(z_t, t) - torch.as_tensor(eps, dtype=torch.float64)


def sds_surrogate(z: torch.Tensor, residual: torch.Tensor, weight: float) -> torch.Tensor:
    """Scalar whose gradient w.r.t. anything upstream of ``z`` is weight * J^T residual."""
    return weight * torch.dot(residual.detach(), z)


def draw_noise(rng: np.random.Generator, schedule: DiffusionSchedule, dim: int) -> tuple[float, np.ndarray]:
    t = schedule.sample_timestep(rng)
    eps = rng.standard_normal(dim)
    return t, eps


def sds_loss(
    w: torch.Tensor,
    render_fn: Callable[[torch.Tensor], torch.Tensor],
    encoder: ImageEncoder,
    schedule: DiffusionSchedule,
    rng: np.random.Generator | None = None,
    *,
    prompt: str | None = None,
    bank: PromptBank | None = None,
    denoiser: Denoiser | None = None,
    t: float | None = None,
    eps=None,
) -> tuple[float, torch.Tensor, SDSSample]:
    """Single-sample SDS estimate.

    ``render_fn`` maps the latent tensor to an image (the side-view render).
    Returns (||residual||^2, grad_w, sample). The gradient chains through the
    image encoder and renderer but never through the denoiser.
    """
    if denoiser is None:
        if bank is None or prompt is None:
            raise ValueError("need either a denoiser or a prompt bank and prompt")
        bank.get(prompt)
        denoiser = lambda z_t, tt: denoise(z_t, prompt, tt, bank)  # noqa: E731
    if t is None or eps is None:
        if rng is None:
            raise ValueError("rng required when t/eps are not injected")
        t_draw, eps_draw = draw_noise(rng, schedule, encoder.dim)
        t = t_draw if t is None else t
        eps = eps_draw if eps is None else eps
    leaf = w if w.requires_grad else w.detach().requires_grad_(True)
    z = encoder(render_fn(leaf))
    r = sds_residual(z, t, eps, denoiser)
    weight = schedule.sds_weight(t)
    (grad,) = torch.autograd.grad(sds_surrogate(z, r, weight), leaf)
    sample = SDSSample(float(t), np.asarray(eps, dtype=np.float64), r.numpy(), weight)
    return float((r * r).sum()), grad, sample
