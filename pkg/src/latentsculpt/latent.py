"""Latent codes in W / W+ form, sample statistics, and the mean-pull regularizer."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch


class Space(str, enum.Enum):
    W = "W"
    W_PLUS = "W_PLUS"


@dataclass(frozen=True, eq=False)
class LatentCode:
    """Immutable latent code, stored as an (L, D) float64 array.

    W codes have a single row; W+ codes have one row per modulated layer.
    """

    values: np.ndarray
    space: Space = Space.W_PLUS

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"latent values must be a non-empty 2-D array, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("latent values must be finite")
        space = Space(self.space)
        if space is Space.W and v.shape[0] != 1:
            raise ValueError(f"W codes have exactly one row, got {v.shape[0]}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "space", space)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def tensor(self, requires_grad: bool = False) -> torch.Tensor:
        return torch.tensor(self.values, dtype=torch.float64, requires_grad=requires_grad)

    @classmethod
    def from_tensor(cls, t: torch.Tensor, space: Space = Space.W_PLUS) -> "LatentCode":
        return cls(t.detach().cpu().numpy(), space)

    def __eq__(self, other):
        if not isinstance(other, LatentCode):
            return NotImplemented
        return self.space == other.space and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.space, self.values.shape, self.values.tobytes()))

    def to_json(self) -> str:
        return json.dumps(
            {
                "shape": list(self.values.shape),
                "space": self.space.value,
                "values": [float(x) for x in self.values.ravel()],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "LatentCode":
        doc = json.loads(text)
        shape = tuple(int(s) for s in doc["shape"])
        values = np.asarray(doc["values"], dtype=np.float64)
        if values.size != int(np.prod(shape)):
            raise ValueError(f"latent file has {values.size} values for shape {shape}")
        return cls(values.reshape(shape), Space(doc["space"]))


@dataclass(frozen=True, eq=False)
class LatentStats:
    mean: LatentCode
    per_dim_std: np.ndarray
    sample_count: int

    def __post_init__(self):
        std = np.array(self.per_dim_std, dtype=np.float64, copy=True)
        if std.shape != self.mean.shape:
            raise ValueError("per_dim_std must match the mean's shape")
        if not np.all(np.isfinite(std)) or np.any(std < 0):
            raise ValueError("per_dim_std must be finite and nonnegative")
        if self.sample_count < 1:
            raise ValueError("sample_count must be positive")
        std.setflags(write=False)
        object.__setattr__(self, "per_dim_std", std)

    def __eq__(self, other):
        if not isinstance(other, LatentStats):
            return NotImplemented
        return (
            self.mean == other.mean
            and np.array_equal(self.per_dim_std, other.per_dim_std)
            and self.sample_count == other.sample_count
        )

    def to_dict(self) -> dict:
        return {
            "mean": json.loads(self.mean.to_json()),
            "per_dim_std": [float(x) for x in self.per_dim_std.ravel()],
            "sample_count": self.sample_count,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LatentStats":
        mean = LatentCode.from_json(json.dumps(doc["mean"]))
        std = np.asarray(doc["per_dim_std"], dtype=np.float64).reshape(mean.shape)
        return cls(mean, std, int(doc["sample_count"]))


def broadcast_to_wplus(w: LatentCode, n_layers: int) -> LatentCode:
    if w.space is not Space.W:
        raise ValueError("broadcast_to_wplus expects a W code")
    if n_layers < 1:
        raise ValueError(f"n_layers must be >= 1, got {n_layers}")
    return LatentCode(np.repeat(w.values, n_layers, axis=0), Space.W_PLUS)


def stats_from_draws(draws: np.ndarray) -> LatentStats:
    """Elementwise mean and sample std (ddof=1) over the leading axis."""
    draws = np.asarray(draws, dtype=np.float64)
    if draws.shape[0] < 2:
        raise ValueError("need at least 2 draws")
    mean = draws.mean(axis=0)
    std = draws.std(axis=0, ddof=1)
    return LatentStats(LatentCode(mean, Space.W_PLUS), std, draws.shape[0])


def estimate_latent_stats(
    sampler: Callable[[np.random.Generator], LatentCode], n: int, rng_seed: int
) -> LatentStats:
    if n < 2:
        raise ValueError(f"estimate_latent_stats needs n >= 2, got {n}")
    rng = np.random.default_rng(rng_seed)
    draws = np.stack([sampler(rng).values for _ in range(n)])
    return stats_from_draws(draws)


def regularization_loss(w, stats: LatentStats, lambda_regu: float) -> torch.Tensor:
    """lambda_regu * ||w - mean||^2 over all entries.

    ``w`` may be a LatentCode or a tensor (possibly requiring grad).
    """
    if lambda_regu < 0:
        raise ValueError("lambda_regu must be nonnegative")
    wt = w.tensor() if isinstance(w, LatentCode) else w
    if tuple(wt.shape) != stats.mean.shape:
        raise ValueError(f"shape mismatch: w {tuple(wt.shape)} vs mean {stats.mean.shape}")
    diff = wt - torch.tensor(stats.mean.values, dtype=wt.dtype)
    return lambda_regu * (diff * diff).sum()


def initial_latent(stats: LatentStats, perturbation: float = 0.0, seed: int = 0) -> LatentCode:
    """Mean code, optionally jittered by perturbation * per_dim_std Gaussian noise."""
    if perturbation == 0.0:
        return stats.mean
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(stats.mean.shape)
    return LatentCode(stats.mean.values + perturbation * stats.per_dim_std * noise, Space.W_PLUS)


def truncate(w: LatentCode, stats: LatentStats, n_std: float) -> LatentCode:
    """Clamp each entry to mean +/- n_std * per_dim_std."""
    lo = stats.mean.values - n_std * stats.per_dim_std
    hi = stats.mean.values + n_std * stats.per_dim_std
    return LatentCode(np.clip(w.values, lo, hi), w.space)
