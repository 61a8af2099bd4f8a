"""Frozen random-feature encoders and the reconstruction / identity losses."""

from __future__ import annotations

import functools

import numpy as np
import torch
import torch.nn.functional as F

FEATURE_DIM = 128
IDENTITY_DIM = 64

# independent seed streams for the two encoders
_FEATURE_STREAM = 0
_IDENTITY_STREAM = 1


class DegenerateEmbeddingError(ValueError):
    pass


class ConvEncoder:
    """Three stride-2 bias-free convolutions with tanh, then a linear head.

    Weights are drawn once from ``seed`` and never updated.
    """

    channels = (3, 8, 16, 32)

    def __init__(self, image_size: int, out_dim: int, seed: int, stream: int):
        if image_size % 8:
            raise ValueError("image_size must be divisible by 8")
        self.image_size = image_size
        self.out_dim = out_dim
        rng = np.random.default_rng(np.random.SeedSequence([seed, stream]))
        self.kernels = []
        for cin, cout in zip(self.channels[:-1], self.channels[1:]):
            k = rng.standard_normal((cout, cin, 4, 4)) * np.sqrt(2.0 / (cin * 16))
            self.kernels.append(torch.tensor(k))
        n_flat = self.channels[-1] * (image_size // 8) ** 2
        self.head = torch.tensor(rng.standard_normal((out_dim, n_flat)) * 0.25 / np.sqrt(n_flat))

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        x = torch.as_tensor(x, dtype=torch.float64)
        if tuple(x.shape) != (self.image_size, self.image_size, 3):
            raise ValueError(
                f"expected a {self.image_size}x{self.image_size}x3 image, got {tuple(x.shape)}"
            )
        h = (2.0 * x - 1.0).permute(2, 0, 1)[None]
        for k in self.kernels:
            h = torch.tanh(F.conv2d(h, k, stride=2, padding=1))
        return self.head @ h.reshape(-1)


@functools.lru_cache(maxsize=None)
def feature_encoder(image_size: int, weights_seed: int = 0, dim: int = FEATURE_DIM) -> ConvEncoder:
    return ConvEncoder(image_size, dim, weights_seed, _FEATURE_STREAM)


@functools.lru_cache(maxsize=None)
def identity_encoder(image_size: int, weights_seed: int = 0, dim: int = IDENTITY_DIM) -> ConvEncoder:
    return ConvEncoder(image_size, dim, weights_seed, _IDENTITY_STREAM)


def _size(x) -> int:
    return int(torch.as_tensor(x).shape[0])


def _same_shape(a, b):
    if tuple(torch.as_tensor(a).shape) != tuple(torch.as_tensor(b).shape):
        raise ValueError("images must have the same shape")


def feature_encode(x, weights_seed: int = 0, dim: int = FEATURE_DIM) -> torch.Tensor:
    return feature_encoder(_size(x), weights_seed, dim)(x)


def reconstruction_loss(x_render, x_input, weights_seed: int = 0, dim: int = FEATURE_DIM) -> torch.Tensor:
    """Squared L2 distance between frozen features of the two images."""
    _same_shape(x_render, x_input)
    d = feature_encode(x_render, weights_seed, dim) - feature_encode(x_input, weights_seed, dim)
    return (d * d).sum()


def identity_embed(x, weights_seed: int = 0, dim: int = IDENTITY_DIM) -> torch.Tensor:
    v = identity_encoder(_size(x), weights_seed, dim)(x)
    norm = torch.linalg.vector_norm(v)
    if float(norm.detach()) < 1e-12:
        raise DegenerateEmbeddingError("identity feature vector is zero; cannot normalize")
    return v / norm


def identity_loss(x_render, x_input, weights_seed: int = 0, dim: int = IDENTITY_DIM) -> torch.Tensor:
    """1 - cosine similarity of the identity embeddings, clipped to [0, 2] against round-off."""
    _same_shape(x_render, x_input)
    cos = torch.dot(identity_embed(x_input, weights_seed, dim), identity_embed(x_render, weights_seed, dim))
    return (1.0 - cos).clamp(0.0, 2.0)
