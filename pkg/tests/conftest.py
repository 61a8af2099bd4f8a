import numpy as np
import pytest
import torch

from latentsculpt.pipeline import Backbone, BackboneConfig


@pytest.fixture(scope="session")
def bb():
    """Default-sized backbone (64 px, 32 samples per ray)."""
    return Backbone()


@pytest.fixture(scope="session")
def bb32():
    return Backbone(BackboneConfig(image_size=32))


@pytest.fixture(scope="session")
def bb16():
    return Backbone(BackboneConfig(image_size=16, samples_per_ray=8))


def sample(bb, seed):
    return bb.generator.sample_latent(np.random.default_rng(seed))


def render_rgb(bb, w, pose=None):
    with torch.no_grad():
        return bb.render(w, pose).rgb.numpy()


def with_prompt(bb, name="smile", seed=7, spread=0.5):
    """Register a prompt whose exemplar is the render of a seeded generator sample."""
    if name not in bb.bank:
        bb.register_prompt(name, render_rgb(bb, sample(bb, seed)), spread)
    return name
