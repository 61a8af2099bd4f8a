import hashlib
import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from latentsculpt.io import export_rendered_view, read_image, sha256_file, to_uint8, write_image

from conftest import sample


def test_to_uint8_clips_and_rounds():
    out = to_uint8(np.array([[[-0.5, 0.5, 2.0]]]))
    assert out.tolist() == [[[0, 128, 255]]]
    assert out.dtype == np.uint8


def test_to_uint8_accepts_tensors_with_grad():
    t = torch.full((2, 2, 3), 0.25, dtype=torch.float64, requires_grad=True)
    assert np.all(to_uint8(t) == 64)


@settings(max_examples=25, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12), st.just(3))))
def test_png_round_trip_is_lossless_on_8_bit_values(tmp_path_factory, img):
    path = tmp_path_factory.mktemp("png") / "x.png"
    write_image(path, img / 255.0)
    back = read_image(path)
    assert np.array_equal(np.round(back * 255).astype(np.uint8), img)


def test_quantization_error_bound(tmp_path):
    img = np.random.default_rng(0).uniform(0, 1, (9, 7, 3))
    back = read_image(write_image(tmp_path / "q.png", img))
    assert back.shape == (9, 7, 3)
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12


def test_rewrite_is_byte_identical(tmp_path):
    img = np.random.default_rng(1).uniform(0, 1, (16, 16, 3))
    a = write_image(tmp_path / "a.png", img).read_bytes()
    b = write_image(tmp_path / "b.png", img).read_bytes()
    assert a == b


def test_write_creates_parent_dirs(tmp_path):
    assert write_image(tmp_path / "deep" / "er" / "x.png", np.zeros((2, 2, 3))).exists()


def test_sha256_matches_hashlib(tmp_path):
    p = tmp_path / "f.bin"
    p.write_bytes(b"abc" * 1000)
    assert sha256_file(p) == hashlib.sha256(b"abc" * 1000).hexdigest()


def test_export_rendered_view(tmp_path, bb16):
    with torch.no_grad():
        view = bb16.render(sample(bb16, 0))
    paths = export_rendered_view(view, tmp_path, "v")
    assert set(paths) == {"rgb", "normal", "albedo", "coverage", "sidecar"}
    side = json.loads(paths["sidecar"].read_text())
    assert side["pose"] == view.pose.to_dict()
    m = side["mapping"]["normal"]
    decoded = (read_image(paths["normal"]) - m["offset"]) / m["scale"]
    assert np.max(np.abs(decoded - view.normal.numpy())) <= 1.0 / 255 + 1e-12
    np.testing.assert_allclose(read_image(paths["rgb"]), view.rgb.numpy(), atol=0.5 / 255 + 1e-12)
    cov = read_image(paths["coverage"])
    assert np.array_equal(cov[..., 0], cov[..., 2])


def test_read_missing_file(tmp_path):
    with pytest.raises(OSError):
        read_image(tmp_path / "nope.png")
