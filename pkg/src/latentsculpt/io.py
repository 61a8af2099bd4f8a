"""Image and view export helpers (PNG, 8-bit)."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch
from PIL import Image


def to_uint8(img) -> np.ndarray:
    a = torch.as_tensor(img).detach().cpu().numpy() if isinstance(img, torch.Tensor) else np.asarray(img)
    return np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path, img) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed encoder settings and no metadata keep the bytes reproducible
    Image.fromarray(to_uint8(img)).save(path, format="PNG", optimize=False, compress_level=6)
    return path


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def export_rendered_view(view, directory, stem: str = "view") -> dict[str, Path]:
    """Write rgb plus auxiliary buffers as PNGs and a JSON sidecar with the value mappings.

    Normals are stored as (n + 1) / 2; albedo and coverage as-is.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    normal = (view.normal.detach() + 1.0) / 2.0
    coverage = view.coverage.detach()[..., None].expand(-1, -1, 3)
    paths = {
        "rgb": write_image(directory / f"{stem}_rgb.png", view.rgb),
        "normal": write_image(directory / f"{stem}_normal.png", normal),
        "albedo": write_image(directory / f"{stem}_albedo.png", view.albedo),
        "coverage": write_image(directory / f"{stem}_coverage.png", coverage),
    }
    sidecar = {
        "pose": view.pose.to_dict(),
        "mapping": {
            "rgb": {"scale": 1.0, "offset": 0.0},
            "normal": {"scale": 0.5, "offset": 0.5},
            "albedo": {"scale": 1.0, "offset": 0.0},
            "coverage": {"scale": 1.0, "offset": 0.0},
        },
        "note": "stored = clip(scale * value + offset, 0, 1) quantized to 8 bits",
    }
    side = directory / f"{stem}.json"
    side.write_text(json.dumps(sidecar, indent=2))
    paths["sidecar"] = side
    return paths
