"""Weight ablation on the toy backbone: one row per weight value, final loss parts and metrics.

Example:
    python scripts/run_ablation.py --axis lambda_r --values 0.1 0.4 1.0 --out runs/ablation
"""

import argparse
import json
from pathlib import Path

import numpy as np
import torch

from latentsculpt.cli import grid_poses, render_grid
from latentsculpt.io import write_image
from latentsculpt.pipeline import SWEEP_AXES, Backbone, BackboneConfig, ObjectiveSpec, ablation_sweep


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--axis", choices=SWEEP_AXES, default="lambda_r")
    p.add_argument("--values", type=float, nargs="+", default=[0.1, 0.4, 1.0])
    p.add_argument("--base", type=float, nargs=3, default=[0.2, 0.2, 1.0], metavar=("ID", "R", "D"))
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--step", type=float, default=0.02)
    p.add_argument("--input-seed", type=int, default=11)
    p.add_argument("--prompt-seed", type=int, default=7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/ablation")
    args = p.parse_args()

    bb = Backbone(BackboneConfig(image_size=args.image_size))
    gen = bb.generator
    with torch.no_grad():
        exemplar = bb.render(gen.sample_latent(np.random.default_rng(args.prompt_seed))).rgb
        x = bb.render(gen.sample_latent(np.random.default_rng(args.input_seed))).rgb.numpy()
    bb.register_prompt("target", exemplar, 0.5, f"latent_seed={args.prompt_seed}")
    base = ObjectiveSpec(*args.base, lambda_il=0.0, prompt="target", input_image=x, input_pose=bb.default_pose)

    cells = ablation_sweep(base, args.axis, args.values, args.seed, bb, None, args.iters, args.step)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    poses = grid_poses(bb, 5)
    rows = []
    print(f"{args.axis:>10}  {'recon':>10}  {'identity':>10}  {'sds_res':>10}  {'prompt_d':>10}")
    for cell in cells:
        m = cell.manifest.metrics
        print(f"{cell.value:>10g}  {m['reconstruction_loss']:>10.4g}  {m['identity_loss']:>10.4g}  "
              f"{m['sds_residual']:>10.4g}  {m['prompt_distance']:>10.4g}")
        rows.append(render_grid(cell.w.tensor(), poses, bb))
        (out / f"{args.axis}={cell.value:g}.json").write_text(cell.manifest.to_json(indent=2))
    write_image(out / "grid.png", np.concatenate(rows, axis=0))
    (out / "table.json").write_text(json.dumps(
        [{"value": c.value, **c.manifest.metrics} for c in cells], indent=2))


if __name__ == "__main__":
    main()
