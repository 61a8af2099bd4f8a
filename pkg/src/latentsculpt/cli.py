"""Command line entry point: config parsing, run dispatch and artifact export.

Precedence, lowest first: built-in defaults for the command, the JSON config
file, ``--set key.path=value`` overrides, then the dedicated flags
(``--seed``, ``--out``, ``--prompt``, ``--iters``).
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import sys
import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .generator import CameraPose
from .illumination import Frame, SHLighting, estimate_lighting
from .io import read_image, sha256_file, write_image
from .latent import LatentCode
from .pipeline import (
    DEFAULT_EDIT_WEIGHTS,
    DEFAULT_ITERS,
    DEFAULT_STEP,
    LR_SCHEDULES,
    PTI_ITERS,
    PTI_STEP,
    SWEEP_AXES,
    WARMUP_ITERS,
    Backbone,
    BackboneConfig,
    ObjectiveSpec,
    ablation_sweep,
    generate_from_text,
    initial_code,
    optimize_latent,
    pivotal_tune,
)
from .sds import PromptBank

COMMANDS = ("invert", "edit", "relight", "generate", "sweep")
ARTIFACTS = ("manifest.json", "losses.csv", "grid.png", "latent.json")
EXIT_OK, EXIT_CONFIG, EXIT_PIPELINE = 0, 2, 3


class ConfigError(ValueError):
    """Static problem with a run configuration; ``field`` names the offending key."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


@dataclass
class ObjectiveSection:
    lambda_id: float = DEFAULT_EDIT_WEIGHTS[0]
    lambda_r: float = DEFAULT_EDIT_WEIGHTS[1]
    lambda_d: float = DEFAULT_EDIT_WEIGHTS[2]
    lambda_il: float = 0.0
    lambda_regu: float = 0.0
    prompt: typing.Optional[str] = None
    share_side_view: bool = True


@dataclass
class InputSection:
    # either an image file or the seed of a generator sample rendered at (theta, phi)
    image: typing.Optional[str] = None
    latent_seed: typing.Optional[int] = None
    theta: float = math.pi / 2
    phi: float = math.pi / 2


@dataclass
class PromptLatent:
    seed: int = 0
    spread: float = 0.5


@dataclass
class PromptsSection:
    bank: typing.Optional[str] = None
    from_latent: dict[str, PromptLatent] = field(default_factory=dict)


@dataclass
class LightSection:
    """Target light: ``coeffs`` or ``file``; neither means the initial render's own estimate.

    ``shift`` is added to whichever base is chosen.
    """

    coeffs: typing.Optional[list[float]] = None
    file: typing.Optional[str] = None
    shift: typing.Optional[list[float]] = None
    frame: str = "WORLD"


@dataclass
class OptimSection:
    iters: int = DEFAULT_ITERS
    step: float = DEFAULT_STEP
    lr_schedule: str = "constant"
    init: str = "mean"
    perturbation: float = 0.0
    warmup_iters: int = WARMUP_ITERS


@dataclass
class PTISection:
    enabled: bool = False
    iters: int = PTI_ITERS
    step: float = PTI_STEP


@dataclass
class SweepSection:
    axis: str = "lambda_r"
    values: list[float] = field(default_factory=lambda: [0.1, 0.4, 1.0])


@dataclass
class GridSection:
    views: int = 5


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    out: str = "runs"
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    objective: ObjectiveSection = field(default_factory=ObjectiveSection)
    input: InputSection = field(default_factory=InputSection)
    prompts: PromptsSection = field(default_factory=PromptsSection)
    light: LightSection = field(default_factory=LightSection)
    optim: OptimSection = field(default_factory=OptimSection)
    pti: PTISection = field(default_factory=PTISection)
    sweep: SweepSection = field(default_factory=SweepSection)
    grid: GridSection = field(default_factory=GridSection)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone"] = self.backbone.to_dict()
        return d


# per-command objective defaults layered under the config file
COMMAND_DEFAULTS = {
    "invert": {"objective": {"lambda_id": 0.0, "lambda_r": 1.0, "lambda_d": 0.0}},
    "edit": {},
    "relight": {"objective": {"lambda_d": 0.0, "lambda_il": 1.0}},
    "generate": {"objective": {"lambda_id": 0.0, "lambda_r": 0.0, "lambda_d": 1.0, "lambda_regu": 0.01}},
    "sweep": {},
}


def _coerce(value, tp, where: str):
    """Check ``value`` against a field annotation; ints are accepted where floats are expected."""
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], where)
    if is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"expected an object, got {type(value).__name__}", where)
        return _build(tp, value, where)
    if origin in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a list, got {type(value).__name__}", where)
        item = args[0] if args else typing.Any
        out = [_coerce(v, item, f"{where}[{i}]") for i, v in enumerate(value)]
        return tuple(out) if origin is tuple else out
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"expected an object, got {type(value).__name__}", where)
        return {str(k): _coerce(v, args[1], f"{where}.{k}") for k, v in value.items()}
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected a boolean, got {value!r}", where)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", where)
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", where)
        if not math.isfinite(value):
            raise ConfigError("must be finite", where)
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", where)
        return value
    return value


def _build(cls, doc: dict, where: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigError("unknown key", prefix + unknown[0])
    kwargs = {}
    for name, value in doc.items():
        path = f"{where}.{name}" if where else name
        kwargs[name] = _coerce(value, hints[name], path)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err), where or None) from None


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "from_latent":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _set_path(doc: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = doc
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError("cannot override inside a non-object", dotted)
    node[keys[-1]] = value


def parse_override(item: str) -> tuple[str, object]:
    """``key.path=value``; the value is read as JSON when possible, else kept as a string."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _resolve(path: str | None, base_dir: Path, where: str) -> str | None:
    if path is None:
        return None
    p = Path(path)
    if not p.is_absolute():
        p = base_dir / p
    if not p.exists():
        raise ConfigError(f"file not found: {p}", where)
    return str(p.resolve())


def _check_weights(obj: ObjectiveSection) -> None:
    for name in ("lambda_id", "lambda_r", "lambda_d", "lambda_il", "lambda_regu"):
        if getattr(obj, name) < 0:
            raise ConfigError("must be >= 0", f"objective.{name}")


def validate(cfg: RunConfig, base_dir: Path = Path(".")) -> RunConfig:
    """Every check that does not need to run the pipeline; resolves file paths."""
    if cfg.command not in COMMANDS:
        raise ConfigError(f"unknown command {cfg.command!r}", "command")
    _check_weights(cfg.objective)
    cmd = cfg.command
    obj = cfg.objective
    if cfg.optim.iters < 0:
        raise ConfigError("must be >= 0", "optim.iters")
    if cfg.optim.step <= 0:
        raise ConfigError("must be > 0", "optim.step")
    if cfg.optim.lr_schedule not in LR_SCHEDULES:
        raise ConfigError(f"must be one of {LR_SCHEDULES}", "optim.lr_schedule")
    if cfg.optim.init not in ("mean", "invert_first"):
        raise ConfigError("must be 'mean' or 'invert_first'", "optim.init")
    if cfg.optim.perturbation < 0:
        raise ConfigError("must be >= 0", "optim.perturbation")
    if cfg.optim.warmup_iters < 0:
        raise ConfigError("must be >= 0", "optim.warmup_iters")
    if cfg.pti.iters < 0:
        raise ConfigError("must be >= 0", "pti.iters")
    if cfg.pti.step <= 0:
        raise ConfigError("must be > 0", "pti.step")
    if cfg.grid.views < 1:
        raise ConfigError("must be >= 1", "grid.views")
    if cfg.backbone.image_size % 16:
        raise ConfigError("must be a multiple of 16", "backbone.image_size")
    if cmd == "sweep":
        if cfg.sweep.axis not in SWEEP_AXES:
            raise ConfigError(f"must be one of {SWEEP_AXES}", "sweep.axis")
        if not cfg.sweep.values:
            raise ConfigError("must not be empty", "sweep.values")
        if any(v < 0 for v in cfg.sweep.values):
            raise ConfigError("weights must be >= 0", "sweep.values")
    if cmd == "generate":
        if obj.lambda_d <= 0:
            raise ConfigError("generation needs lambda_d > 0", "objective.lambda_d")
        for name in ("lambda_id", "lambda_r", "lambda_il"):
            if getattr(obj, name) != 0:
                raise ConfigError("generation has no image or light terms; must be 0", f"objective.{name}")
    if cmd == "relight":
        if obj.lambda_d != 0:
            raise ConfigError("relight runs with lambda_d = 0", "objective.lambda_d")
        if obj.lambda_il <= 0:
            raise ConfigError("relight needs lambda_il > 0", "objective.lambda_il")
    if cmd == "invert" and (obj.lambda_d != 0 or obj.lambda_il != 0 or obj.lambda_regu != 0):
        raise ConfigError("invert uses only lambda_r and lambda_id", "objective")
    if cmd == "edit" and obj.lambda_d <= 0:
        raise ConfigError("edit needs lambda_d > 0", "objective.lambda_d")

    inp = cfg.input
    image = _resolve(inp.image, base_dir, "input.image")
    if image is not None and inp.latent_seed is not None:
        raise ConfigError("give either image or latent_seed, not both", "input")
    if image is not None:
        arr = read_image(image)
        n = cfg.backbone.image_size
        if arr.shape != (n, n, 3):
            raise ConfigError(f"image is {arr.shape[1]}x{arr.shape[0]}, backbone expects {n}x{n}", "input.image")
    needs_input = cmd in ("invert", "edit", "relight", "sweep") and (
        obj.lambda_id > 0 or obj.lambda_r > 0 or cmd == "invert" or cfg.optim.init == "invert_first"
    )
    if needs_input and image is None and inp.latent_seed is None:
        raise ConfigError("this command needs input.image or input.latent_seed", "input")
    try:
        CameraPose(theta=inp.theta, phi=inp.phi)
    except ValueError as err:
        raise ConfigError(str(err), "input") from None

    bank = _resolve(cfg.prompts.bank, base_dir, "prompts.bank")
    known = set(cfg.prompts.from_latent)
    if bank is not None:
        doc = json.loads(Path(bank).read_text())
        if not isinstance(doc, dict):
            raise ConfigError("prompt bank must be a JSON object", "prompts.bank")
        known |= set(doc)
    for name, pl in cfg.prompts.from_latent.items():
        if pl.spread <= 0:
            raise ConfigError("must be > 0", f"prompts.from_latent.{name}.spread")
    uses_prompt = cmd in ("edit", "generate") or (cmd == "sweep" and (obj.lambda_d > 0 or cfg.sweep.axis == "lambda_d"))
    if uses_prompt:
        if not obj.prompt:
            raise ConfigError("a prompt is required", "objective.prompt")
        if obj.prompt not in known:
            raise ConfigError(f"unknown prompt: {obj.prompt!r}", "objective.prompt")

    light = cfg.light
    try:
        Frame(light.frame)
    except ValueError:
        raise ConfigError("must be WORLD or CAMERA", "light.frame") from None
    lfile = _resolve(light.file, base_dir, "light.file")
    if light.coeffs is not None and lfile is not None:
        raise ConfigError("give either coeffs or file, not both", "light")
    for key in ("coeffs", "shift"):
        v = getattr(light, key)
        if v is not None and len(v) != 9:
            raise ConfigError("needs 9 coefficients", f"light.{key}")
    if lfile is not None:
        try:
            lit = SHLighting.from_json(Path(lfile).read_text())
        except (ValueError, KeyError) as err:
            raise ConfigError(str(err), "light.file") from None
        if lit.frame.value != light.frame:
            raise ConfigError(f"file frame {lit.frame.value} != light.frame {light.frame}", "light.file")

    return replace(
        cfg,
        objective=obj,
        input=replace(inp, image=image),
        prompts=replace(cfg.prompts, bank=bank),
        light=replace(light, file=lfile),
    )


def parse_config(
    command: str,
    path: str | None = None,
    overrides: typing.Sequence[str] = (),
    *,
    seed: int | None = None,
    out: str | None = None,
    prompt: str | None = None,
    iters: int | None = None,
) -> RunConfig:
    """Build a fully validated RunConfig from defaults, an optional JSON file and overrides."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}", "command")
    doc = _merge({"out": f"runs/{command}"}, COMMAND_DEFAULTS[command])
    base_dir = Path(".")
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as err:
            raise ConfigError(f"cannot read config: {err}") from None
        try:
            file_doc = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from None
        if not isinstance(file_doc, dict):
            raise ConfigError("config must be a JSON object")
        file_cmd = file_doc.pop("command", command)
        if file_cmd != command:
            raise ConfigError(f"config is for {file_cmd!r}, not {command!r}", "command")
        doc = _merge(doc, file_doc)
        base_dir = p.parent
    for item in overrides:
        key, value = parse_override(item)
        _set_path(doc, key, value)
    if seed is not None:
        doc["seed"] = seed
    if out is not None:
        doc["out"] = out
    if prompt is not None:
        _set_path(doc, "objective.prompt", prompt)
    if iters is not None:
        _set_path(doc, "optim.iters", iters)
    doc["command"] = command
    return validate(config_from_dict(doc), base_dir)


def config_from_dict(doc: dict) -> RunConfig:
    doc = dict(doc)
    backbone = doc.pop("backbone", {})
    if not isinstance(backbone, dict):
        raise ConfigError("expected an object", "backbone")
    cfg = _build(RunConfig, doc)
    hints = typing.get_type_hints(BackboneConfig)
    unknown = sorted(set(backbone) - set(hints))
    if unknown:
        raise ConfigError("unknown key", f"backbone.{unknown[0]}")
    checked = {k: _coerce(v, hints[k], f"backbone.{k}") for k, v in backbone.items()}
    try:
        bb = BackboneConfig.from_dict(checked)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err), "backbone") from None
    for key in ("image_size", "samples_per_ray", "stats_samples"):
        if getattr(bb, key) < 2:
            raise ConfigError("must be >= 2", f"backbone.{key}")
    return replace(cfg, backbone=bb)


def serialize_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------- running


def build_backbone(cfg: RunConfig) -> Backbone:
    bb = Backbone(cfg.backbone)
    if cfg.prompts.bank is not None:
        loaded = PromptBank.load(cfg.prompts.bank, bb.image_encoder)
        bb.bank.entries.update(loaded.entries)
    for name, pl in sorted(cfg.prompts.from_latent.items()):
        w = bb.generator.sample_latent(np.random.default_rng(pl.seed))
        with torch.no_grad():
            exemplar = bb.render(w).rgb
        bb.register_prompt(name, exemplar, pl.spread, f"latent_seed={pl.seed}")
    return bb


def _input(cfg: RunConfig, bb: Backbone) -> tuple[np.ndarray | None, CameraPose]:
    pose = bb.pose(cfg.input.theta, cfg.input.phi)
    if cfg.input.image is not None:
        return read_image(cfg.input.image), pose
    if cfg.input.latent_seed is not None:
        w = bb.generator.sample_latent(np.random.default_rng(cfg.input.latent_seed))
        with torch.no_grad():
            return bb.render(w, pose).rgb.numpy(), pose
    return None, pose


def _target_light(cfg: RunConfig, bb: Backbone, init: LatentCode, pose: CameraPose) -> SHLighting:
    frame = Frame(cfg.light.frame)
    if cfg.light.coeffs is not None:
        coeffs = np.asarray(cfg.light.coeffs, dtype=np.float64)
    elif cfg.light.file is not None:
        coeffs = SHLighting.from_json(Path(cfg.light.file).read_text()).coeffs.copy()
    else:
        with torch.no_grad():
            view = bb.render(init, pose)
        coeffs = estimate_lighting(view, bb.config.ridge, frame, bb.config.albedo_normalize).coeffs.copy()
    if cfg.light.shift is not None:
        coeffs = coeffs + np.asarray(cfg.light.shift, dtype=np.float64)
    return SHLighting(coeffs, frame)


def build_spec(cfg: RunConfig, bb: Backbone) -> ObjectiveSpec:
    obj = cfg.objective
    image, pose = _input(cfg, bb)
    spec = ObjectiveSpec(
        lambda_id=obj.lambda_id,
        lambda_r=obj.lambda_r,
        lambda_d=obj.lambda_d,
        lambda_il=obj.lambda_il,
        lambda_regu=obj.lambda_regu,
        prompt=obj.prompt,
        input_image=image,
        input_pose=pose,
        share_side_view=obj.share_side_view,
    )
    return spec


def grid_poses(bb: Backbone, n: int, theta: float = math.pi / 2) -> list[CameraPose]:
    """``n`` poses at one polar angle spanning the side-view azimuth range."""
    lo, hi = bb.config.phi_range
    phis = [0.5 * (lo + hi)] if n == 1 else list(np.linspace(lo, hi, n))
    return [bb.pose(theta, float(p)) for p in phis]


def render_grid(w, poses, bb: Backbone, weights=None) -> np.ndarray:
    with torch.no_grad():
        tiles = [bb.render(w, p, weights).rgb.numpy() for p in poses]
    return np.concatenate(tiles, axis=1)


def export_view_grid(w, poses, path, backbone: Backbone, weights=None) -> Path:
    """Renders at ``poses`` tiled left to right into one PNG."""
    if not poses:
        raise ValueError("need at least one pose")
    return write_image(path, render_grid(w, poses, backbone, weights))


def write_loss_table(path, stages: list[tuple[str, list[dict]]]) -> Path:
    """One row per iteration: iteration, stage, weighted parts, total, wall-clock ms."""
    terms = ("id", "r", "d", "il", "regu")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iteration", "stage", *[f"weighted_{t}" for t in terms], "total", "wall_ms"])
        for stage, records in stages:
            for rec in records:
                wr.writerow(
                    [rec["iteration"], stage]
                    + [repr(float(rec["weighted"].get(t, 0.0))) for t in terms]
                    + [repr(float(rec["total"])), f"{rec['wall_ms']:.3f}"]
                )
    return Path(path)


def _write_artifacts(out: Path, cfg: RunConfig, manifest: dict, stages, latent: LatentCode, grid) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    stale = out / "error.json"
    if stale.exists():
        stale.unlink()
    write_loss_table(out / "losses.csv", stages)
    write_image(out / "grid.png", grid)
    (out / "latent.json").write_text(latent.to_json())
    hashes = {name: sha256_file(out / name) for name in ARTIFACTS[1:]}
    doc = {"command": cfg.command, "effective_config": cfg.to_dict(), **manifest, "artifacts": hashes}
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, allow_nan=True))
    return doc


def _run_single(cfg: RunConfig, bb: Backbone, out: Path) -> dict:
    spec = build_spec(cfg, bb)
    o = cfg.optim
    if cfg.command == "generate":
        res = generate_from_text(
            spec.prompt, spec.lambda_d, spec.lambda_regu, o.iters, cfg.seed, bb, o.step, lr_schedule=o.lr_schedule
        )
        poses = grid_poses(bb, cfg.grid.views)
        grid = render_grid(res.w.tensor(), poses, bb)
        return _write_artifacts(out, cfg, res.manifest.to_dict(), [("latent", res.manifest.records)], res.w, grid)

    init = initial_code(
        spec, bb, o.init, o.perturbation, cfg.seed, o.warmup_iters, o.step, o.lr_schedule
    )
    if cfg.command == "relight":
        spec = replace(spec, target_light=_target_light(cfg, bb, init, spec.input_pose))
    res = optimize_latent(spec, init, o.iters, o.step, cfg.seed, bb, lr_schedule=o.lr_schedule,
                          procedure=cfg.command)
    manifest = res.manifest.to_dict()
    stages = [("latent", res.manifest.records)]
    weights = None
    if cfg.pti.enabled and cfg.command in ("edit", "relight", "invert"):
        pti = pivotal_tune(res.w, spec, cfg.pti.iters, cfg.pti.step, cfg.seed + 1, bb, lr_schedule=o.lr_schedule)
        weights = pti.generator.weights
        manifest["pti"] = pti.manifest.to_dict()
        stages.append(("pti", pti.manifest.records))
    poses = grid_poses(bb, cfg.grid.views, spec.input_pose.theta)
    grid = render_grid(res.w.tensor(), poses, bb, weights)
    return _write_artifacts(out, cfg, manifest, stages, res.w, grid)


def _run_sweep(cfg: RunConfig, bb: Backbone, out: Path) -> dict:
    spec = build_spec(cfg, bb)
    o = cfg.optim
    init = initial_code(spec, bb, o.init, o.perturbation, cfg.seed, o.warmup_iters, o.step, o.lr_schedule)
    cells = ablation_sweep(spec, cfg.sweep.axis, cfg.sweep.values, cfg.seed, bb, init, o.iters, o.step,
                           lr_schedule=o.lr_schedule)
    poses = grid_poses(bb, cfg.grid.views, spec.input_pose.theta)
    out.mkdir(parents=True, exist_ok=True)
    if (out / "error.json").exists():
        (out / "error.json").unlink()
    rows, table = [], []
    for k, cell in enumerate(cells):
        sub = out / f"cell{k:02d}_{cell.axis}={cell.value:g}"
        grid = render_grid(cell.w.tensor(), poses, bb)
        rows.append(grid)
        doc = _write_artifacts(sub, cfg, cell.manifest.to_dict(), [("latent", cell.manifest.records)], cell.w, grid)
        final = cell.manifest.records[-1]["parts"] if cell.manifest.records else {}
        table.append({
            "dir": sub.name,
            "value": cell.value,
            "final_parts": final,
            "metrics": doc["metrics"],
            "manifest_sha256": sha256_file(sub / "manifest.json"),
        })
    write_image(out / "sweep_grid.png", np.concatenate(rows, axis=0))
    summary = {
        "command": "sweep",
        "axis": cfg.sweep.axis,
        "effective_config": cfg.to_dict(),
        "cells": table,
        "grid_sha256": sha256_file(out / "sweep_grid.png"),
    }
    (out / "sweep.json").write_text(json.dumps(summary, indent=2, allow_nan=True))
    return summary


def run_command(cfg: RunConfig) -> dict:
    """Execute a validated config and write its artifacts under ``cfg.out``."""
    bb = build_backbone(cfg)
    out = Path(cfg.out)
    if cfg.command == "sweep":
        return _run_sweep(cfg, bb, out)
    return _run_single(cfg, bb, out)


def _error_record(kind: str, err: BaseException) -> dict:
    rec = {"status": "error", "kind": kind, "type": type(err).__name__, "message": str(err)}
    for attr in ("field", "term", "iteration"):
        if getattr(err, attr, None) is not None:
            rec[attr] = getattr(err, attr)
    return rec


def _report(rec: dict, out: str | None) -> None:
    print(json.dumps(rec), file=sys.stderr)
    if out:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "error.json").write_text(json.dumps(rec, indent=2))
        except OSError:
            pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latentsculpt", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="artifact directory")
    p.add_argument("--prompt")
    p.add_argument("--iters", type=int)
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. --set objective.lambda_r=0.5")
    p.add_argument("extra", nargs="*", metavar="KEY=VALUE", help="same as --set")
    return p


def main(argv: typing.Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_intermixed_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = parse_config(
            args.command, args.config, [*args.overrides, *args.extra],
            seed=args.seed, out=args.out, prompt=args.prompt, iters=args.iters,
        )
    except ConfigError as err:
        _report(_error_record("config", err), args.out)
        return EXIT_CONFIG
    try:
        doc = run_command(cfg)
    except Exception as err:  # noqa: BLE001 - any failure past validation is a pipeline error
        _report(_error_record("pipeline", err), cfg.out)
        return EXIT_PIPELINE
    metrics = doc.get("metrics") or {c["dir"]: c["metrics"] for c in doc.get("cells", [])}
    print(json.dumps({"status": "ok", "out": cfg.out, "metrics": metrics}))
    return EXIT_OK


def entry() -> None:
    sys.exit(main())
