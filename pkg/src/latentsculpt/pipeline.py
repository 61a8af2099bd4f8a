"""Weighted multi-term latent optimization, pivotal tuning, text-only generation and sweeps."""

from __future__ import annotations

import base64
import copy
import hashlib
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import torch

from . import preservation
from .generator import (
    SIDE_RANGE,
    CameraPose,
    GeneratorConfig,
    RenderQuality,
    ToyGenerator,
    psnr,
    sample_side_pose,
)
from .illumination import SHLighting, estimate_lighting_tensor, illumination_loss
from .latent import LatentCode, LatentStats, Space, estimate_latent_stats, initial_latent
from .sds import (
    DiffusionSchedule,
    ImageEncoder,
    PromptBank,
    denoise,
    draw_noise,
    sds_loss,
    sds_residual,
    sds_surrogate,
)

TERMS = ("id", "r", "d", "il", "regu")
WEIGHT_OF = {"id": "lambda_id", "r": "lambda_r", "d": "lambda_d", "il": "lambda_il", "regu": "lambda_regu"}

# edit weights (identity, reconstruction, diffusion)
DEFAULT_EDIT_WEIGHTS = (0.2, 0.2, 2e-5)
DEFAULT_ITERS = 500
DEFAULT_STEP = 0.01
PTI_ITERS = 200
PTI_STEP = 1e-3
WARMUP_ITERS = 200
METRIC_SEED = 2024
METRIC_DRAWS = 64


class SpecError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str, iteration: int | None = None):
        self.term = term
        self.iteration = iteration
        where = "" if iteration is None else f" at iteration {iteration}"
        super().__init__(f"non-finite value in loss term {term!r}{where}")


class DegenerateObjectiveError(ValueError):
    pass


@dataclass(frozen=True)
class BackboneConfig:
    latent_dim: int = 64
    n_layers: int = 4
    n_blobs: int = 8
    generator_seed: int = 0
    image_size: int = 64
    samples_per_ray: int = 32
    near: float = 1.2
    far: float = 4.2
    radius: float = 2.7
    fov_y: float = 0.4
    feature_seed: int = 1
    identity_seed: int = 2
    diffusion_seed: int = 3
    feature_dim: int = 128
    identity_dim: int = 64
    diffusion_dim: int = 16
    stats_samples: int = 1000
    stats_seed: int = 0
    t_min: float = 0.02
    t_max: float = 0.98
    sds_weighting: str = "one_minus_alpha_bar"
    theta_range: tuple[float, float] = SIDE_RANGE
    phi_range: tuple[float, float] = SIDE_RANGE
    ridge: float = 1e-6
    albedo_normalize: bool = True

    def to_dict(self) -> dict:
        d = asdict(self)
        d["theta_range"] = list(self.theta_range)
        d["phi_range"] = list(self.phi_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        d = dict(d)
        for key in ("theta_range", "phi_range"):
            if key in d:
                d[key] = tuple(float(v) for v in d[key])
        return cls(**d)


class Backbone:
    """All frozen components a run needs: generator, encoders, denoiser bank, latent stats."""

    def __init__(self, config: BackboneConfig = BackboneConfig(), bank: PromptBank | None = None):
        self.config = config
        self.generator = ToyGenerator(
            GeneratorConfig(config.latent_dim, config.n_layers, config.n_blobs, config.generator_seed)
        )
        self.quality = RenderQuality(config.samples_per_ray, config.near, config.far)
        self.image_encoder = ImageEncoder(config.image_size, config.diffusion_dim, config.diffusion_seed)
        self.schedule = DiffusionSchedule(config.t_min, config.t_max, config.sds_weighting)
        self.stats: LatentStats = estimate_latent_stats(
            self.generator.sample_latent, config.stats_samples, config.stats_seed
        )
        self.bank = bank if bank is not None else PromptBank()

    @property
    def default_pose(self) -> CameraPose:
        c = self.config
        return CameraPose(radius=c.radius, fov_y=c.fov_y, image_size=c.image_size)

    def pose(self, theta: float, phi: float) -> CameraPose:
        return replace(self.default_pose, theta=theta, phi=phi)

    def render(self, w, pose: CameraPose | None = None, weights=None):
        return self.generator.render(w, pose or self.default_pose, self.quality, weights)

    def sample_side_pose(self, rng, base: CameraPose | None = None) -> CameraPose:
        return sample_side_pose(rng, base or self.default_pose, self.config.theta_range, self.config.phi_range)

    def reconstruction_loss(self, x_render, x_input):
        return preservation.reconstruction_loss(x_render, x_input, self.config.feature_seed, self.config.feature_dim)

    def identity_loss(self, x_render, x_input):
        return preservation.identity_loss(x_render, x_input, self.config.identity_seed, self.config.identity_dim)

    def encode(self, x) -> torch.Tensor:
        return self.image_encoder(x)

    def register_prompt(self, prompt: str, exemplar, spread: float = 0.5, source: str = ""):
        return self.bank.register(prompt, exemplar, self.image_encoder, spread, source)

    def sds_loss(self, w, c_s: CameraPose, y: str, rng=None, *, t=None, eps=None, weights=None):
        wt = w.tensor() if isinstance(w, LatentCode) else w
        return sds_loss(
            wt,
            lambda v: self.render(v, c_s, weights).rgb,
            self.image_encoder,
            self.schedule,
            rng,
            prompt=y,
            bank=self.bank,
            t=t,
            eps=eps,
        )


def _encode_array(a: np.ndarray) -> str:
    buf = io.BytesIO()
    np.save(buf, np.asarray(a, dtype=np.float64), allow_pickle=False)
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _decode_array(s: str) -> np.ndarray:
    return np.load(io.BytesIO(base64.b64decode(s)), allow_pickle=False)


@dataclass
class ObjectiveSpec:
    """Weights and conditioning for the composite objective.

    A term with positive weight needs its inputs: the diffusion term needs a
    prompt, the illumination term a target light, and the identity and
    reconstruction terms an input image and its camera pose.
    """

    lambda_id: float = DEFAULT_EDIT_WEIGHTS[0]
    lambda_r: float = DEFAULT_EDIT_WEIGHTS[1]
    lambda_d: float = DEFAULT_EDIT_WEIGHTS[2]
    lambda_il: float = 1.0
    lambda_regu: float = 0.0
    prompt: str | None = None
    target_light: SHLighting | None = None
    input_image: np.ndarray | None = None
    input_pose: CameraPose | None = None
    share_side_view: bool = True

    def validate(self) -> "ObjectiveSpec":
        for term, name in WEIGHT_OF.items():
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise SpecError(f"{name} must be a finite nonnegative number, got {v!r}")
        if self.lambda_d > 0 and not self.prompt:
            raise SpecError("lambda_d > 0 requires a prompt")
        if self.lambda_il > 0 and self.target_light is None:
            raise SpecError("lambda_il > 0 requires a target_light")
        if (self.lambda_id > 0 or self.lambda_r > 0) and (self.input_image is None or self.input_pose is None):
            raise SpecError("lambda_id/lambda_r > 0 require input_image and input_pose")
        if self.input_image is not None:
            img = np.asarray(self.input_image)
            if img.ndim != 3 or img.shape[-1] != 3:
                raise SpecError(f"input_image must be HxWx3, got shape {img.shape}")
        return self

    def weight(self, term: str) -> float:
        return float(getattr(self, WEIGHT_OF[term]))

    def side_pose_base(self, bb: Backbone) -> CameraPose:
        return self.input_pose or bb.default_pose

    def to_dict(self) -> dict:
        return {
            "lambda_id": self.lambda_id,
            "lambda_r": self.lambda_r,
            "lambda_d": self.lambda_d,
            "lambda_il": self.lambda_il,
            "lambda_regu": self.lambda_regu,
            "prompt": self.prompt,
            "target_light": None if self.target_light is None else json.loads(self.target_light.to_json()),
            "input_image": None if self.input_image is None else _encode_array(self.input_image),
            "input_pose": None if self.input_pose is None else self.input_pose.to_dict(),
            "share_side_view": self.share_side_view,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectiveSpec":
        d = dict(d)
        if d.get("target_light") is not None:
            d["target_light"] = SHLighting.from_json(json.dumps(d["target_light"]))
        if d.get("input_image") is not None:
            d["input_image"] = _decode_array(d["input_image"])
        if d.get("input_pose") is not None:
            d["input_pose"] = CameraPose(**d["input_pose"])
        return cls(**d)


@dataclass(frozen=True)
class SideSample:
    """Randomness of one objective evaluation: side pose(s) and diffusion noise."""

    pose: CameraPose
    t: float | None = None
    eps: np.ndarray | None = None
    il_pose: CameraPose | None = None


@dataclass
class ObjectiveResult:
    total: float
    parts: dict[str, float]
    weighted: dict[str, float]
    grad_w: torch.Tensor
    side: SideSample | None
    tags: dict[str, dict]


def _pose_tag(kind: str, pose: CameraPose) -> dict:
    return {"view": kind, "theta": pose.theta, "phi": pose.phi}


def draw_side(spec: ObjectiveSpec, bb: Backbone, rng: np.random.Generator) -> SideSample | None:
    need_d = spec.lambda_d > 0
    need_il = spec.lambda_il > 0
    if not (need_d or need_il):
        return None
    base = spec.side_pose_base(bb)
    pose = bb.sample_side_pose(rng, base)
    t = eps = None
    if need_d:
        t, eps = draw_noise(rng, bb.schedule, bb.image_encoder.dim)
    il_pose = None
    if need_il and not spec.share_side_view:
        il_pose = bb.sample_side_pose(rng, base)
    return SideSample(pose, t, eps, il_pose)


def _evaluate(w, spec, bb, rng, side, weights, wrt):
    parts: dict[str, torch.Tensor] = {}
    tags: dict[str, dict] = {}
    graph = torch.zeros((), dtype=torch.float64)

    if spec.lambda_r > 0 or spec.lambda_id > 0:
        x_in = torch.as_tensor(np.asarray(spec.input_image), dtype=torch.float64)
        view = bb.render(w, spec.input_pose, weights)
        if spec.lambda_id > 0:
            parts["id"] = bb.identity_loss(view.rgb, x_in)
            tags["id"] = _pose_tag("input", spec.input_pose)
        if spec.lambda_r > 0:
            parts["r"] = bb.reconstruction_loss(view.rgb, x_in)
            tags["r"] = _pose_tag("input", spec.input_pose)

    if spec.lambda_d > 0 or spec.lambda_il > 0:
        if side is None:
            side = draw_side(spec, bb, rng)
        side_view = None
        if spec.lambda_d > 0:
            side_view = bb.render(w, side.pose, weights)
            z = bb.encode(side_view.rgb)
            entry_prompt = spec.prompt
            r = sds_residual(z, side.t, side.eps, lambda zt, tt: denoise(zt, entry_prompt, tt, bb.bank))
            parts["d"] = (r * r).sum()
            graph = graph + spec.lambda_d * sds_surrogate(z, r, bb.schedule.sds_weight(side.t))
            tags["d"] = {**_pose_tag("side", side.pose), "t": side.t}
        if spec.lambda_il > 0:
            il_pose = side.il_pose if side.il_pose is not None else side.pose
            if side_view is None or il_pose is not side.pose:
                il_view = bb.render(w, il_pose, weights)
            else:
                il_view = side_view
            parts["il"] = illumination_loss(
                il_view, spec.target_light, bb.config.ridge, spec.target_light.frame, bb.config.albedo_normalize
            )
            tags["il"] = _pose_tag("side", il_pose)

    if spec.lambda_regu > 0:
        diff = w - bb.stats.mean.tensor()
        parts["regu"] = (diff * diff).sum()
        tags["regu"] = {"view": "none"}

    for term, value in parts.items():
        if term != "d":
            graph = graph + spec.weight(term) * value

    pvals = {k: float(v.detach()) for k, v in parts.items()}
    for k, v in pvals.items():
        if not math.isfinite(v):
            raise NonFiniteLossError(k)
    weighted = {k: spec.weight(k) * v for k, v in pvals.items()}
    total = float(sum(weighted.values()))

    if graph.requires_grad:
        grads = torch.autograd.grad(graph, wrt, allow_unused=True)
        grads = [torch.zeros_like(x) if g is None else g for x, g in zip(wrt, grads)]
    else:
        grads = [torch.zeros_like(x) for x in wrt]
    for g in grads:
        if not torch.all(torch.isfinite(g)):
            bad = max(parts, key=lambda k: spec.weight(k)) if parts else "total"
            raise NonFiniteLossError(f"gradient ({bad})")
    return total, pvals, weighted, grads, side, tags


def compose_objective(
    w,
    spec: ObjectiveSpec,
    backbone: Backbone,
    rng: np.random.Generator | None = None,
    *,
    side: SideSample | None = None,
) -> ObjectiveResult:
    """Evaluate the weighted objective and its latent gradient.

    Identity and reconstruction terms use the input pose; the diffusion and
    illumination terms share one side pose (drawn from ``rng`` unless
    ``side`` is given). The diffusion term contributes the score-distillation
    gradient, not the derivative of its reported residual norm.
    """
    spec.validate()
    wt = w.tensor() if isinstance(w, LatentCode) else w
    leaf = wt if wt.requires_grad else wt.detach().clone().requires_grad_(True)
    total, parts, weighted, (grad,), side, tags = _evaluate(leaf, spec, backbone, rng, side, None, [leaf])
    return ObjectiveResult(total, parts, weighted, grad, side, tags)


@dataclass
class RunManifest:
    procedure: str
    config: dict
    records: list[dict] = field(default_factory=list)
    final_latent: dict | None = None
    metrics: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0
    checksums: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent, allow_nan=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls.from_dict(json.loads(text))

    def latent(self) -> LatentCode:
        return LatentCode.from_json(json.dumps(self.final_latent))


def design_record(bb: Backbone, spec: ObjectiveSpec) -> dict:
    c = bb.config
    return {
        "optimizer": "adam",
        "adam_betas": [0.9, 0.999],
        "adam_eps": 1e-8,
        "timestep_distribution": {"kind": "uniform", "low": c.t_min, "high": c.t_max},
        "alpha_bar": "cos^2(pi*t/2)",
        "sds_weight": "1 - alpha_bar(t)" if c.sds_weighting == "one_minus_alpha_bar" else "1",
        "side_pose": {"theta_range": list(c.theta_range), "phi_range": list(c.phi_range)},
        "side_views_per_iteration": 1 if spec.share_side_view else 2,
        "light_estimator": {
            "kind": "ridge_least_squares_on_normals",
            "ridge": c.ridge,
            "coverage_min": 0.5,
            "albedo_normalize": c.albedo_normalize,
        },
        "feature_encoder": "frozen random conv, final head output",
        "identity_encoder": "frozen random conv, L2-normalized",
        "diffusion_encoder": "avgpool16 + frozen linear",
    }


def _rng(rng) -> np.random.Generator:
    if rng is None:
        return np.random.default_rng(0)
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(int(rng))


def _rng_from_state(state: dict) -> np.random.Generator:
    bitgen = getattr(np.random, state["bit_generator"])()
    bitgen.state = state
    return np.random.Generator(bitgen)


def _latent_dict(w: LatentCode) -> dict:
    return json.loads(w.to_json())


def _metric_draws(dim: int, schedule: DiffusionSchedule):
    rng = np.random.default_rng(METRIC_SEED)
    return [draw_noise(rng, schedule, dim) for _ in range(METRIC_DRAWS)]


def evaluate_metrics(w: LatentCode, spec: ObjectiveSpec, bb: Backbone, weights=None) -> dict:
    """Deterministic end-of-run metrics (no dependence on the run's rng)."""
    out: dict[str, float] = {}
    wt = w.tensor()
    base = spec.side_pose_base(bb)
    with torch.no_grad():
        out["latent_distance_to_mean"] = float(torch.linalg.vector_norm(wt - bb.stats.mean.tensor()))
        view = bb.render(wt, base, weights)
        if spec.input_image is not None:
            x_in = torch.as_tensor(np.asarray(spec.input_image), dtype=torch.float64)
            out["reconstruction_loss"] = float(bb.reconstruction_loss(view.rgb, x_in))
            out["identity_loss"] = float(bb.identity_loss(view.rgb, x_in))
            out["psnr"] = psnr(view.rgb, x_in)
        if spec.prompt:
            entry = bb.bank.get(spec.prompt)
            z = bb.encode(view.rgb)
            out["prompt_distance"] = float(torch.linalg.vector_norm(z - torch.as_tensor(entry.target_mu)))
            den = lambda zt, tt: denoise(zt, spec.prompt, tt, bb.bank)  # noqa: E731
            res = [float((sds_residual(z, t, e, den) ** 2).sum()) for t, e in _metric_draws(z.numel(), bb.schedule)]
            out["sds_residual"] = float(np.mean(res))
        if spec.target_light is not None:
            est = estimate_lighting_tensor(view, bb.config.ridge, spec.target_light.frame, bb.config.albedo_normalize)
            out["illumination_residual"] = float((est - spec.target_light.tensor()).abs().sum())
    return out


@dataclass
class OptimizationResult:
    w: LatentCode
    manifest: RunManifest


LR_SCHEDULES = ("constant", "cosine")


def step_size(step: float, i: int, iters: int, schedule: str) -> float:
    """Cosine decay from ``step`` down to a tenth of it; or constant."""
    if schedule == "constant" or iters <= 1:
        return step
    if schedule == "cosine":
        return step * (0.1 + 0.45 * (1.0 + math.cos(math.pi * i / (iters - 1))))
    raise SpecError(f"unknown lr schedule {schedule!r}")


def _record(i: int, total, parts, weighted, tags, ms) -> dict:
    return {
        "iteration": i,
        "parts": parts,
        "weighted": weighted,
        "total": total,
        "poses": tags,
        "wall_ms": ms,
    }


def optimize_latent(
    spec: ObjectiveSpec,
    init: LatentCode,
    iters: int = DEFAULT_ITERS,
    step: float = DEFAULT_STEP,
    rng=None,
    backbone: Backbone | None = None,
    *,
    lr_schedule: str = "constant",
    procedure: str = "optimize_latent",
) -> OptimizationResult:
    """Adam over the W+ entries, one objective sample per iteration."""
    bb = backbone or Backbone()
    spec.validate()
    if init.shape != bb.generator.latent_shape:
        raise SpecError(f"init shape {init.shape} != generator latent shape {bb.generator.latent_shape}")
    if iters < 0 or step <= 0:
        raise SpecError("iters must be >= 0 and step > 0")
    if lr_schedule not in LR_SCHEDULES:
        raise SpecError(f"unknown lr schedule {lr_schedule!r}")
    rng = _rng(rng)
    config = {
        "backbone": bb.config.to_dict(),
        "bank": bb.bank.to_dict(),
        "spec": spec.to_dict(),
        "init": _latent_dict(init),
        "iters": iters,
        "step": step,
        "lr_schedule": lr_schedule,
        "rng_state": copy.deepcopy(rng.bit_generator.state),
        "design": design_record(bb, spec),
    }
    start = time.perf_counter()
    gen_sum = bb.generator.checksum()

    w = init.tensor().requires_grad_(True)
    opt = torch.optim.Adam([w], lr=step, betas=(0.9, 0.999), eps=1e-8)
    records = []
    for i in range(iters):
        t0 = time.perf_counter()
        try:
            total, parts, weighted, (grad,), _, tags = _evaluate(w, spec, bb, rng, None, None, [w])
        except NonFiniteLossError as err:
            raise NonFiniteLossError(err.term, i) from None
        w.grad = grad
        opt.param_groups[0]["lr"] = step_size(step, i, iters, lr_schedule)
        opt.step()
        records.append(_record(i, total, parts, weighted, tags, (time.perf_counter() - t0) * 1e3))

    if bb.generator.checksum() != gen_sum:
        raise RuntimeError("generator weights changed during latent optimization")
    final = LatentCode.from_tensor(w, Space.W_PLUS)
    manifest = RunManifest(
        procedure=procedure,
        config=config,
        records=records,
        final_latent=_latent_dict(final),
        metrics=evaluate_metrics(final, spec, bb),
        wall_clock_s=time.perf_counter() - start,
        checksums={"generator_before": gen_sum, "generator_after": bb.generator.checksum()},
    )
    return OptimizationResult(final, manifest)


@dataclass
class PTIResult:
    generator: ToyGenerator
    manifest: RunManifest


def _anchor(spec: ObjectiveSpec, weighted: dict) -> float:
    return weighted.get("r", 0.0) + weighted.get("id", 0.0)


def pivotal_tune(
    w_t: LatentCode,
    spec: ObjectiveSpec,
    iters: int = PTI_ITERS,
    step: float = PTI_STEP,
    rng=None,
    backbone: Backbone | None = None,
    *,
    lr_schedule: str = "constant",
) -> PTIResult:
    """Fine-tune the generator's decode weights around a fixed pivot code.

    Returns the iterate with the lowest input-view (reconstruction + identity)
    objective seen, so that objective never ends above its starting value.
    The backbone's own generator is left untouched.
    """
    bb = backbone or Backbone()
    spec.validate()
    if iters < 0 or step <= 0:
        raise SpecError("iters must be >= 0 and step > 0")
    rng = _rng(rng)
    config = {
        "backbone": bb.config.to_dict(),
        "bank": bb.bank.to_dict(),
        "spec": spec.to_dict(),
        "pivot": _latent_dict(w_t),
        "iters": iters,
        "step": step,
        "lr_schedule": lr_schedule,
        "rng_state": copy.deepcopy(rng.bit_generator.state),
        "design": design_record(bb, spec),
    }
    start = time.perf_counter()
    base_sum = bb.generator.checksum()
    pivot = w_t.tensor()
    pivot_bytes = pivot.numpy().tobytes()

    params = {k: v.clone().requires_grad_(True) for k, v in bb.generator.weights.items()}
    names = sorted(params)
    opt = torch.optim.Adam([params[k] for k in names], lr=step, betas=(0.9, 0.999), eps=1e-8)
    has_anchor = spec.lambda_r > 0 or spec.lambda_id > 0
    best_score = math.inf
    best = {k: v.detach().clone() for k, v in params.items()}
    best_iter = 0
    records = []
    for i in range(iters):
        t0 = time.perf_counter()
        try:
            total, parts, weighted, grads, _, tags = _evaluate(
                pivot, spec, bb, rng, None, params, [params[k] for k in names]
            )
        except NonFiniteLossError as err:
            raise NonFiniteLossError(err.term, i) from None
        score = _anchor(spec, weighted)
        if has_anchor and score < best_score:
            best_score, best_iter = score, i
            best = {k: v.detach().clone() for k, v in params.items()}
        for k, g in zip(names, grads):
            params[k].grad = g
        opt.param_groups[0]["lr"] = step_size(step, i, iters, lr_schedule)
        opt.step()
        records.append(_record(i, total, parts, weighted, tags, (time.perf_counter() - t0) * 1e3))

    if iters > 0:
        final = {k: v.detach().clone() for k, v in params.items()}
        if has_anchor:
            anchor_spec = replace(spec, lambda_d=0.0, lambda_il=0.0, lambda_regu=0.0)
            _, _, weighted, _, _, _ = _evaluate(pivot, anchor_spec, bb, None, None, final, [])
            if _anchor(spec, weighted) < best_score:
                best, best_iter = final, iters
        else:
            best, best_iter = final, iters

    if pivot.numpy().tobytes() != pivot_bytes:
        raise RuntimeError("pivot latent changed during pivotal tuning")
    if bb.generator.checksum() != base_sum:
        raise RuntimeError("base generator changed during pivotal tuning")
    tuned = bb.generator.with_weights(best)
    metrics = evaluate_metrics(w_t, spec, bb, tuned.weights)
    metrics["selected_iteration"] = best_iter
    manifest = RunManifest(
        procedure="pivotal_tune",
        config=config,
        records=records,
        final_latent=_latent_dict(w_t),
        metrics=metrics,
        wall_clock_s=time.perf_counter() - start,
        checksums={
            "generator_base": base_sum,
            "generator_tuned": tuned.checksum(),
            "pivot": hashlib.sha256(pivot_bytes).hexdigest(),
        },
    )
    return PTIResult(tuned, manifest)


def generate_from_text(
    prompt: str,
    lambda_d: float = 1.0,
    lambda_regu: float = 0.01,
    iters: int = DEFAULT_ITERS,
    rng=None,
    backbone: Backbone | None = None,
    step: float = DEFAULT_STEP,
    *,
    lr_schedule: str = "constant",
    _allow_zero_diffusion: bool = False,
) -> OptimizationResult:
    """Prompt-only optimization from the latent mean with a pull back toward it."""
    bb = backbone or Backbone()
    bb.bank.get(prompt)
    if lambda_d == 0 and not _allow_zero_diffusion:
        raise DegenerateObjectiveError("generation needs lambda_d > 0")
    spec = ObjectiveSpec(
        lambda_id=0.0, lambda_r=0.0, lambda_d=lambda_d, lambda_il=0.0, lambda_regu=lambda_regu, prompt=prompt
    )
    return optimize_latent(
        spec, bb.stats.mean, iters, step, rng, bb, lr_schedule=lr_schedule, procedure="generate_from_text"
    )


def initial_code(
    spec: ObjectiveSpec,
    bb: Backbone,
    mode: str = "mean",
    perturbation: float = 0.0,
    seed: int = 0,
    warmup_iters: int = WARMUP_ITERS,
    step: float = DEFAULT_STEP,
    lr_schedule: str = "constant",
) -> LatentCode:
    """Starting code: the latent mean (optionally jittered), or a reconstruction-only warm start."""
    w0 = initial_latent(bb.stats, perturbation, seed)
    if mode == "mean":
        return w0
    if mode == "invert_first":
        if spec.input_image is None:
            raise SpecError("invert_first initialization needs an input image")
        warm = ObjectiveSpec(lambda_id=0.0, lambda_r=1.0, lambda_d=0.0, lambda_il=0.0,
                             input_image=spec.input_image, input_pose=spec.input_pose)
        return optimize_latent(warm, w0, warmup_iters, step, seed, bb, lr_schedule=lr_schedule, procedure="warmup").w
    raise SpecError(f"unknown init mode {mode!r}")


@dataclass
class SweepCell:
    axis: str
    value: float
    w: LatentCode
    manifest: RunManifest


SWEEP_AXES = ("lambda_id", "lambda_r", "lambda_d")


def ablation_sweep(
    base_spec: ObjectiveSpec,
    axis: str,
    values,
    seed: int = 0,
    backbone: Backbone | None = None,
    init: LatentCode | None = None,
    iters: int = DEFAULT_ITERS,
    step: float = DEFAULT_STEP,
    *,
    lr_schedule: str = "constant",
) -> list[SweepCell]:
    """Re-run the optimization once per value of one weight; everything else, seeds included, fixed."""
    if axis not in SWEEP_AXES:
        raise SpecError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    values = list(values)
    if not values:
        raise SpecError("sweep needs at least one value")
    bb = backbone or Backbone()
    start = init or bb.stats.mean
    cells = []
    for v in values:
        spec = replace(base_spec, **{axis: float(v)})
        res = optimize_latent(spec, start, iters, step, np.random.default_rng(seed), bb, lr_schedule=lr_schedule)
        res.manifest.config["sweep"] = {"axis": axis, "value": float(v), "seed": seed}
        cells.append(SweepCell(axis, float(v), res.w, res.manifest))
    return cells


def backbone_from_manifest(manifest: RunManifest) -> Backbone:
    cfg = BackboneConfig.from_dict(manifest.config["backbone"])
    return Backbone(cfg, PromptBank.from_dict(manifest.config["bank"]))


def replay(manifest: RunManifest, backbone: Backbone | None = None) -> RunManifest:
    """Re-run the procedure recorded in a manifest from its stored configuration."""
    cfg = manifest.config
    bb = backbone or backbone_from_manifest(manifest)
    spec = ObjectiveSpec.from_dict(cfg["spec"])
    rng = _rng_from_state(cfg["rng_state"])
    if manifest.procedure == "pivotal_tune":
        pivot = LatentCode.from_json(json.dumps(cfg["pivot"]))
        return pivotal_tune(
            pivot, spec, cfg["iters"], cfg["step"], rng, bb, lr_schedule=cfg["lr_schedule"]
        ).manifest
    init = LatentCode.from_json(json.dumps(cfg["init"]))
    return optimize_latent(
        spec, init, cfg["iters"], cfg["step"], rng, bb,
        lr_schedule=cfg["lr_schedule"], procedure=manifest.procedure,
    ).manifest
