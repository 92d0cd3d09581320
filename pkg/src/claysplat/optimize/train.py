"""Training loop: both branches forward, routed backward, Adam update."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields

import torch

from ..clay import clay_loss, environment_background, render_clay
from ..scene import EnvironmentMap, GaussianScene, TrainView, orthonormal_frame
from ..shading import shade, visibility_map, with_base
from ..splat import SplatGradients, render_gbuffer, scene_gradients
from .losses import mask_loss, rgb_loss
from .schedule import get_variant, route_gradients, smooth_normal

DIVERGENCE_FACTOR = 10.0
DIVERGENCE_PATIENCE = 500
# losses below this never count as divergence, so a near-perfect start cannot trip the guard
DIVERGENCE_FLOOR = 1e-3
LOG_COLUMNS = ("iter", "L_rgb", "L_clay", "L_total", "grad_norm_pos", "grad_norm_mat")

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


class TrainingError(RuntimeError):
    """Raised when optimization hits a non-finite gradient or diverges."""


@dataclass
class TrainConfig:
    t_clay: int = 10_000
    t_total: int = 50_000
    lambda_clay: float = 0.5
    lambda_dssim: float = 0.8
    variant: str = "ptr+smooth"
    seed: int = 0
    lr_position: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    lr: float = 5e-3
    lr_env: float = 1e-2
    learn_env: bool = True
    stop_after_clay: bool = False
    masked: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        get_variant(self.variant)
        if self.t_total < 0 or self.t_clay < 0:
            raise ValueError("iteration counts must be non-negative")
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {', '.join(_DTYPES)}")

    @property
    def torch_dtype(self):
        return _DTYPES[self.dtype]

    @property
    def last_iteration(self) -> int:
        return min(self.t_total, self.t_clay) if self.stop_after_clay else self.t_total

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_LR_KEYS = {"position": "lr_position", "position_final": "lr_position_final", "default": "lr", "env": "lr_env"}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse flat ``key = value`` lines (``#`` starts a comment) over ``base`` defaults.

    ``lrs`` takes comma-separated ``group:value`` pairs with groups ``position``,
    ``position_final``, ``default`` and ``env``.
    """
    values = (base or TrainConfig()).to_dict()
    types = {f.name: f.type for f in fields(TrainConfig)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "lrs":
            for item in value.split(","):
                group, _, number = item.partition(":")
                if group.strip() not in _LR_KEYS:
                    raise ValueError(f"line {lineno}: unknown learning-rate group {group.strip()!r}")
                values[_LR_KEYS[group.strip()]] = float(number)
            continue
        if key not in values:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        kind = types[key]
        if kind in ("bool", bool):
            values[key] = _parse_bool(value)
        elif kind in ("int", int):
            values[key] = int(value)
        elif kind in ("float", float):
            values[key] = float(value)
        else:
            values[key] = value
    return TrainConfig(**values)


@dataclass
class LossReport:
    iteration: int
    l_rgb: float
    l_clay: float | None
    l_total: float
    grad_norm_pos: float
    grad_norm_mat: float
    branch_norms: dict = field(default_factory=dict)

    def row(self) -> list[str]:
        fmt = lambda x: "" if x is None else repr(float(x))  # noqa: E731
        return [
            str(self.iteration),
            fmt(self.l_rgb),
            fmt(self.l_clay),
            fmt(self.l_total),
            fmt(self.grad_norm_pos),
            fmt(self.grad_norm_mat),
        ]


def write_log(path, log: list[LossReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for report in log:
            writer.writerow(report.row())


def read_log(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


_SCENE_FIELDS = (
    "position",
    "tangents",
    "log_scale",
    "opacity_logit",
    "albedo_logit",
    "metallic_logit",
    "roughness_logit",
    "clay_logit",
    "indirect_sh",
)


@dataclass
class TrainState:
    scene: GaussianScene
    env_base: torch.Tensor
    env: EnvironmentMap
    optimizer: torch.optim.Adam
    config: TrainConfig
    t: int = 0
    log: list = field(default_factory=list)

    @classmethod
    def create(cls, scene: GaussianScene, env: EnvironmentMap, config: TrainConfig) -> "TrainState":
        dtype = config.torch_dtype
        scene = scene.clone().to(dtype).requires_grad_()
        base = env.base.detach().clone().to(dtype).requires_grad_(config.learn_env)
        static = EnvironmentMap(base.detach(), env.prefiltered.detach().to(dtype), env.brdf_lut.to(dtype))
        groups = []
        for name in _SCENE_FIELDS:
            lr = config.lr_position if name == "position" else config.lr
            groups.append({"params": [getattr(scene, name)], "lr": lr, "name": name})
        if config.learn_env:
            groups.append({"params": [base], "lr": config.lr_env, "name": "env"})
        optimizer = torch.optim.Adam(groups, betas=(0.9, 0.999), eps=1e-15)
        return cls(scene=scene, env_base=base, env=static, optimizer=optimizer, config=config)

    def current_env(self) -> EnvironmentMap:
        if not self.config.learn_env:
            return self.env
        return with_base(self.env, self.env_base)

    def final_env(self) -> EnvironmentMap:
        with torch.no_grad():
            return with_base(self.env, self.env_base.detach().clone())


def position_lr(config: TrainConfig, t: int) -> float:
    """Exponential decay from ``lr_position`` to ``lr_position_final`` over ``t_total``."""
    if config.t_total <= 0:
        return config.lr_position
    frac = min(max(t / config.t_total, 0.0), 1.0)
    return math.exp((1 - frac) * math.log(config.lr_position) + frac * math.log(config.lr_position_final))


def adam_step(state: TrainState, grads: SplatGradients) -> None:
    """Apply one Adam update with ``grads`` and restore the parameter invariants.

    Raises :class:`TrainingError` naming the first parameter with a non-finite gradient.
    """
    named = {
        "position": grads.position,
        "tangents": grads.tangents,
        "log_scale": grads.log_scale,
        "opacity_logit": grads.opacity_logit,
        "albedo_logit": grads.albedo_logit,
        "metallic_logit": grads.metallic_logit,
        "roughness_logit": grads.roughness_logit,
        "clay_logit": grads.clay_logit,
        "indirect_sh": grads.indirect_sh,
        "env": grads.env,
    }
    for name, g in named.items():
        if g is not None and not bool(torch.isfinite(g).all()):
            raise TrainingError(f"non-finite gradient for parameter {name!r} at iteration {state.t}")
    for group in state.optimizer.param_groups:
        param = group["params"][0]
        g = named[group["name"]]
        param.grad = torch.zeros_like(param) if g is None else g.detach().to(param.dtype)
        if group["name"] == "position":
            group["lr"] = position_lr(state.config, state.t)
    state.optimizer.step()
    with torch.no_grad():
        t_u, t_v = orthonormal_frame(state.scene.tangents)
        state.scene.tangents.copy_(torch.stack((t_u, t_v), dim=1))
        if state.config.learn_env:
            state.env_base.clamp_(min=0.0)


def view_order(n_views: int, n_steps: int, seed: int) -> list[int]:
    """Round-robin over seeded per-epoch permutations of the views."""
    g = torch.Generator().manual_seed(seed)
    order: list[int] = []
    while len(order) < n_steps:
        order.extend(torch.randperm(n_views, generator=g).tolist())
    return order[:n_steps]


def _norm(*tensors) -> float:
    total = sum(float((t.detach().double() ** 2).sum()) for t in tensors if t is not None)
    return math.sqrt(total)


def forward_losses(state: TrainState, view: TrainView):
    """Both branch losses for one view at the current step; returns
    ``(l_rgb, l_clay or None, gbuffer, env)``."""
    cfg = state.config
    variant = get_variant(cfg.variant)
    clay_phase = variant.clay and state.t < cfg.t_clay
    scene = state.scene
    env = state.current_env()
    gbuffer = render_gbuffer(scene, view.camera)
    spec_normal = None
    if clay_phase and variant.smooth:
        spec_normal = smooth_normal(gbuffer.normal, state.t, cfg.t_clay)
    vis = visibility_map(gbuffer, scene.detach())
    # targets are display-range images, so saturate the HDR render the same way
    image = shade(gbuffer, env, vis=vis, specular_normal=spec_normal).clamp(0.0, 1.0)
    dtype = image.dtype
    mask = view.mask.to(dtype) if (cfg.masked and view.mask is not None) else None
    l_rgb = rgb_loss(image, view.rgb.to(dtype), mask)
    if mask is not None:
        l_rgb = l_rgb + mask_loss(gbuffer.alpha, mask)
    l_clay = None
    if clay_phase:
        background = environment_background(env, view.camera).detach()
        clay_image = render_clay(scene, view.camera, background=background, gbuffer=gbuffer).clamp(0.0, 1.0)
        l_clay = clay_loss(clay_image, view.clay.to(dtype), cfg.lambda_dssim, mask)
    return l_rgb, l_clay, gbuffer, env


def step_gradients(state: TrainState, view: TrainView):
    """Routed gradients for one view at the current step; returns
    ``(merged, l_rgb, l_clay or None, branch_norms)``."""
    cfg = state.config
    variant = get_variant(cfg.variant)
    l_rgb, l_clay, gbuffer, _ = forward_losses(state, view)
    env_param = state.env_base if cfg.learn_env else None
    if l_clay is None:
        merged = scene_gradients(l_rgb, state.scene, gbuffer, env_param)
        branch = {}
    else:
        g_rgb = scene_gradients(l_rgb, state.scene, gbuffer, env_param, retain_graph=True)
        g_clay = scene_gradients(l_clay, state.scene, gbuffer, env_param)
        merged = route_gradients(g_rgb, g_clay, variant, state.t, cfg.t_clay)
        branch = {"rgb_pos": _norm(g_rgb.position), "clay_pos": _norm(g_clay.position)}
    return merged, l_rgb, l_clay, branch


def train_step(state: TrainState, view: TrainView) -> LossReport:
    cfg = state.config
    merged, l_rgb, l_clay, branch = step_gradients(state, view)
    rgb_value = float(l_rgb.detach())
    clay_value = None if l_clay is None else float(l_clay.detach())
    total = rgb_value if clay_value is None else rgb_value + cfg.lambda_clay * clay_value
    report = LossReport(
        iteration=state.t,
        l_rgb=rgb_value,
        l_clay=clay_value,
        l_total=total,
        grad_norm_pos=_norm(merged.position),
        grad_norm_mat=_norm(merged.albedo_logit, merged.metallic_logit, merged.roughness_logit),
        branch_norms=branch,
    )
    adam_step(state, merged)
    state.t += 1
    return report


@dataclass
class TrainResult:
    scene: GaussianScene
    env: EnvironmentMap
    log: list
    state: TrainState | None = None


def train(
    scene_init: GaussianScene,
    views: list[TrainView],
    env_init: EnvironmentMap,
    config: TrainConfig,
    log_path=None,
    callback=None,
) -> TrainResult:
    """Optimize ``scene_init`` (and the environment when ``config.learn_env``) against ``views``.

    ``callback(state, report)`` runs after every step. Raises :class:`TrainingError` on a
    non-finite gradient or when ``L_rgb`` stays above 10x its first value (floored at
    ``DIVERGENCE_FLOOR``) for 500 steps.
    """
    if not views:
        raise ValueError("training needs at least one view")
    variant = get_variant(config.variant)
    steps = config.last_iteration
    if steps == 0:
        return TrainResult(scene=scene_init.clone(), env=env_init, log=[])
    if variant.clay and min(config.t_clay, steps) > 0 and any(v.clay is None for v in views):
        raise ValueError("the clay phase needs a clay target on every view")
    torch.manual_seed(config.seed)
    state = TrainState.create(scene_init, env_init, config)
    order = view_order(len(views), steps, config.seed)
    first = None
    streak = 0
    for idx in order:
        report = train_step(state, views[idx])
        state.log.append(report)
        if first is None:
            first = report.l_rgb
        streak = streak + 1 if report.l_rgb > DIVERGENCE_FACTOR * max(first, DIVERGENCE_FLOOR) else 0
        if streak >= DIVERGENCE_PATIENCE:
            raise TrainingError(
                f"diverged: L_rgb above {DIVERGENCE_FACTOR:g}x its initial value for {streak} iterations"
            )
        if callback is not None:
            callback(state, report)
    if log_path is not None:
        write_log(log_path, state.log)
    return TrainResult(scene=state.scene.detach().clone(), env=state.final_env(), log=state.log, state=state)
