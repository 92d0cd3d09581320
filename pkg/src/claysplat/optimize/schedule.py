"""Two-phase schedule: the normal gradient ramp and per-variant gradient routing."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from ..splat import SplatGradients


def lambda_smooth(t: int, t_clay: int) -> float:
    """Fraction ``min(t / T_clay, 1)`` of the reflective normal gradient admitted at step ``t``."""
    if t_clay <= 0:
        return 1.0
    return min(t / t_clay, 1.0)


class _ScaledGradient(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, factor):
        ctx.factor = factor
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad):
        return grad * ctx.factor, None


def smooth_normal(normal: torch.Tensor, t: int, t_clay: int) -> torch.Tensor:
    """Identity on values; scales the incoming gradient by ``lambda_smooth(t, t_clay)``.

    This is ``(1 - l) sg(N) + l N`` evaluated without the rounding of the sum.
    """
    return _ScaledGradient.apply(normal, lambda_smooth(t, t_clay))


# Geometry fields that a variant may cut off from the reflective branch.
GEOMETRY_FIELDS = ("position", "tangents_geometry", "log_scale", "tangents_normal")
APPEARANCE_FIELDS = ("albedo_logit", "metallic_logit", "roughness_logit", "indirect_sh", "env")


@dataclass(frozen=True)
class Variant:
    name: str
    detach: frozenset
    smooth: bool
    clay: bool = True


VARIANTS = {
    "noclay": Variant("noclay", frozenset(), smooth=False, clay=False),
    "none": Variant("none", frozenset(), smooth=True),
    "p": Variant("p", frozenset({"position"}), smooth=True),
    "ptr": Variant("ptr", frozenset({"position", "tangents_geometry", "log_scale"}), smooth=False),
    "ptr+smooth": Variant("ptr+smooth", frozenset({"position", "tangents_geometry", "log_scale"}), smooth=True),
    "ptrn": Variant(
        "ptrn", frozenset({"position", "tangents_geometry", "log_scale", "tangents_normal"}), smooth=False
    ),
}

_ALIASES = {"p,t,r": "ptr", "p,t,r+smooth": "ptr+smooth", "p,t,r,n": "ptrn", "ptr+n_smooth": "ptr+smooth"}


def get_variant(name: str) -> Variant:
    key = name.strip().lower()
    key = _ALIASES.get(key, key)
    if key not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}")
    return VARIANTS[key]


def route_gradients(rgb: SplatGradients, clay: SplatGradients, variant, t: int, t_clay: int) -> SplatGradients:
    """Merge branch gradients for step ``t``.

    During the clay phase detached geometry fields take clay gradients only, the other
    geometry fields and opacity take both, appearance fields take reflective gradients
    only and the clay color takes clay gradients only. Afterwards the result is ``rgb``.
    """
    variant = get_variant(variant) if isinstance(variant, str) else variant
    if t >= t_clay or not variant.clay:
        return rgb
    merged = {}
    for name, g_rgb in rgb.items():
        g_clay = getattr(clay, name)
        if name in APPEARANCE_FIELDS:
            merged[name] = g_rgb
        elif name == "clay_logit":
            merged[name] = g_clay
        elif name in variant.detach:
            merged[name] = g_clay
        elif g_rgb is None or g_clay is None:
            merged[name] = g_rgb if g_clay is None else g_clay
        else:
            merged[name] = g_rgb + g_clay
    return SplatGradients(**merged)
