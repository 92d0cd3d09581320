"""Central finite-difference checks of autograd gradients over raw scene parameters."""

import torch

from claysplat.clay import clay_loss, render_clay
from claysplat.optimize.losses import rgb_loss
from claysplat.shading import build_environment, shade, three_point_env
from claysplat.splat import render_gbuffer, scene_gradients

FIELDS = (
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


def small_env():
    return build_environment(three_point_env(8, 16), samples=64)


def pipeline_loss(scene, gbuffer, camera, env, rgb_target, clay_target):
    """Reflective photometric loss plus clay loss, with visibility held at 1."""
    image = shade(gbuffer, env, vis=torch.ones_like(gbuffer.alpha))
    clay = render_clay(scene, camera, gbuffer=gbuffer)
    return rgb_loss(image, rgb_target) + 0.5 * clay_loss(clay, clay_target)


def analytic_gradients(scene, loss_fn, camera):
    """Autograd gradients of ``loss_fn(scene, gbuffer)`` keyed by raw field name."""
    scene = scene.clone().requires_grad_(True)
    gb = render_gbuffer(scene, camera)
    g = scene_gradients(loss_fn(scene, gb), scene, gb)
    out = {name: getattr(g, name) for name in FIELDS if name != "tangents"}
    out["tangents"] = g.tangents
    return out


def numeric_gradient(scene, loss_fn, camera, name, h=1e-6):
    """Central differences of the loss over every entry of field ``name``."""
    base = getattr(scene, name).detach()
    grad = torch.zeros_like(base)
    flat = grad.reshape(-1)
    for i in range(base.numel()):
        values = []
        for sign in (1.0, -1.0):
            x = base.clone()
            x.reshape(-1)[i] += sign * h
            moved = scene.replace(**{name: x})
            with torch.no_grad():
                values.append(float(loss_fn(moved, render_gbuffer(moved, camera))))
        flat[i] = (values[0] - values[1]) / (2 * h)
    return grad


def mismatches(a, b, rel=1e-3, abs_floor=1e-6):
    """Number of entries where ``a`` and ``b`` differ by more than ``max(rel * max(|a|, |b|), abs_floor)``."""
    tol = torch.maximum(rel * torch.maximum(a.abs(), b.abs()), torch.full_like(a, abs_floor))
    return int(((a - b).abs() > tol).sum())


def check_scene(scene, camera, loss_fn, fields=FIELDS):
    """Field name -> number of mismatching entries between autograd and finite differences."""
    grads = analytic_gradients(scene, loss_fn, camera)
    return {name: mismatches(grads[name], numeric_gradient(scene, loss_fn, camera, name)) for name in fields}
