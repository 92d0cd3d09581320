"""Deferred physically-based shading of a G-buffer under an environment map.

Per covered pixel the outgoing radiance is

    (1 - S) diffuse + S (L_dir * vis + L_ind * (1 - vis)),    S = F0 A + B

with ``(A, B)`` from the split-sum LUT, ``L_dir`` from the roughness-prefiltered map along
the dominant specular direction (the reflected direction bent toward the normal for rough
lobes), ``L_ind`` the composited SH indirect light and ``vis`` a binary
visibility from marching the reflected ray through the Gaussian opacity field. The result
is composited over the environment background by coverage.
"""

from __future__ import annotations

import math

import torch

from ..scene import EnvironmentMap, GaussianScene, cross3, dot3, normalize
from ..sh import eval_sh
from ..splat import ALPHA_EPS, CUTOFF_SQ, NEAR_PLANE, PARALLEL_EPS, GBuffer
from .brdf import MIN_ROUGHNESS, dominant_direction, lookup_lut, reflect, specular_f0
from .envlight import irradiance, irradiance_sh, latlong_lookup, levels_lookup

VIS_STEPS = 64
VIS_THRESHOLD = 0.5


def eval_diffuse(albedo, metallic, normal, irradiance_coeffs):
    """Lambertian term ``albedo / pi * (1 - metallic) * E(normal)``."""
    return albedo / math.pi * (1.0 - metallic)[..., None] * irradiance(irradiance_coeffs, normal)


def eval_specular_direct(normal, view, albedo, metallic, roughness, env: EnvironmentMap):
    """Split-sum specular with direct (environment) light only. ``view`` points to the camera."""
    rough = roughness.clamp(MIN_ROUGHNESS, 1.0)
    cos_v = dot3(normal, view).clamp(0.0, 1.0)
    ab = lookup_lut(env.brdf_lut, cos_v, rough)
    f0 = specular_f0(albedo, metallic)
    light = levels_lookup(env.prefiltered, dominant_direction(normal, reflect(-view, normal), rough), rough)
    return (f0 * ab[..., 0:1] + ab[..., 1:2]) * light


def eval_indirect(coeffs, reflect_dir):
    """Indirect radiance from composited SH ``(..., 3, 9)``, clamped at zero."""
    return eval_sh(coeffs, reflect_dir).clamp_min(0.0)


def visibility(points, dirs, scene: GaussianScene, radius: float | None = None, chunk: int = 4096):
    """Binary visibility ``(N,)`` of rays ``points + t dirs``.

    The ray is marched over ``VIS_STEPS`` steps of ``radius / 32``; every disk whose 3-sigma
    support the ray crosses inside ``[step, VIS_STEPS * step]`` attenuates transmittance by
    ``1 - alpha * G``. Visible (1) while transmittance stays above 0.5.
    """
    with torch.no_grad():
        n = points.shape[0]
        out = torch.ones(n, dtype=points.dtype)
        if len(scene) == 0 or n == 0:
            return out
        radius = scene.radius() if radius is None else radius
        step = radius / 32.0
        t_u, t_v = scene.frame()
        normal = normalize(cross3(t_u, t_v))
        scale, opacity = scene.scale(), scene.opacity()
        # ray/plane terms as matrix products over (ray, disk) pairs
        p_n = dot3(scene.position, normal)
        p_u = dot3(scene.position, t_u)
        p_v = dot3(scene.position, t_v)
        for s in range(0, n, chunk):
            o = points[s : s + chunk]
            d = dirs[s : s + chunk]
            denom = d @ normal.T
            facing = torch.abs(denom) >= PARALLEL_EPS
            t = (p_n - o @ normal.T) / torch.where(facing, denom, torch.ones_like(denom))
            u = (o @ t_u.T + t * (d @ t_u.T) - p_u) / scale[:, 0]
            v = (o @ t_v.T + t * (d @ t_v.T) - p_v) / scale[:, 1]
            q = u * u + v * v
            hit = facing & (t > NEAR_PLANE) & (t >= step) & (t <= VIS_STEPS * step) & (q <= CUTOFF_SQ)
            # clamp before exp: far misses would otherwise underflow into slow denormals
            a = torch.where(hit, opacity * torch.exp(-q.clamp(max=CUTOFF_SQ) / 2), 0.0)
            trans = torch.prod(1.0 - a, dim=1)
            out[s : s + chunk] = (trans > VIS_THRESHOLD).to(points.dtype)
        return out


def _unpremultiply(gbuffer: GBuffer):
    alpha = gbuffer.alpha
    covered = alpha > ALPHA_EPS
    safe = torch.where(covered, alpha, torch.ones_like(alpha))
    up = torch.zeros_like(gbuffer.normal)
    up[..., 2] = 1.0
    normal = torch.where(covered[..., None], gbuffer.normal, up)
    return covered, gbuffer.albedo / safe[..., None], gbuffer.metallic / safe, gbuffer.roughness / safe, normal


def visibility_map(gbuffer: GBuffer, scene: GaussianScene, normal=None) -> torch.Tensor:
    """Per-pixel visibility of the reflected ray from each covered surface point."""
    with torch.no_grad():
        covered, _, _, _, n = _unpremultiply(gbuffer)
        if normal is not None:
            n = torch.where(covered[..., None], normal, n)
        view = -gbuffer.ray_dirs
        refl = reflect(-view, n)
        points = gbuffer.ray_origin + gbuffer.depth[..., None] * gbuffer.ray_dirs
        vis = torch.ones_like(gbuffer.alpha)
        if bool(covered.any()):
            vis[covered] = visibility(points[covered], refl[covered], scene)
        return vis


def shade(
    gbuffer: GBuffer,
    env: EnvironmentMap,
    scene: GaussianScene | None = None,
    vis: torch.Tensor | None = None,
    specular_normal: torch.Tensor | None = None,
    background: bool = True,
) -> torch.Tensor:
    """Shaded linear RGB image ``(H, W, 3)``.

    ``vis`` overrides the visibility map (computed from ``scene`` when omitted; all visible
    when both are omitted). ``specular_normal`` replaces the composited normal in the
    split-sum specular term only.
    """
    covered, albedo, metallic, roughness, normal = _unpremultiply(gbuffer)
    view = -gbuffer.ray_dirs
    n_spec = normal if specular_normal is None else torch.where(covered[..., None], specular_normal, normal)
    if vis is None:
        vis = visibility_map(gbuffer, scene, n_spec) if scene is not None else torch.ones_like(gbuffer.alpha)

    diffuse = eval_diffuse(albedo, metallic, normal, irradiance_sh(env.base))
    rough = roughness.clamp(MIN_ROUGHNESS, 1.0)
    cos_v = dot3(n_spec, view).clamp(0.0, 1.0)
    ab = lookup_lut(env.brdf_lut, cos_v, rough)
    refl = reflect(-view, n_spec)
    direct = levels_lookup(env.prefiltered, dominant_direction(n_spec, refl, rough), rough)
    indirect = eval_indirect(gbuffer.indirect_sh, refl)
    light = direct * vis[..., None] + indirect * (1.0 - vis)[..., None]
    f0 = specular_f0(albedo, metallic)
    spec_albedo = f0 * ab[..., 0:1] + ab[..., 1:2]
    specular = spec_albedo * light
    # energy the specular lobe reflects is not available to the diffuse layer
    diffuse = diffuse * (1.0 - spec_albedo)

    alpha = gbuffer.alpha[..., None]
    fg = torch.where(covered[..., None], alpha * (diffuse + specular), torch.zeros_like(diffuse))
    if not background:
        return fg
    return fg + (1.0 - alpha) * latlong_lookup(env.base, gbuffer.ray_dirs)


def shade_backward(gbuffer: GBuffer, env: EnvironmentMap, upstream: torch.Tensor, vis: torch.Tensor, image=None):
    """Gradients of ``sum(upstream * shade(...))`` for the G-buffer channels and the env base.

    ``vis`` is held constant. G-buffer channel tensors and ``env.base`` must require grad
    (render with a grad-enabled scene, or call :func:`detached_inputs` first). Returns a
    dict keyed by channel name plus ``"env"``.
    """
    if image is None:
        image = shade(gbuffer, env, vis=vis)
    channels = {
        "albedo": gbuffer.albedo,
        "metallic": gbuffer.metallic,
        "roughness": gbuffer.roughness,
        "normal": gbuffer.normal,
        "alpha": gbuffer.alpha,
        "indirect_sh": gbuffer.indirect_sh,
        "env": env.base,
    }
    names = [k for k, v in channels.items() if v.requires_grad]
    grads = torch.autograd.grad(image, [channels[k] for k in names], upstream, allow_unused=True, retain_graph=True)
    out = {k: torch.zeros_like(v) for k, v in channels.items()}
    for k, g in zip(names, grads):
        if g is not None:
            out[k] = g
    return out
