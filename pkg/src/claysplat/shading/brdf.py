"""GGX microfacet terms, importance sampling and the split-sum BRDF lookup table."""

from __future__ import annotations

import math
from functools import lru_cache

import torch

from ..scene import dot3, normalize

MIN_ROUGHNESS = 0.03
DIELECTRIC_F0 = 0.04
LUT_SAMPLES = 1024


def _alpha(roughness):
    return roughness * roughness


def ggx_d(normal, half, roughness):
    """GGX normal distribution with ``alpha = roughness**2``."""
    a2 = _alpha(roughness) ** 2
    n_h = dot3(normal, half)
    denom = n_h * n_h * (a2 - 1.0) + 1.0
    return a2 / (math.pi * denom * denom)


def smith_lambda(cos_theta, roughness):
    c2 = (cos_theta * cos_theta).clamp_min(1e-12)
    tan2 = (1.0 - c2).clamp_min(0.0) / c2
    return (torch.sqrt(1.0 + _alpha(roughness) ** 2 * tan2) - 1.0) / 2.0


def smith_g(normal, w_i, w_o, roughness):
    """Height-correlated Smith masking-shadowing ``1 / (1 + Lambda(w_i) + Lambda(w_o))``."""
    return 1.0 / (1.0 + smith_lambda(dot3(normal, w_i), roughness) + smith_lambda(dot3(normal, w_o), roughness))


def fresnel_schlick(f0, cos_theta):
    """Schlick Fresnel. ``f0`` may carry one trailing color axis more than ``cos_theta``."""
    f0 = torch.as_tensor(f0, dtype=torch.float64) if not torch.is_tensor(f0) else f0
    cos_theta = torch.as_tensor(cos_theta, dtype=f0.dtype)
    weight = (1.0 - cos_theta) ** 5
    if f0.ndim > cos_theta.ndim:
        weight = weight[..., None]
    return f0 + (1.0 - f0) * weight


def specular_f0(albedo, metallic):
    """Metallic-workflow base reflectance ``0.04 (1 - m) + albedo m``."""
    m = metallic[..., None]
    return DIELECTRIC_F0 * (1.0 - m) + albedo * m


def reflect(incident, normal):
    return incident - 2.0 * dot3(incident, normal)[..., None] * normal


def dominant_direction(normal, reflected, roughness):
    """Prefiltered-lookup direction: the mirror direction bent toward the normal as the lobe widens.

    Uses the lerp factor ``(1 - a) (sqrt(1 - a) + a)`` with ``a = roughness**2``; it is 1 for a
    mirror and 0 at full roughness.
    """
    a = _alpha(roughness)[..., None]
    f = (1.0 - a) * (torch.sqrt((1.0 - a).clamp_min(0.0)) + a)
    return normalize(normal * (1.0 - f) + reflected * f)


def hammersley(n: int, dtype=torch.float64) -> torch.Tensor:
    """``(n, 2)`` Hammersley points (i/n, base-2 radical inverse of i)."""
    i = torch.arange(n, dtype=torch.int64)
    bits = i.clone()
    bits = ((bits << 16) | (bits >> 16)) & 0xFFFFFFFF
    bits = ((bits & 0x55555555) << 1) | ((bits & 0xAAAAAAAA) >> 1)
    bits = ((bits & 0x33333333) << 2) | ((bits & 0xCCCCCCCC) >> 2)
    bits = ((bits & 0x0F0F0F0F) << 4) | ((bits & 0xF0F0F0F0) >> 4)
    bits = ((bits & 0x00FF00FF) << 8) | ((bits & 0xFF00FF00) >> 8)
    return torch.stack((i.to(dtype) / n, bits.to(dtype) / 2.0**32), dim=1)


def tangent_basis(normal):
    """Two unit vectors completing ``normal`` to a right-handed frame."""
    up = torch.zeros_like(normal)
    use_z = torch.abs(normal[..., 2]) < 0.999
    up[..., 2] = use_z.to(normal.dtype)
    up[..., 0] = (~use_z).to(normal.dtype)
    tangent = normalize(torch.cross(up, normal, dim=-1))
    bitangent = torch.cross(normal, tangent, dim=-1)
    return tangent, bitangent


def sample_ggx_half(xi, normal, roughness):
    """Map uniform ``xi (..., 2)`` to GGX-distributed half vectors around ``normal``.

    The density of the returned vector is ``D(h) (n . h)``.
    """
    a = _alpha(torch.as_tensor(roughness, dtype=xi.dtype))
    phi = 2.0 * math.pi * xi[..., 0]
    cos_t = torch.sqrt((1.0 - xi[..., 1]) / (1.0 + (a * a - 1.0) * xi[..., 1]))
    sin_t = torch.sqrt((1.0 - cos_t * cos_t).clamp_min(0.0))
    local = torch.stack((torch.cos(phi) * sin_t, torch.sin(phi) * sin_t, cos_t), dim=-1)
    tangent, bitangent = tangent_basis(normal)
    return local[..., 0:1] * tangent + local[..., 1:2] * bitangent + local[..., 2:3] * normal


def integrate_brdf(cos_v, roughness, xi) -> tuple[torch.Tensor, torch.Tensor]:
    """Split-sum scale/bias ``(A, B)`` by GGX importance sampling with points ``xi (S, 2)``.

    ``cos_v`` and ``roughness`` broadcast together; samples run along a new trailing axis.
    """
    cos_v = torch.as_tensor(cos_v, dtype=xi.dtype).clamp(1e-4, 1.0)
    roughness = torch.as_tensor(roughness, dtype=xi.dtype)
    cos_v, roughness = torch.broadcast_tensors(cos_v, roughness)
    view = torch.stack((torch.sqrt(1.0 - cos_v * cos_v), torch.zeros_like(cos_v), cos_v), dim=-1)
    n = torch.zeros_like(view)
    n[..., 2] = 1.0
    h = sample_ggx_half(xi, n[..., None, :], roughness[..., None])
    v = view[..., None, :]
    v_h = dot3(v, h)
    l_dir = 2.0 * v_h[..., None] * h - v
    n_l = l_dir[..., 2]
    n_h = h[..., 2].clamp_min(1e-12)
    valid = n_l > 0
    g = smith_g(n[..., None, :], l_dir, v, roughness[..., None])
    g_vis = torch.where(valid, g * v_h.clamp_min(0.0) / (n_h * cos_v[..., None]), 0.0)
    fc = (1.0 - v_h.clamp(0.0, 1.0)) ** 5
    a = ((1.0 - fc) * g_vis).mean(-1)
    b = (fc * g_vis).mean(-1)
    return a, b


def bake_brdf_lut(resolution: int = 32, samples: int = LUT_SAMPLES, dtype=torch.float64) -> torch.Tensor:
    """``(R, R, 2)`` table of ``(A, B)`` over ``cos_theta_v`` (axis 0) and roughness (axis 1).

    Texel ``i`` sits at ``i / (R - 1)`` on each axis (endpoints included).
    """
    if resolution < 16:
        raise ValueError("LUT resolution must be at least 16")
    grid = torch.linspace(0.0, 1.0, resolution, dtype=torch.float64)
    xi = hammersley(samples)
    rows = []
    for c in grid:
        a, b = integrate_brdf(c.expand(resolution), grid, xi)
        rows.append(torch.stack((a, b), dim=-1))
    return torch.stack(rows).to(dtype)


@lru_cache(maxsize=8)
def _cached_lut(resolution: int, samples: int) -> torch.Tensor:
    return bake_brdf_lut(resolution, samples)


def default_lut(resolution: int = 32, samples: int = LUT_SAMPLES, dtype=torch.float64) -> torch.Tensor:
    return _cached_lut(resolution, samples).to(dtype)


def lookup_lut(lut: torch.Tensor, cos_v, roughness):
    """Bilinear ``(A, B)`` lookup, coordinates clamped to ``[0, 1]``. Returns ``(..., 2)``."""
    res = lut.shape[0]
    x = cos_v.clamp(0.0, 1.0) * (res - 1)
    y = roughness.clamp(0.0, 1.0) * (res - 1)
    x0 = torch.floor(x.detach()).clamp(0, res - 2).long()
    y0 = torch.floor(y.detach()).clamp(0, res - 2).long()
    fx = (x - x0.to(x.dtype))[..., None]
    fy = (y - y0.to(y.dtype))[..., None]
    v00 = lut[x0, y0]
    v01 = lut[x0, y0 + 1]
    v10 = lut[x0 + 1, y0]
    v11 = lut[x0 + 1, y0 + 1]
    return (v00 * (1 - fy) + v01 * fy) * (1 - fx) + (v10 * (1 - fy) + v11 * fy) * fx
