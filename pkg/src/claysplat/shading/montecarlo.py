"""Brute-force Monte-Carlo integrators used to check the fast shading paths.

These evaluate the underlying integrals directly (pseudo-random sampling, no lookup
tables, no prefiltering) and are deliberately slow and simple.
"""

from __future__ import annotations

import math

import torch

from ..scene import dot3
from .brdf import fresnel_schlick, ggx_d, sample_ggx_half, smith_g, specular_f0, tangent_basis
from .envlight import latlong_lookup


def _generator(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(seed)


def sample_cosine_hemisphere(normal, n: int, seed: int = 0):
    """``n`` cosine-distributed unit directions around ``normal (3,)`` -> ``(n, 3)``."""
    xi = torch.rand(n, 2, generator=_generator(seed), dtype=torch.float64)
    r = torch.sqrt(xi[:, 0])
    phi = 2 * math.pi * xi[:, 1]
    local = torch.stack((r * torch.cos(phi), r * torch.sin(phi), torch.sqrt((1 - xi[:, 0]).clamp_min(0))), dim=1)
    t, b = tangent_basis(normal[None])
    return local[:, 0:1] * t + local[:, 1:2] * b + local[:, 2:3] * normal[None]


def ggx_normalization(roughness: float, n: int = 100_000, seed: int = 0) -> float:
    """MC estimate of the hemisphere integral of ``D(h) (n . h)`` (should be 1).

    Half the directions are drawn log-uniformly in ``sin^2 theta`` (resolving narrow lobes)
    and half uniformly over the hemisphere; each sample is weighted by the mixture density.
    The GGX sampling routine is not used.
    """
    g = _generator(seed)
    s_min = 1e-14
    log_range = math.log(1 / s_min)
    u = torch.rand(n, generator=g, dtype=torch.float64)
    narrow = torch.rand(n, generator=g, dtype=torch.float64) < 0.5
    s = torch.where(narrow, s_min ** (1 - u), 1 - u * u)  # sin^2 theta; uniform branch has cos = u
    phi = 2 * math.pi * torch.rand(n, generator=g, dtype=torch.float64)
    cos_t = torch.sqrt(1 - s)
    sin_t = torch.sqrt(s)
    h = torch.stack((sin_t * torch.cos(phi), sin_t * torch.sin(phi), cos_t), dim=1)
    normal = torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64).expand_as(h)
    pdf_narrow = torch.where(s >= s_min, cos_t / (s * log_range * math.pi), 0.0)
    pdf = 0.5 * pdf_narrow + 0.5 / (2 * math.pi)
    rough = torch.tensor(roughness, dtype=torch.float64)
    return float((ggx_d(normal, h, rough) * cos_t / pdf).mean())


def brdf_lut_texel(cos_v: float, roughness: float, n: int = 2**16, seed: int = 0) -> tuple[float, float]:
    """Split-sum ``(A, B)`` for one texel from jittered-stratified GGX half-vector samples.

    ``n`` is rounded down to a square grid of strata. The half vectors come from the
    closed-form inverse CDF ``tan^2 theta = a^2 xi / (1 - xi)`` rather than the quasi-random
    routine used to bake the table.
    """
    g = _generator(seed)
    side = int(math.isqrt(n))
    cells = torch.stack(torch.meshgrid(torch.arange(side), torch.arange(side), indexing="ij"), -1).reshape(-1, 2)
    xi = (cells.to(torch.float64) + torch.rand(side * side, 2, generator=g, dtype=torch.float64)) / side
    a2 = (roughness * roughness) ** 2
    tan2 = a2 * xi[:, 0] / (1 - xi[:, 0])
    cos_h = 1 / torch.sqrt(1 + tan2)
    sin_h = torch.sqrt(tan2) * cos_h
    phi = 2 * math.pi * xi[:, 1]
    h = torch.stack((sin_h * torch.cos(phi), sin_h * torch.sin(phi), cos_h), dim=1)
    v = torch.tensor([math.sqrt(max(0.0, 1 - cos_v * cos_v)), 0.0, cos_v], dtype=torch.float64).expand_as(h)
    v_h = dot3(v, h)
    wi = 2 * v_h[:, None] * h - v
    normal = torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64).expand_as(h)
    rough = torch.tensor(roughness, dtype=torch.float64)
    valid = (wi[:, 2] > 0) & (v_h > 0)
    # f_s cos / pdf with pdf(wi) = D (n.h) / (4 v.h): G (v.h) / ((n.h)(n.v))
    base = torch.where(valid, smith_g(normal, wi, v, rough) * v_h / (cos_h * cos_v), 0.0)
    fc = (1 - v_h.clamp(0, 1)) ** 5
    return float(((1 - fc) * base).mean()), float((fc * base).mean())


def diffuse_radiance(albedo, metallic, normal, env_base, n: int = 100_000, seed: int = 0):
    """Lambertian outgoing radiance ``(3,)`` integrating the environment over the hemisphere."""
    wi = sample_cosine_hemisphere(normal, n, seed)
    mean_l = latlong_lookup(env_base, wi).mean(0)
    return albedo * (1 - metallic) * mean_l


def cosine_average(env_base, direction, n: int = 100_000, seed: int = 0):
    """Cosine-weighted average radiance around ``direction`` (the roughness-1 prefilter limit)."""
    wi = sample_cosine_hemisphere(direction, n, seed)
    return latlong_lookup(env_base, wi).mean(0)


def specular_radiance(normal, view, albedo, metallic, roughness, env_base, n: int = 10_000, seed: int = 0):
    """Full GGX specular integral ``int L f_s cos`` for one shading point, no split-sum."""
    g = _generator(seed)
    xi = torch.rand(n, 2, generator=g, dtype=torch.float64)
    rough = torch.as_tensor(roughness, dtype=torch.float64)
    h = sample_ggx_half(xi, normal[None].expand(n, 3), rough)
    v = view[None].expand(n, 3)
    v_h = dot3(v, h)
    wi = 2 * v_h[:, None] * h - v
    nn = normal[None].expand(n, 3)
    n_l = dot3(nn, wi)
    n_v = float(dot3(normal, view))
    n_h = dot3(nn, h)
    valid = (n_l > 0) & (v_h > 0)
    f0 = specular_f0(torch.as_tensor(albedo, dtype=torch.float64), torch.as_tensor(metallic, dtype=torch.float64))
    fresnel = fresnel_schlick(f0.expand(n, 3), v_h.clamp(0, 1))
    geom = smith_g(nn, wi, v, rough)
    # pdf(wi) = D (n.h) / (4 v.h): estimator L F G (v.h) / ((n.h)(n.v))
    weight = torch.where(valid, geom * v_h / (n_h.clamp_min(1e-12) * n_v), 0.0)
    radiance = latlong_lookup(env_base, wi)
    return (radiance * fresnel * weight[:, None]).mean(0)
