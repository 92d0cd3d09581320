"""Lat-long environment lighting: lookups, roughness prefiltering and SH irradiance.

Directions use a z-up lat-long layout: row ``i`` spans polar angle ``[i, i+1] * pi / H``
and column ``j`` spans azimuth ``[j, j+1] * 2 pi / W - pi``.
"""

from __future__ import annotations

import math
from functools import lru_cache

import torch

from .. import sh
from ..scene import EnvironmentMap, dot3
from .brdf import default_lut, hammersley, sample_ggx_half

PREFILTER_SAMPLES = 512


def texel_directions(height: int, width: int, dtype=torch.float64) -> torch.Tensor:
    """Unit directions ``(H, W, 3)`` through texel centers."""
    theta = (torch.arange(height, dtype=torch.float64) + 0.5) * math.pi / height
    phi = (torch.arange(width, dtype=torch.float64) + 0.5) * 2 * math.pi / width - math.pi
    th, ph = torch.meshgrid(theta, phi, indexing="ij")
    d = torch.stack((torch.sin(th) * torch.cos(ph), torch.sin(th) * torch.sin(ph), torch.cos(th)), dim=-1)
    return d.to(dtype)


def texel_solid_angles(height: int, width: int, dtype=torch.float64) -> torch.Tensor:
    th = torch.linspace(0.0, math.pi, height + 1, dtype=torch.float64)
    band = torch.cos(th[:-1]) - torch.cos(th[1:])
    return (band[:, None] * (2 * math.pi / width)).expand(height, width).to(dtype)


def _bilinear_taps(dirs: torch.Tensor, height: int, width: int):
    """Flat texel indices ``(N, 4)`` and weights ``(N, 4)`` for bilinear lat-long lookups."""
    rho = torch.sqrt((dirs[..., 0] ** 2 + dirs[..., 1] ** 2).clamp_min(1e-24))
    theta = torch.atan2(rho, dirs[..., 2])
    phi = torch.atan2(dirs[..., 1], dirs[..., 0])
    fy = theta / math.pi * height - 0.5
    fx = (phi + math.pi) / (2 * math.pi) * width - 0.5
    y0 = torch.floor(fy.detach())
    x0 = torch.floor(fx.detach())
    wy = fy - y0
    wx = fx - x0
    y0 = y0.long()
    x0 = x0.long()
    ya = y0.clamp(0, height - 1)
    yb = (y0 + 1).clamp(0, height - 1)
    xa = torch.remainder(x0, width)
    xb = torch.remainder(x0 + 1, width)
    idx = torch.stack((ya * width + xa, ya * width + xb, yb * width + xa, yb * width + xb), dim=-1)
    w = torch.stack(((1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx), wy * wx), dim=-1)
    return idx, w


def latlong_lookup(image: torch.Tensor, dirs: torch.Tensor) -> torch.Tensor:
    """Bilinear radiance of an ``(H, W, C)`` map along unit ``dirs (..., 3)`` -> ``(..., C)``."""
    h, w, c = image.shape
    idx, wt = _bilinear_taps(dirs, h, w)
    flat = image.reshape(h * w, c)
    return (flat[idx] * wt[..., None]).sum(-2)


def levels_lookup(levels: torch.Tensor, dirs: torch.Tensor, roughness: torch.Tensor) -> torch.Tensor:
    """Trilinear lookup in a prefiltered stack ``(L, H, W, C)``: bilinear within each level,
    linear across levels at ``roughness * (L - 1)``."""
    n_levels, h, w, c = levels.shape
    idx, wt = _bilinear_taps(dirs, h, w)
    level = roughness.clamp(0.0, 1.0) * (n_levels - 1)
    l0 = torch.floor(level.detach()).clamp(0, n_levels - 2).long()
    f = (level - l0.to(level.dtype))[..., None]
    flat = levels.reshape(n_levels * h * w, c)
    lo = (flat[idx + (l0 * h * w)[..., None]] * wt[..., None]).sum(-2)
    hi = (flat[idx + ((l0 + 1) * h * w)[..., None]] * wt[..., None]).sum(-2)
    return lo * (1 - f) + hi * f


def prefilter_matrix(height: int, width: int, roughness: float, samples: int = PREFILTER_SAMPLES) -> torch.Tensor:
    """Linear operator ``(H*W, H*W)`` that GGX-convolves a base map for one roughness.

    Uses the usual ``n = v = r`` assumption: for each output texel direction ``r`` the
    half vectors are GGX importance-sampled (Hammersley), reflected about ``r`` and
    weighted by ``n . l``.
    """
    r = texel_directions(height, width).reshape(-1, 3)
    xi = hammersley(samples)
    n_tex = r.shape[0]
    h = sample_ggx_half(xi[None], r[:, None, :], torch.tensor(roughness, dtype=torch.float64))
    r_h = dot3(r[:, None, :], h)
    l_dir = 2.0 * r_h[..., None] * h - r[:, None, :]
    n_l = dot3(r[:, None, :], l_dir)
    weight = n_l.clamp_min(0.0)
    idx, bw = _bilinear_taps(l_dir, height, width)
    rows = torch.arange(n_tex)[:, None, None].expand_as(idx)
    vals = bw * weight[..., None]
    mat = torch.zeros(n_tex * n_tex, dtype=torch.float64)
    mat.index_add_(0, (rows * n_tex + idx).reshape(-1), vals.reshape(-1))
    mat = mat.reshape(n_tex, n_tex)
    return mat / weight.sum(1, keepdim=True)


@lru_cache(maxsize=16)
def _prefilter_operators(height: int, width: int, n_levels: int, samples: int) -> torch.Tensor:
    mats = [prefilter_matrix(height, width, k / (n_levels - 1), samples) for k in range(1, n_levels)]
    return torch.stack(mats)


def prefilter_env(base: torch.Tensor, n_levels: int = 6, samples: int = PREFILTER_SAMPLES) -> torch.Tensor:
    """Roughness-prefiltered stack ``(n_levels, H, W, C)``; level 0 is ``base`` itself and
    level ``k`` is convolved for roughness ``k / (n_levels - 1)``. Differentiable in ``base``."""
    if n_levels < 2:
        raise ValueError("need at least 2 prefiltered levels")
    h, w, c = base.shape
    ops = _prefilter_operators(h, w, n_levels, samples).to(base.dtype)
    flat = base.reshape(h * w, c)
    rest = torch.einsum("lij,jc->lic", ops, flat).reshape(n_levels - 1, h, w, c)
    return torch.cat((base[None], rest), dim=0)


def build_environment(
    base, n_levels: int = 6, lut_resolution: int = 32, samples: int = PREFILTER_SAMPLES
) -> EnvironmentMap:
    base = torch.as_tensor(base)
    if not base.is_floating_point():
        base = base.to(torch.float64)
    return EnvironmentMap(
        base=base,
        prefiltered=prefilter_env(base, n_levels, samples),
        brdf_lut=default_lut(lut_resolution, dtype=base.dtype),
    )


def with_base(env: EnvironmentMap, base: torch.Tensor, samples: int = PREFILTER_SAMPLES) -> EnvironmentMap:
    """The same environment with a new (possibly differentiable) base map."""
    return EnvironmentMap(base=base, prefiltered=prefilter_env(base, env.n_levels, samples), brdf_lut=env.brdf_lut)


def irradiance_sh(base: torch.Tensor) -> torch.Tensor:
    """Irradiance SH coefficients ``(3, 9)`` of a lat-long radiance map."""
    return sh.irradiance_coeffs(sh.project_latlong(base))


def irradiance(coeffs: torch.Tensor, normal: torch.Tensor) -> torch.Tensor:
    """Irradiance ``E(n)`` ``(..., 3)`` from irradiance SH coefficients."""
    return sh.eval_sh(coeffs, normal)


# -- environment presets -------------------------------------------------------------

def constant_env(value=1.0, height=16, width=32, dtype=torch.float64) -> torch.Tensor:
    value = torch.as_tensor(value, dtype=dtype).expand(3) if torch.as_tensor(value).ndim == 0 else torch.as_tensor(value, dtype=dtype)
    return value.expand(height, width, 3).clone()


def lobe_env(lobes, ambient=0.2, height=16, width=32, dtype=torch.float64) -> torch.Tensor:
    """Ambient sky plus von Mises-Fisher shaped bright lobes.

    ``lobes`` is a list of ``(direction, rgb_peak, sharpness)``.
    """
    d = texel_directions(height, width)
    ambient = torch.as_tensor(ambient, dtype=torch.float64)
    img = ambient.expand(height, width, 3).clone() if ambient.ndim else torch.full((height, width, 3), float(ambient), dtype=torch.float64)
    for direction, peak, sharpness in lobes:
        axis = torch.as_tensor(direction, dtype=torch.float64)
        axis = axis / axis.norm()
        falloff = torch.exp(sharpness * (dot3(d, axis) - 1.0))
        img = img + falloff[..., None] * torch.as_tensor(peak, dtype=torch.float64)
    return img.to(dtype)


def three_point_env(height=16, width=32, dtype=torch.float64) -> torch.Tensor:
    """Dim sky with three sharp colored lights (key, fill, rim)."""
    sky = 0.1 + 0.08 * texel_directions(height, width)[..., 2:3].clamp_min(0.0)
    lobes = [
        ((1.0, -0.6, 0.7), (72.0, 69.0, 63.0), 150.0),
        ((-0.9, -0.4, 0.3), (18.0, 22.5, 27.0), 40.0),
        ((-0.2, 1.0, 0.5), (36.0, 33.0, 30.0), 150.0),
    ]
    base = lobe_env(lobes, ambient=0.0, height=height, width=width) + sky
    return base.to(dtype)
