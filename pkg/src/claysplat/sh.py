"""Real spherical harmonics up to degree 2 and their exact integrals over lat-long texels."""

from __future__ import annotations

import math

import torch

K0 = 0.5 / math.sqrt(math.pi)
K1 = math.sqrt(3.0 / (4.0 * math.pi))
K2 = math.sqrt(15.0 / (4.0 * math.pi))
K3 = math.sqrt(5.0 / (16.0 * math.pi))
K4 = math.sqrt(15.0 / (16.0 * math.pi))

# band index of each coefficient, for convolution weights
BANDS = (0, 1, 1, 1, 2, 2, 2, 2, 2)
# cosine-lobe convolution: irradiance E = sum_l A_l L_lm Y_lm
COSINE_LOBE = (math.pi, 2.0 * math.pi / 3.0, math.pi / 4.0)


def sh_basis(dirs: torch.Tensor) -> torch.Tensor:
    """Evaluate the 9 basis functions at unit directions ``(..., 3)`` -> ``(..., 9)``.

    Ordering: Y00, Y1-1 (y), Y10 (z), Y11 (x), Y2-2 (xy), Y2-1 (yz), Y20, Y21 (xz), Y22.
    """
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    return torch.stack(
        (
            torch.full_like(x, K0),
            K1 * y,
            K1 * z,
            K1 * x,
            K2 * x * y,
            K2 * y * z,
            K3 * (3.0 * z * z - 1.0),
            K2 * x * z,
            K4 * (x * x - y * y),
        ),
        dim=-1,
    )


def eval_sh(coeffs: torch.Tensor, dirs: torch.Tensor) -> torch.Tensor:
    """``coeffs (..., C, 9)`` at ``dirs (..., 3)`` -> ``(..., C)``."""
    return (coeffs * sh_basis(dirs)[..., None, :]).sum(-1)


def texel_integrals(height: int, width: int, dtype=torch.float64) -> torch.Tensor:
    """Exact integrals of each basis function over every lat-long texel, ``(9, H, W)``.

    Texel ``(i, j)`` covers polar angle ``[i, i+1] * pi / H`` (z up) and azimuth
    ``[j, j+1] * 2 pi / W - pi``. Projecting a piecewise-constant map with these weights
    is exact, so constant maps project onto the DC term only.
    """
    th = torch.linspace(0.0, math.pi, height + 1, dtype=torch.float64)
    ph = torch.linspace(-math.pi, math.pi, width + 1, dtype=torch.float64)
    t0, t1 = th[:-1, None], th[1:, None]
    p0, p1 = ph[None, :-1], ph[None, 1:]
    c0, c1 = torch.cos(t0), torch.cos(t1)
    s0, s1 = torch.sin(t0), torch.sin(t1)

    # polar integrals with the sin(theta) area element
    i_one = c0 - c1
    i_sin = (t1 - t0) / 2 - (torch.sin(2 * t1) - torch.sin(2 * t0)) / 4  # int sin^2
    i_cos = (s1**2 - s0**2) / 2  # int cos sin
    i_sin2 = (-c1 + c1**3 / 3) - (-c0 + c0**3 / 3)  # int sin^3
    i_sincos = (s1**3 - s0**3) / 3  # int sin^2 cos
    i_p2 = (-(c1**3) + c1) - (-(c0**3) + c0)  # int (3cos^2 - 1) sin

    # azimuthal integrals
    j_one = p1 - p0
    j_sin = -torch.cos(p1) + torch.cos(p0)
    j_cos = torch.sin(p1) - torch.sin(p0)
    j_sincos = (torch.sin(p1) ** 2 - torch.sin(p0) ** 2) / 2
    j_cos2 = (torch.sin(2 * p1) - torch.sin(2 * p0)) / 2

    out = torch.stack(
        (
            K0 * i_one * j_one,
            K1 * i_sin * j_sin,
            K1 * i_cos * j_one,
            K1 * i_sin * j_cos,
            K2 * i_sin2 * j_sincos,
            K2 * i_sincos * j_sin,
            K3 * i_p2 * j_one,
            K2 * i_sincos * j_cos,
            K4 * i_sin2 * j_cos2,
        )
    )
    return out.to(dtype)


def project_latlong(image: torch.Tensor) -> torch.Tensor:
    """Project an ``(H, W, C)`` lat-long map onto SH coefficients ``(C, 9)``."""
    h, w, _ = image.shape
    weights = texel_integrals(h, w, image.dtype)
    return torch.einsum("khw,hwc->ck", weights, image)


def irradiance_coeffs(radiance_coeffs: torch.Tensor) -> torch.Tensor:
    """Convolve radiance SH ``(C, 9)`` with the clamped cosine lobe."""
    lobe = torch.tensor([COSINE_LOBE[b] for b in BANDS], dtype=radiance_coeffs.dtype)
    return radiance_coeffs * lobe


def fit_sh(values: torch.Tensor, dirs: torch.Tensor) -> torch.Tensor:
    """Least-squares SH fit of sampled ``values (N, C)`` at ``dirs (N, 3)`` -> ``(C, 9)``."""
    basis = sh_basis(dirs)
    sol = torch.linalg.lstsq(basis, values).solution
    return sol.T
