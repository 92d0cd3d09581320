"""Image losses: L1, windowed SSIM and the L1/D-SSIM mixtures used for both branches."""

from __future__ import annotations

from functools import lru_cache

import torch
import torch.nn.functional as F

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
RGB_DSSIM = 0.2


@lru_cache(maxsize=4)
def _window_1d(size: int, sigma: float) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA, dtype=torch.float64) -> torch.Tensor:
    """Normalized 2D Gaussian window ``(size, size)``."""
    g = _window_1d(size, sigma)
    return torch.outer(g, g).to(dtype)


def _check_pair(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")


def ssim_map(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Local SSIM ``(H - 10, W - 10, C)`` over every fully contained 11x11 window."""
    _check_pair(a, b)
    h, w = a.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    c = a.shape[2] if a.ndim == 3 else 1
    x = a.reshape(h, w, c).permute(2, 0, 1)[:, None]
    y = b.reshape(h, w, c).permute(2, 0, 1)[:, None]
    win = gaussian_window(dtype=a.dtype)[None, None]
    mu_x = F.conv2d(x, win)
    mu_y = F.conv2d(y, win)
    sxx = F.conv2d(x * x, win) - mu_x * mu_x
    syy = F.conv2d(y * y, win) - mu_y * mu_y
    sxy = F.conv2d(x * y, win) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (sxx + syy + SSIM_C2)
    return (num / den)[:, 0].permute(1, 2, 0)


def _crop_mask(mask: torch.Tensor) -> torch.Tensor:
    r = SSIM_WINDOW // 2
    return mask[r : mask.shape[0] - r, r : mask.shape[1] - r]


def ssim(a: torch.Tensor, b: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean SSIM of two ``(H, W, C)`` images, averaged over windows and channels.

    With a foreground ``mask (H, W)`` both images are zeroed outside it and only windows
    centered on foreground pixels are averaged; an empty mask yields 1.
    """
    if mask is None:
        return ssim_map(a, b).mean()
    m = mask.to(a.dtype)
    s = ssim_map(a * m[..., None], b * m[..., None])
    centers = _crop_mask(m)
    total = centers.sum()
    if float(total) == 0:
        return torch.ones((), dtype=a.dtype)
    return (s * centers[..., None]).sum() / (total * s.shape[2])


def l1(a: torch.Tensor, b: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean absolute difference over pixels and channels (foreground pixels only with ``mask``)."""
    _check_pair(a, b)
    diff = torch.abs(a - b)
    if mask is None:
        return diff.mean()
    m = mask.to(a.dtype)
    count = m.sum() * (diff.shape[2] if diff.ndim == 3 else 1)
    if float(count) == 0:
        return torch.zeros((), dtype=a.dtype)
    weight = m[..., None] if diff.ndim == 3 else m
    return (diff * weight).sum() / count


def photometric(rendered, target, lambda_dssim: float, mask=None) -> torch.Tensor:
    """``(1 - lambda) L1 + lambda (1 - SSIM)``; zero when ``mask`` selects nothing."""
    _check_pair(rendered, target)
    if mask is not None and float(mask.sum()) == 0:
        return torch.zeros((), dtype=rendered.dtype)
    value = (1 - lambda_dssim) * l1(rendered, target, mask)
    if lambda_dssim:
        value = value + lambda_dssim * (1 - ssim(rendered, target, mask))
    return value


def rgb_loss(rendered, target, mask=None) -> torch.Tensor:
    """Reflective-branch image loss ``0.8 L1 + 0.2 (1 - SSIM)``."""
    return photometric(rendered, target, RGB_DSSIM, mask)


def mask_loss(alpha, mask) -> torch.Tensor:
    """L1 between accumulated opacity and a binary foreground mask."""
    return torch.abs(alpha - mask.to(alpha.dtype)).mean()
