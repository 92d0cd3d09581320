"""Clay branch: matte clay targets, the rendered clay color and the clay loss."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .optimize.losses import photometric
from .scene import Camera, EnvironmentMap, GaussianScene, logit
from .shading import latlong_lookup, shade
from .splat import GBuffer, render_gbuffer

CLAY_ALBEDO = (0.85, 0.85, 0.83)
CLAY_METALLIC = 0.0
CLAY_ROUGHNESS = 1.0
CLAY_DSSIM = 0.8


def clay_gbuffer(gbuffer: GBuffer) -> GBuffer:
    """The G-buffer of the same geometry with every Gaussian made of matte clay."""
    return gbuffer.with_material(CLAY_ALBEDO, CLAY_METALLIC, CLAY_ROUGHNESS)


def clay_scene(scene: GaussianScene) -> GaussianScene:
    """Copy of ``scene`` with clay materials stored in the raw parameters (up to logit clamping)."""
    k = len(scene)
    dtype = scene.dtype
    albedo = torch.tensor(CLAY_ALBEDO, dtype=dtype).expand(k, 3)
    return scene.clone().replace(
        albedo_logit=logit(albedo).clone(),
        metallic_logit=torch.full((k,), -30.0, dtype=dtype),
        roughness_logit=torch.full((k,), 30.0, dtype=dtype),
        indirect_sh=torch.zeros_like(scene.indirect_sh),
    )


def clay_oracle(scene: GaussianScene, camera: Camera, env: EnvironmentMap, background: bool = True):
    """Shaded clay image ``(H, W, 3)`` of the ground-truth geometry under ``env``.

    With ``background=False`` the result is the coverage-premultiplied foreground only.
    """
    with torch.no_grad():
        scene = scene.detach()
        gbuffer = clay_gbuffer(render_gbuffer(scene, camera, with_sh=False))
        return shade(gbuffer, env, scene=scene, background=background)


def render_clay(scene: GaussianScene, camera: Camera, background: torch.Tensor | None = None, gbuffer=None):
    """Composited clay color ``(H, W, 3)``, optionally over a ``background`` image.

    Pass ``gbuffer`` to reuse an existing render of the same scene and camera.
    """
    if gbuffer is None:
        gbuffer = render_gbuffer(scene, camera, with_sh=False)
    clay = gbuffer.clay
    if background is None:
        return clay
    return clay + (1 - gbuffer.alpha)[..., None] * background


def environment_background(env: EnvironmentMap, camera: Camera) -> torch.Tensor:
    """Environment radiance along every pixel ray ``(H, W, 3)``."""
    _, dirs = camera.rays(camera.pixel_centers(env.base.dtype))
    return latlong_lookup(env.base, dirs).reshape(camera.height, camera.width, 3)


def clay_loss(rendered, target, lambda_dssim: float = CLAY_DSSIM, mask=None) -> torch.Tensor:
    """``(1 - lambda) L1 + lambda (1 - SSIM)`` between rendered and target clay images."""
    return photometric(rendered, target, lambda_dssim, mask)


def corrupt_clay(image: torch.Tensor, sigma: float, seed: int = 0, grid: int = 3) -> torch.Tensor:
    """Emulate translator error: per-pixel noise plus a smooth bias field, both of scale ``sigma``.

    The bias field is a ``grid x grid`` lattice of normal samples upsampled bilinearly.
    Output is clamped to ``[0, 1]``; ``sigma = 0`` returns the input unchanged.
    """
    if sigma == 0:
        return image.clone()
    g = torch.Generator().manual_seed(seed)
    h, w, c = image.shape
    noise = torch.randn(h, w, c, generator=g, dtype=torch.float64) * sigma
    coarse = torch.randn(1, c, grid, grid, generator=g, dtype=torch.float64) * sigma
    bias = F.interpolate(coarse, size=(h, w), mode="bilinear", align_corners=True)[0].permute(1, 2, 0)
    return (image + (noise + bias).to(image.dtype)).clamp(0.0, 1.0)
