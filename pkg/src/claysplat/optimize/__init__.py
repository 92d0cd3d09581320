from .losses import l1, mask_loss, photometric, rgb_loss, ssim, ssim_map
from .schedule import VARIANTS, get_variant, lambda_smooth, route_gradients, smooth_normal

__all__ = [
    "VARIANTS",
    "get_variant",
    "l1",
    "lambda_smooth",
    "mask_loss",
    "photometric",
    "rgb_loss",
    "route_gradients",
    "smooth_normal",
    "ssim",
    "ssim_map",
]
