"""Geometry and image metrics: point extraction, Chamfer-L1, normal angular error, PSNR."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from scipy.spatial import cKDTree

from .optimize.losses import ssim
from .scene import Camera, GaussianScene, PointCloud
from .splat import render_gbuffer

PSNR_CAP = 99.0
FOREGROUND_ALPHA = 0.5
VOXELS_PER_RADIUS = 256


def extract_points(scene: GaussianScene, cameras: list[Camera], radius: float | None = None) -> PointCloud:
    """Back-project every foreground pixel's expected depth, with composited normals.

    Points are deduplicated on a voxel grid of ``radius / 256`` keeping the first point
    seen per voxel (camera order, then row-major pixel order).
    """
    scene = scene.detach()
    pts, nrm = [], []
    with torch.no_grad():
        for cam in cameras:
            gb = render_gbuffer(scene, cam, with_sh=False)
            fg = (gb.alpha > FOREGROUND_ALPHA).reshape(-1)
            p = gb.ray_origin + gb.depth.reshape(-1, 1) * gb.ray_dirs.reshape(-1, 3)
            pts.append(p[fg].double().numpy())
            nrm.append(gb.normal.reshape(-1, 3)[fg].double().numpy())
    if not pts or sum(len(p) for p in pts) == 0:
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 3)))
    points = np.concatenate(pts)
    normals = np.concatenate(nrm)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    radius = scene.radius() if radius is None else radius
    keys = np.floor(points / (radius / VOXELS_PER_RADIUS)).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    first = np.sort(first)
    return PointCloud(points[first], normals[first])


def _nn_distance(query: np.ndarray, ref: np.ndarray) -> np.ndarray:
    _, idx = cKDTree(ref).query(query, k=1)
    d = query - ref[idx]
    return np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2])


def chamfer_l1(a, b) -> float:
    """``0.5 (mean_a min_b |a - b| + mean_b min_a |a - b|)`` with Euclidean distances."""
    pa = np.asarray(a.points if isinstance(a, PointCloud) else a, dtype=np.float64).reshape(-1, 3)
    pb = np.asarray(b.points if isinstance(b, PointCloud) else b, dtype=np.float64).reshape(-1, 3)
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("chamfer distance needs two non-empty point sets")
    return 0.5 * (float(_nn_distance(pa, pb).mean()) + float(_nn_distance(pb, pa).mean()))


def normal_mae(pred, gt, mask) -> float:
    """Mean angle in degrees between unit normal images over ``mask``."""
    pred = torch.as_tensor(pred, dtype=torch.float64).reshape(-1, 3)
    gt = torch.as_tensor(gt, dtype=torch.float64).reshape(-1, 3)
    m = torch.as_tensor(mask).reshape(-1).bool()
    if not bool(m.any()):
        raise ValueError("normal error needs a non-empty mask")
    cos = (pred[m] * gt[m]).sum(-1).clamp(-1.0, 1.0)
    return float(torch.rad2deg(torch.arccos(cos)).mean())


def psnr(a, b) -> float:
    """``10 log10(1 / MSE)`` for images in [0, 1]; identical images give 99."""
    a = torch.as_tensor(a, dtype=torch.float64)
    b = torch.as_tensor(b, dtype=torch.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    mse = float(((a - b) ** 2).mean())
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10 * math.log10(1.0 / mse))


def luminance(image) -> torch.Tensor:
    """Rec. 709 luminance of a linear RGB image."""
    return 0.2126 * image[..., 0] + 0.7152 * image[..., 1] + 0.0722 * image[..., 2]


def contrast_ratio(foreground, alpha, threshold: float = FOREGROUND_ALPHA) -> float:
    """Max over mean luminance of the un-premultiplied ``foreground`` where ``alpha > threshold``."""
    fg = alpha > threshold
    if not bool(fg.any()):
        raise ValueError("contrast ratio needs foreground pixels")
    lum = luminance(foreground)[fg] / alpha[fg]
    return float(lum.max() / lum.mean())


@dataclass
class MetricReport:
    chamfer_l1: float
    normal_mae: float
    psnr: float
    ssim: float
    per_view: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(scene: GaussianScene, gt_scene: GaussianScene, views, gt_points: PointCloud, env) -> MetricReport:
    """Chamfer against ``gt_points``, normal error against the ground-truth scene's normals
    on jointly covered pixels, and PSNR/SSIM of clamped reflective renders vs view targets."""
    from .shading import shade

    scene = scene.detach()
    cams = [v.camera for v in views]
    cloud = extract_points(scene, cams)
    chamfer = chamfer_l1(cloud, gt_points) if len(cloud) else float("inf")
    per_view, maes, psnrs, ssims = [], [], [], []
    with torch.no_grad():
        for i, view in enumerate(views):
            gb = render_gbuffer(scene, view.camera)
            gt_gb = render_gbuffer(gt_scene.detach(), view.camera, with_sh=False)
            image = shade(gb, env, scene=scene).clamp(0, 1).to(torch.float64)
            target = view.rgb.to(torch.float64)
            mask = (gb.alpha > FOREGROUND_ALPHA) & (gt_gb.alpha > FOREGROUND_ALPHA)
            mae = normal_mae(gb.normal, gt_gb.normal, mask) if bool(mask.any()) else float("nan")
            entry = {"view": i, "normal_mae": mae, "psnr": psnr(image, target), "ssim": float(ssim(image, target))}
            per_view.append(entry)
            maes.append(mae)
            psnrs.append(entry["psnr"])
            ssims.append(entry["ssim"])
    finite = [m for m in maes if not math.isnan(m)]
    return MetricReport(
        chamfer_l1=chamfer,
        normal_mae=float(np.mean(finite)) if finite else float("nan"),
        psnr=float(np.mean(psnrs)),
        ssim=float(np.mean(ssims)),
        per_view=per_view,
    )
