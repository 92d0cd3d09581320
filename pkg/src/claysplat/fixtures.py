"""Synthetic fixtures: analytic shapes covered by disks, camera rings and paired targets."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import torch

from .clay import clay_oracle, corrupt_clay
from .imageio import read_pfm
from .scene import Camera, EnvironmentMap, GaussianScene, PointCloud, TrainView, logit
from .shading import build_environment, constant_env, shade, three_point_env
from .splat import render_gbuffer

SHAPES = ("sphere", "torus", "plane", "two-spheres")
PRESETS = ("mirror", "diffuse", "glossy", "paper-dist")
ENV_PRESETS = ("constant", "three-point", "hdr-file")
GOLDEN = (1 + math.sqrt(5)) / 2
INIT_OPACITY = 0.9
GT_SAMPLES = 10_000


@dataclass(frozen=True)
class FixtureSpec:
    shape: str = "sphere"
    gaussian_count: int = 512
    preset: str = "mirror"
    env: str = "three-point"
    env_path: str | None = None
    views: int = 16
    camera_radius: float = 3.2
    resolution: int = 32
    fov_deg: float = 45.0
    seed: int = 0
    clay_sigma: float = 0.0
    scale_factor: float = 0.75

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}; choose from {', '.join(SHAPES)}")
        if self.preset not in PRESETS:
            raise ValueError(f"unknown material preset {self.preset!r}; choose from {', '.join(PRESETS)}")
        if self.env not in ENV_PRESETS:
            raise ValueError(f"unknown environment preset {self.env!r}; choose from {', '.join(ENV_PRESETS)}")
        if self.env == "hdr-file" and not self.env_path:
            raise ValueError("the hdr-file environment needs env_path")
        if self.gaussian_count < 1:
            raise ValueError("gaussian_count must be at least 1")
        if self.views < 1:
            raise ValueError("need at least one camera")

    def with_(self, **changes) -> "FixtureSpec":
        return replace(self, **changes)


# -- analytic surfaces ----------------------------------------------------------------


def fibonacci_sphere(n: int) -> np.ndarray:
    """``n`` near-uniform unit vectors on the sphere (Fibonacci lattice)."""
    i = np.arange(n, dtype=np.float64) + 0.5
    z = 1 - 2 * i / n
    rho = np.sqrt(np.clip(1 - z * z, 0, None))
    phi = 2 * math.pi * i / GOLDEN
    return np.stack((rho * np.cos(phi), rho * np.sin(phi), z), axis=1)


def fibonacci_square(n: int) -> np.ndarray:
    """``n`` points of the 2D Fibonacci lattice in the unit square."""
    i = np.arange(n, dtype=np.float64)
    return np.stack(((i + 0.5) / n, np.mod(i / GOLDEN, 1.0)), axis=1)


@dataclass(frozen=True)
class Surface:
    """An analytic surface: sampling with normals and an unsigned distance function."""

    shape: str

    @property
    def area(self) -> float:
        return {
            "sphere": 4 * math.pi,
            "torus": 4 * math.pi**2 * _TORUS_R * _TORUS_TUBE,
            "plane": 4.0,
            "two-spheres": 2 * 4 * math.pi * _TWIN_R**2,
        }[self.shape]

    @property
    def radius(self) -> float:
        return {"sphere": 1.0, "torus": _TORUS_R + _TORUS_TUBE, "plane": math.sqrt(2), "two-spheres": 1.3}[self.shape]

    def sample(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Deterministic area-uniform samples ``(points, unit normals)``."""
        if self.shape == "sphere":
            d = fibonacci_sphere(n)
            return d.copy(), d
        if self.shape == "plane":
            uv = fibonacci_square(n) * 2 - 1
            pts = np.concatenate((uv, np.zeros((n, 1))), axis=1)
            return pts, np.tile([0.0, 0.0, 1.0], (n, 1))
        if self.shape == "two-spheres":
            first = (n + 1) // 2
            out_p, out_n = [], []
            for count, center in ((first, _TWIN_CENTERS[0]), (n - first, _TWIN_CENTERS[1])):
                d = fibonacci_sphere(count)
                out_p.append(center + _TWIN_R * d)
                out_n.append(d)
            return np.concatenate(out_p), np.concatenate(out_n)
        # torus: area density is proportional to R + r cos(v); invert its CDF numerically
        uv = fibonacci_square(n)
        u = 2 * math.pi * uv[:, 0]
        grid = np.linspace(0, 2 * math.pi, 4097)
        cdf = (_TORUS_R * grid + _TORUS_TUBE * np.sin(grid)) / (2 * math.pi * _TORUS_R)
        v = np.interp(uv[:, 1], cdf, grid)
        nrm = np.stack((np.cos(v) * np.cos(u), np.cos(v) * np.sin(u), np.sin(v)), axis=1)
        ring = np.stack((np.cos(u), np.sin(u), np.zeros_like(u)), axis=1) * _TORUS_R
        return ring + _TORUS_TUBE * nrm, nrm

    def distance(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if self.shape == "sphere":
            return np.abs(np.linalg.norm(p, axis=1) - 1.0)
        if self.shape == "plane":
            inside = np.clip(p[:, :2], -1, 1)
            return np.linalg.norm(np.concatenate((p[:, :2] - inside, p[:, 2:]), axis=1), axis=1)
        if self.shape == "two-spheres":
            return np.min(
                [np.abs(np.linalg.norm(p - c, axis=1) - _TWIN_R) for c in _TWIN_CENTERS], axis=0
            )
        q = np.stack((np.linalg.norm(p[:, :2], axis=1) - _TORUS_R, p[:, 2]), axis=1)
        return np.abs(np.linalg.norm(q, axis=1) - _TORUS_TUBE)


_TORUS_R = 0.8
_TORUS_TUBE = 0.35
_TWIN_R = 0.6
_TWIN_CENTERS = (np.array([-0.7, 0.0, 0.0]), np.array([0.7, 0.0, 0.0]))


def tangent_frames(normals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit tangents ``(t_u, t_v)`` with ``t_u x t_v = n``."""
    up = np.where(np.abs(normals[:, 2:3]) < 0.9, [[0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0]])
    t_u = np.cross(up, normals)
    t_u /= np.linalg.norm(t_u, axis=1, keepdims=True)
    t_v = np.cross(normals, t_u)
    return t_u, t_v


# -- materials and environments ---------------------------------------------------------


def material_preset(preset: str, k: int, rng: np.random.Generator):
    """Per-Gaussian ``(albedo (k, 3), metallic (k,), roughness (k,))`` for a preset."""
    if preset == "mirror":
        return np.full((k, 3), 0.95), np.ones(k), np.full(k, 0.05)
    if preset == "diffuse":
        return np.tile([0.8, 0.78, 0.75], (k, 1)), np.zeros(k), np.ones(k)
    if preset == "glossy":
        return np.tile([0.7, 0.45, 0.3], (k, 1)), np.full(k, 0.5), np.full(k, 0.3)
    # one object-level draw: 70% metallic, roughness uniform in [0.03, 0.3]
    metallic = 1.0 if rng.random() < 0.7 else 0.0
    roughness = rng.uniform(0.03, 0.3)
    albedo = rng.uniform(0.2, 0.95, size=3)
    return np.tile(albedo, (k, 1)), np.full(k, metallic), np.full(k, roughness)


def make_environment(spec: FixtureSpec, height: int = 16, width: int = 32) -> EnvironmentMap:
    if spec.env == "constant":
        base = constant_env(1.0, height, width)
    elif spec.env == "three-point":
        base = three_point_env(height, width)
    else:
        base = torch.as_tensor(read_pfm(spec.env_path).copy(), dtype=torch.float64)
    return build_environment(base)


# -- scenes, cameras, views ------------------------------------------------------------


@dataclass
class Fixture:
    spec: FixtureSpec
    scene: GaussianScene
    surface: Surface
    gt_points: PointCloud
    spacing: float


def make_scene(spec: FixtureSpec) -> Fixture:
    """Disks on the analytic surface with aligned frames, neighbor-spacing scales and
    preset materials, plus a dense ground-truth point cloud with normals."""
    surface = Surface(spec.shape)
    k = spec.gaussian_count
    points, normals = surface.sample(k)
    t_u, t_v = tangent_frames(normals)
    spacing = math.sqrt(surface.area / k)
    rng = np.random.default_rng(spec.seed)
    albedo, metallic, roughness = material_preset(spec.preset, k, rng)
    scene = GaussianScene.from_attributes(
        position=points,
        tangent_u=t_u,
        tangent_v=t_v,
        scale=np.full((k, 2), spec.scale_factor * spacing),
        opacity=np.full(k, INIT_OPACITY),
        albedo=albedo,
        metallic=metallic,
        roughness=roughness,
    )
    gt_p, gt_n = surface.sample(GT_SAMPLES)
    return Fixture(spec, scene, surface, PointCloud(gt_p, gt_n), spacing)


def perturb_scene(scene: GaussianScene, sigma: float, seed: int = 0, radius: float | None = None) -> GaussianScene:
    """Reconstruction start: positions jittered by ``sigma * radius`` per axis and
    materials, clay colors and indirect light reset to seeded random or neutral values."""
    g = torch.Generator().manual_seed(seed)
    k = len(scene)
    dtype = scene.dtype
    radius = scene.radius() if radius is None else radius
    jitter = torch.randn(k, 3, generator=g, dtype=torch.float64).to(dtype) * (sigma * radius)
    rand = lambda *s: torch.rand(*s, generator=g, dtype=torch.float64).to(dtype)  # noqa: E731
    return scene.clone().replace(
        position=scene.position.detach() + jitter,
        albedo_logit=logit(0.2 + 0.6 * rand(k, 3)),
        metallic_logit=logit(0.2 + 0.6 * rand(k)),
        roughness_logit=logit(0.2 + 0.6 * rand(k)),
        clay_logit=torch.zeros(k, 3, dtype=dtype),
        indirect_sh=torch.zeros_like(scene.indirect_sh),
    )


def make_cameras(spec: FixtureSpec) -> list[Camera]:
    """Ring of cameras around the z axis looking at the origin, alternating elevation."""
    cams = []
    for i in range(spec.views):
        az = 2 * math.pi * i / spec.views
        el = math.radians(30.0 if i % 2 == 0 else -10.0)
        eye = spec.camera_radius * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
        cams.append(Camera.look_at(eye, (0, 0, 0), width=spec.resolution, height=spec.resolution, fov_deg=spec.fov_deg))
    return cams


def render_view(scene: GaussianScene, camera: Camera, env: EnvironmentMap) -> tuple[torch.Tensor, torch.Tensor]:
    """HDR reflective render and coverage of one view."""
    with torch.no_grad():
        gbuffer = render_gbuffer(scene.detach(), camera)
        return shade(gbuffer, env, scene=scene.detach()), gbuffer.alpha


def make_views(spec: FixtureSpec, scene: GaussianScene, env: EnvironmentMap, cameras=None) -> list[TrainView]:
    """Paired reflective and clay targets for every camera, clamped to [0, 1]."""
    cameras = make_cameras(spec) if cameras is None else cameras
    views = []
    for i, cam in enumerate(cameras):
        rgb, alpha = render_view(scene, cam, env)
        clay = clay_oracle(scene, cam, env).clamp(0, 1)
        if spec.clay_sigma > 0:
            clay = corrupt_clay(clay, spec.clay_sigma, seed=spec.seed * 1000 + i)
        views.append(TrainView(cam, rgb.clamp(0, 1), clay=clay, mask=(alpha > 0.5).to(rgb.dtype)))
    return views
