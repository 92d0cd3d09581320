"""On-disk fixture bundles: scenes, environment, cameras, paired views and ground truth.

Layout of a bundle directory::

    spec.json        fixture spec and perturbation settings
    scene.cspl       ground-truth Gaussians
    init.cspl        perturbed reconstruction start
    env.pfm          environment radiance (lat-long)
    cameras.json     camera list
    gt.ply           ground-truth surface samples with normals
    views/           rgb_XXX, clay_XXX, mask_XXX as PFM (exact) plus PNG previews
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .fixtures import FixtureSpec, make_cameras, make_environment, make_scene, make_views, perturb_scene
from .imageio import read_pfm, read_ply, write_pfm, write_png, write_ply
from .scene import Camera, EnvironmentMap, GaussianScene, PointCloud, TrainView, load_scene, save_scene
from .shading import build_environment

INIT_SIGMA = 0.05


@dataclass
class Bundle:
    spec: FixtureSpec
    scene: GaussianScene
    init: GaussianScene
    env: EnvironmentMap
    views: list[TrainView]
    gt_points: PointCloud

    @property
    def cameras(self) -> list[Camera]:
        return [v.camera for v in self.views]


def generate_bundle(spec: FixtureSpec, init_sigma: float = INIT_SIGMA) -> Bundle:
    """Build a fixture in memory: ground truth, perturbed start and paired views."""
    fixture = make_scene(spec)
    env = make_environment(spec)
    views = make_views(spec, fixture.scene, env, make_cameras(spec))
    init = perturb_scene(fixture.scene, init_sigma, seed=spec.seed + 100, radius=fixture.surface.radius)
    return Bundle(spec, fixture.scene, init, env, views, fixture.gt_points)


def write_bundle(bundle: Bundle, out, init_sigma: float = INIT_SIGMA) -> list[Path]:
    """Write ``bundle`` under ``out`` and return the written files in a stable order."""
    out = Path(out)
    (out / "views").mkdir(parents=True, exist_ok=True)
    written = []

    def path(name):
        p = out / name
        written.append(p)
        return p

    meta = {"fixture": asdict(bundle.spec), "init_sigma": init_sigma}
    path("spec.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    save_scene(bundle.scene, path("scene.cspl"))
    save_scene(bundle.init, path("init.cspl"))
    write_pfm(path("env.pfm"), bundle.env.base.detach().numpy())
    cams = [v.camera.to_dict() for v in bundle.views]
    path("cameras.json").write_text(json.dumps(cams, indent=2) + "\n", encoding="utf-8")
    write_ply(path("gt.ply"), bundle.gt_points.points, bundle.gt_points.normals)
    for i, view in enumerate(bundle.views):
        for name in ("rgb", "clay", "mask"):
            image = getattr(view, name)
            if image is None:
                continue
            data = image.detach().double().numpy()
            write_pfm(path(f"views/{name}_{i:03d}.pfm"), data)
            write_png(path(f"views/{name}_{i:03d}.png"), data)
    return written


def read_bundle(root, dtype=torch.float64) -> Bundle:
    """Load a bundle written by :func:`write_bundle`."""
    root = Path(root)
    if not (root / "spec.json").is_file():
        raise FileNotFoundError(f"{root}: not a scene bundle (missing spec.json)")
    meta = json.loads((root / "spec.json").read_text(encoding="utf-8"))
    spec = FixtureSpec(**meta["fixture"])
    scene = load_scene(root / "scene.cspl", dtype=dtype)
    init = load_scene(root / "init.cspl", dtype=dtype)
    env = read_env(root / "env.pfm")
    cams = [Camera.from_dict(d) for d in json.loads((root / "cameras.json").read_text(encoding="utf-8"))]
    views = []
    for i, cam in enumerate(cams):
        images = {}
        for name in ("rgb", "clay", "mask"):
            p = root / "views" / f"{name}_{i:03d}.pfm"
            images[name] = torch.as_tensor(read_pfm(p), dtype=dtype) if p.is_file() else None
        views.append(TrainView(cam, images["rgb"], clay=images["clay"], mask=images["mask"]))
    points, normals = read_ply(root / "gt.ply")
    if normals is not None:
        normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    return Bundle(spec, scene, init, env, views, PointCloud(points, normals))


def read_env(path) -> EnvironmentMap:
    base = torch.as_tensor(read_pfm(path), dtype=torch.float64)
    if base.ndim != 3:
        raise ValueError(f"{path}: environment must be an RGB PFM")
    return build_environment(base)
