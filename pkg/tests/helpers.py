"""Shared random scene/camera generators for the test suite."""

import numpy as np
import torch

from claysplat.scene import Camera, GaussianScene


def random_scene(seed, k=5, spread=0.5, dtype=torch.float64, sh_scale=0.3):
    rng = np.random.default_rng(seed)
    return GaussianScene.from_attributes(
        position=rng.uniform(-spread, spread, size=(k, 3)),
        tangent_u=rng.normal(size=(k, 3)),
        tangent_v=rng.normal(size=(k, 3)),
        scale=rng.uniform(0.15, 0.4, size=(k, 2)),
        opacity=rng.uniform(0.3, 0.95, size=k),
        albedo=rng.uniform(0.05, 0.95, size=(k, 3)),
        metallic=rng.uniform(0.05, 0.95, size=k),
        roughness=rng.uniform(0.2, 0.9, size=k),
        clay_color=rng.uniform(0.05, 0.95, size=(k, 3)),
        indirect_sh=rng.normal(scale=sh_scale, size=(k, 3, 9)),
        dtype=dtype,
    )


def random_camera(seed, size=16, distance=3.0, fov=40.0):
    rng = np.random.default_rng(seed + 7919)
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    return Camera.look_at(distance * d, rng.uniform(-0.1, 0.1, size=3), width=size, height=size, fov_deg=fov)


def facing_disk(distance=3.0, opacity=1.0, scale=1.0, **attrs):
    """One disk at the origin facing a camera on the -y axis."""
    defaults = dict(albedo=[0.2, 0.4, 0.6], metallic=0.3, roughness=0.7, clay_color=[0.5, 0.5, 0.5])
    defaults.update(attrs)
    scene = GaussianScene.from_attributes(
        position=[[0.0, 0.0, 0.0]],
        tangent_u=[[1.0, 0.0, 0.0]],
        tangent_v=[[0.0, 0.0, 1.0]],
        scale=[[scale, scale]],
        opacity=[opacity],
        albedo=[defaults["albedo"]],
        metallic=[defaults["metallic"]],
        roughness=[defaults["roughness"]],
        clay_color=[defaults["clay_color"]],
    )
    cam = Camera.look_at((0.0, -distance, 0.0), (0.0, 0.0, 0.0), width=15, height=15, fov_deg=30.0)
    return scene, cam


def self_views(scene, cameras, env):
    """Paired reflective and clay targets rendered from ``scene`` itself."""
    from claysplat.clay import clay_oracle
    from claysplat.scene import TrainView
    from claysplat.shading import shade
    from claysplat.splat import render_gbuffer

    views = []
    with torch.no_grad():
        for cam in cameras:
            rgb = shade(render_gbuffer(scene, cam), env, scene=scene).clamp(0, 1)
            clay = clay_oracle(scene, cam, env).clamp(0, 1)
            views.append(TrainView(cam, rgb, clay=clay))
    return views


def small_env():
    from claysplat.shading import build_environment, three_point_env

    return build_environment(three_point_env(8, 16), samples=64)
