import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from claysplat.scene import Camera, GaussianScene, normalize
from claysplat.splat import (
    backward_gbuffer,
    composite_pixel,
    disk_point,
    gaussian_weight,
    pixel_to_local,
    render_gbuffer,
    render_gbuffer_reference,
)
from gradcheck import check_scene
from helpers import facing_disk, random_camera, random_scene

CHANNELS = ("albedo", "metallic", "roughness", "normal", "clay", "alpha", "depth")


def test_disk_point_center_and_axes():
    p = torch.tensor([0.0, 0.0, 0.0], dtype=torch.float64)
    e_x = torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64)
    e_y = torch.tensor([0.0, 1.0, 0.0], dtype=torch.float64)
    s = torch.tensor([2.0, 1.0], dtype=torch.float64)
    assert torch.equal(disk_point(p, e_x, e_y, s, 0.0, 0.0), p)
    assert torch.equal(disk_point(p, e_x, e_y, s, 1.0, 1.0), torch.tensor([2.0, 1.0, 0.0], dtype=torch.float64))


def test_disk_point_norm_identity_random_frames():
    scene = random_scene(4, k=10)
    t_u, t_v = scene.frame()
    s = scene.scale()
    q = disk_point(scene.position, t_u, t_v, s, torch.ones(10, dtype=torch.float64), torch.zeros(10, dtype=torch.float64))
    assert torch.allclose((q - scene.position).norm(dim=1), s[:, 0], atol=1e-12)


def test_gaussian_weight_values_and_symmetry():
    one, zero = torch.tensor(1.0, dtype=torch.float64), torch.tensor(0.0, dtype=torch.float64)
    assert float(gaussian_weight(zero, zero)) == 1.0
    assert math.isclose(float(gaussian_weight(one, zero)), math.exp(-0.5), rel_tol=1e-12)
    u, v = torch.randn(2, 100, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    assert torch.equal(gaussian_weight(u, v), gaussian_weight(-u, -v))


def test_pixel_to_local_on_axis():
    scene, cam = facing_disk(distance=3.0)
    u, v, depth = pixel_to_local(cam, scene, 0, (cam.cx, cam.cy))
    assert abs(u) < 1e-12 and abs(v) < 1e-12
    assert math.isclose(depth, 3.0, rel_tol=1e-12)


def test_pixel_to_local_parallel_plane_misses():
    scene = GaussianScene.from_attributes(
        position=[[0, 0, 0]],
        tangent_u=[[1, 0, 0]],
        tangent_v=[[0, 1, 0]],
        scale=[[1, 1]],
        opacity=[0.5],
        albedo=[[0.5, 0.5, 0.5]],
        metallic=[0.0],
        roughness=[0.5],
    )
    cam = Camera.look_at((0, -3, 0), (0, 0, 0), width=9, height=9)
    assert pixel_to_local(cam, scene, 0, (cam.cx, cam.cy)) is None


def test_pixel_to_local_round_trip_random():
    rng = np.random.default_rng(1)
    for seed in range(10):
        scene, cam = random_scene(seed, k=1), random_camera(seed)
        u0, v0 = rng.uniform(-1.5, 1.5, size=2)
        t_u, t_v = scene.frame()
        point = disk_point(scene.position[0], t_u[0], t_v[0], scene.scale()[0], u0, v0)
        xy, z = cam.project(point[None])
        assert float(z[0]) > 0
        u, v, _ = pixel_to_local(cam, scene, 0, xy[0])
        assert abs(u - u0) < 1e-5 and abs(v - v0) < 1e-5


def test_composite_single_opaque():
    b, acc, w = composite_pixel(torch.tensor([[0.3, 0.6]]), torch.tensor([1.0]), torch.tensor([1.0]))
    assert torch.equal(b, torch.tensor([0.3, 0.6])) and float(acc) == 1.0 and w.tolist() == [1.0]


def test_composite_two_layers_closed_form():
    b1, b2 = torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0])
    b, acc, _ = composite_pixel(torch.stack((b1, b2)), torch.tensor([0.5, 1.0]), torch.tensor([1.0, 1.0]))
    assert torch.allclose(b, 0.5 * b1 + 0.5 * b2) and float(acc) == 1.0


def test_composite_rejects_unsorted_depths():
    with pytest.raises(ValueError):
        composite_pixel(torch.ones(2, 1), torch.ones(2), torch.ones(2), check_order_depths=[2.0, 1.0])


def naive_fold(b, alpha, g):
    out, trans = [0.0] * len(b[0]), 1.0
    for row, a_i, g_i in zip(b, alpha, g):
        w = a_i * g_i * trans
        out = [o + x * w for o, x in zip(out, row)]
        trans *= 1 - a_i * g_i
    return out, 1 - trans


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 10))
def test_composite_matches_naive_fold_and_over_operator(seed, n):
    rng = np.random.default_rng(seed)
    b, alpha, g = rng.uniform(size=(n, 4)), rng.uniform(size=n), rng.uniform(size=n)
    out, acc, w = composite_pixel(torch.tensor(b), torch.tensor(alpha), torch.tensor(g))
    ref, ref_acc = naive_fold(b.tolist(), alpha.tolist(), g.tolist())
    assert np.allclose(out.numpy(), ref, atol=1e-12)
    assert math.isclose(float(acc), ref_acc, abs_tol=1e-12)
    assert math.isclose(float(w.sum()), float(acc), abs_tol=1e-12)
    # back-to-front "over" compositing of the same layers
    back, back_acc = np.zeros(4), 0.0
    for i in reversed(range(n)):
        a = alpha[i] * g[i]
        back = b[i] * a + (1 - a) * back
        back_acc = a + (1 - a) * back_acc
    assert np.allclose(out.numpy(), back, atol=1e-6) and abs(float(acc) - back_acc) < 1e-6


def test_empty_scene_renders_zero_gbuffer():
    cam = random_camera(0, size=8)
    gb = render_gbuffer(GaussianScene.empty(), cam)
    for name in CHANNELS:
        assert not bool(getattr(gb, name).any())


def test_single_opaque_disk_center_pixel():
    scene, cam = facing_disk(distance=3.0, opacity=1.0 - 1e-12, albedo=[0.2, 0.4, 0.6], clay_color=[0.1, 0.5, 0.9])
    gb = render_gbuffer(scene, cam)
    c = cam.height // 2
    assert torch.allclose(gb.albedo[c, c], torch.tensor([0.2, 0.4, 0.6], dtype=torch.float64), atol=1e-9)
    assert torch.allclose(gb.clay[c, c], torch.tensor([0.1, 0.5, 0.9], dtype=torch.float64), atol=1e-9)
    assert math.isclose(float(gb.metallic[c, c]), 0.3, abs_tol=1e-9)
    assert math.isclose(float(gb.roughness[c, c]), 0.7, abs_tol=1e-9)
    assert torch.allclose(gb.normal[c, c], torch.tensor([0.0, -1.0, 0.0], dtype=torch.float64), atol=1e-12)
    assert math.isclose(float(gb.depth[c, c]), 3.0, rel_tol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_render_matches_cull_free_reference_bitwise(seed):
    scene, cam = random_scene(seed, k=5), random_camera(seed, size=12)
    gb = render_gbuffer(scene, cam)
    ref = render_gbuffer_reference(scene, cam)
    assert float(gb.alpha.max()) > 0
    for name in CHANNELS:
        assert torch.equal(getattr(gb, name), ref[name]), name


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(1, 12))
def test_accum_alpha_in_unit_interval(seed, k):
    gb = render_gbuffer(random_scene(seed, k=k), random_camera(seed, size=10))
    assert float(gb.alpha.min()) >= 0 and float(gb.alpha.max()) <= 1


def test_zero_opacity_gaussian_leaves_render_bit_unchanged():
    scene, cam = random_scene(3, k=4), random_camera(3)
    extra = random_scene(99, k=1)
    extra = extra.replace(opacity_logit=torch.tensor([-float("inf")], dtype=torch.float64))
    before = render_gbuffer(scene, cam)
    after = render_gbuffer(scene.concat(extra), cam)
    for name in CHANNELS + ("indirect_sh",):
        assert torch.equal(getattr(before, name), getattr(after, name)), name


def test_rigid_transform_invariance():
    scene, cam = random_scene(5, k=5), random_camera(5)
    rot = Rotation.from_rotvec([0.3, -0.7, 0.4]).as_matrix()
    trans = np.array([0.5, -1.0, 2.0])
    r = torch.tensor(rot)
    t_u, t_v = scene.frame()
    moved = scene.replace(
        position=scene.position @ r.T + torch.tensor(trans),
        tangents=torch.stack((t_u @ r.T, t_v @ r.T), dim=1),
    )
    a = render_gbuffer(scene, cam)
    b = render_gbuffer(moved, cam.transformed(rot, trans))
    for name in ("albedo", "metallic", "roughness", "clay", "alpha", "depth"):
        assert torch.allclose(getattr(a, name), getattr(b, name), atol=1e-5), name
    assert torch.allclose(a.normal @ r.T, b.normal, atol=1e-5)


def test_backward_zero_upstream_is_zero():
    scene, cam = random_scene(0, k=3), random_camera(0, size=8)
    scene.requires_grad_(True)
    gb = render_gbuffer(scene, cam)
    grads = backward_gbuffer(scene, gb, {"albedo": torch.zeros(8, 8, 3), "normal": torch.zeros(8, 8, 3)})
    assert all(v is None or not bool(v.any()) for _, v in grads.items())


def test_backward_albedo_gradient_is_blend_weight():
    scene, cam = facing_disk(opacity=0.8)
    scene.requires_grad_(True)
    gb = render_gbuffer(scene, cam)
    c = cam.height // 2
    upstream = torch.zeros(cam.height, cam.width, 3, dtype=torch.float64)
    upstream[c, c, 0] = 1.0
    grads = backward_gbuffer(scene, gb, {"albedo": upstream})
    lam = float(scene.albedo()[0, 0].detach())
    # chain through the sigmoid: dL/dlogit = w * lam (1 - lam)
    w = float(grads.albedo_logit[0, 0]) / (lam * (1 - lam))
    assert math.isclose(w, float(gb.alpha.detach()[c, c]), rel_tol=1e-12)


def gbuffer_loss(weights):
    def loss(scene, gb):
        return sum((getattr(gb, name) * w).sum() for name, w in weights.items())

    return loss


def test_backward_matches_finite_differences_three_gaussians():
    scene, cam = random_scene(11, k=3), random_camera(11, size=8)
    g = torch.Generator().manual_seed(0)
    shapes = {"albedo": (8, 8, 3), "metallic": (8, 8), "roughness": (8, 8), "normal": (8, 8, 3), "clay": (8, 8, 3)}
    shapes.update(alpha=(8, 8), depth=(8, 8), indirect_sh=(8, 8, 3, 9))
    weights = {k: torch.randn(*s, generator=g, dtype=torch.float64) for k, s in shapes.items()}
    result = check_scene(scene, cam, gbuffer_loss(weights))
    assert all(v == 0 for v in result.values()), result


def test_normal_faces_camera():
    scene, cam = random_scene(8, k=8), random_camera(8)
    gb = render_gbuffer(scene, cam)
    covered = gb.alpha > 1e-4
    dots = (gb.normal * gb.ray_dirs).sum(-1)[covered]
    assert float(dots.max()) <= 0
    assert torch.allclose(normalize(gb.normal[covered]), gb.normal[covered], atol=1e-12)
