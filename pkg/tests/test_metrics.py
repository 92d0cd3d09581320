import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from claysplat.fixtures import FixtureSpec, make_cameras, make_scene
from claysplat.metrics import chamfer_l1, contrast_ratio, extract_points, normal_mae, psnr
from claysplat.optimize.losses import ssim
from claysplat.scene import Camera, GaussianScene, PointCloud
from helpers import facing_disk


def _brute_chamfer(a, b):
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    return 0.5 * (d.min(1).mean() + d.min(0).mean())


def _brute_chamfer_loops(a, b):
    def one_way(p, q):
        total = 0.0
        for x in p:
            total += min(math.sqrt(sum((x[i] - y[i]) ** 2 for i in range(3))) for y in q)
        return total / len(p)

    return 0.5 * (one_way(a, b) + one_way(b, a))


# -- chamfer ------------------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 50), m=st.integers(1, 50))
def test_chamfer_equals_brute_force(seed, n, m):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, 3)), rng.normal(size=(m, 3))
    assert chamfer_l1(a, b) == pytest.approx(_brute_chamfer(a, b), rel=1e-12, abs=1e-15)


def test_chamfer_equals_plain_loop_oracle():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(-1, 1, size=(30, 3)), rng.uniform(-1, 1, size=(45, 3))
    assert chamfer_l1(a, b) == pytest.approx(_brute_chamfer_loops(a, b), rel=1e-12)


def test_chamfer_identity_is_zero():
    a = np.random.default_rng(2).normal(size=(100, 3))
    assert chamfer_l1(a, a) == 0.0


def test_chamfer_single_pair():
    assert chamfer_l1([[0, 0, 0]], [[1, 0, 0]]) == 1.0


def test_chamfer_known_translation():
    # points at least 1 apart keep their nearest neighbour under a 0.1 shift
    rng = np.random.default_rng(3)
    a = rng.permutation(np.stack(np.meshgrid(*[np.arange(5.0)] * 3), -1).reshape(-1, 3))[:100]
    b = a + [0.1, 0.0, 0.0]
    assert _brute_chamfer(a, b) == pytest.approx(0.1, abs=1e-12)
    assert chamfer_l1(a, b) == pytest.approx(0.1, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_chamfer_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(40, 3)), rng.normal(size=(25, 3))
    assert chamfer_l1(a, b) == chamfer_l1(b, a)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_chamfer_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(60, 3)), rng.normal(size=(45, 3))
    rot = Rotation.random(random_state=seed).as_matrix()
    shift = rng.normal(size=3)
    moved = chamfer_l1(a @ rot.T + shift, b @ rot.T + shift)
    assert abs(moved - chamfer_l1(a, b)) <= 1e-9


def test_chamfer_accepts_point_clouds():
    a = PointCloud(np.zeros((1, 3)))
    assert chamfer_l1(a, PointCloud(np.ones((1, 3)))) == pytest.approx(math.sqrt(3))


def test_chamfer_rejects_empty_sets():
    with pytest.raises(ValueError):
        chamfer_l1(np.zeros((0, 3)), np.zeros((2, 3)))


# -- normal error ----------------------------------------------------------------------


def _unit_field(seed, n=64):
    v = np.random.default_rng(seed).normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_normal_mae_identity_is_zero():
    n = _unit_field(0)
    assert normal_mae(n, n, np.ones(len(n), dtype=bool)) == pytest.approx(0.0, abs=1e-6)


def test_normal_mae_orthogonal_is_ninety():
    pred = np.tile([1.0, 0.0, 0.0], (10, 1))
    gt = np.tile([0.0, 0.0, 1.0], (10, 1))
    assert normal_mae(pred, gt, np.ones(10, dtype=bool)) == pytest.approx(90.0, abs=1e-12)


def test_normal_mae_constructed_rotation():
    # normals in the xy plane rotated by 10 degrees about z
    phi = np.linspace(0, 2 * np.pi, 50, endpoint=False)
    gt = np.stack((np.cos(phi), np.sin(phi), np.zeros_like(phi)), axis=1)
    rot = Rotation.from_rotvec([0, 0, np.radians(10)]).as_matrix()
    pred = gt @ rot.T
    assert abs(normal_mae(pred, gt, np.ones(50, dtype=bool)) - 10.0) <= 1e-6


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_normal_mae_joint_rotation_invariance(seed):
    pred, gt = _unit_field(seed), _unit_field(seed + 1)
    mask = np.random.default_rng(seed).random(len(pred)) > 0.3
    mask[0] = True
    rot = Rotation.random(random_state=seed).as_matrix()
    assert abs(normal_mae(pred @ rot.T, gt @ rot.T, mask) - normal_mae(pred, gt, mask)) <= 1e-6


def test_normal_mae_uses_mask_only():
    pred = np.tile([1.0, 0.0, 0.0], (4, 1))
    gt = np.array([[1.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], [0, 1.0, 0]])
    assert normal_mae(pred, gt, np.array([True, True, False, False])) == 0.0


def test_normal_mae_rejects_empty_mask():
    with pytest.raises(ValueError):
        normal_mae(np.ones((3, 3)), np.ones((3, 3)), np.zeros(3, dtype=bool))


# -- PSNR and SSIM ----------------------------------------------------------------------


def test_psnr_closed_form():
    a = torch.zeros(8, 8, 3, dtype=torch.float64)
    assert psnr(a + 0.1, a) == pytest.approx(20.0, abs=1e-9)


def test_psnr_identical_is_capped():
    a = torch.rand(8, 8, 3)
    assert psnr(a, a) == 99.0


def test_psnr_seeded_uniform_noise():
    # uniform noise on [-h, h] has variance h^2 / 3
    h = 0.1
    rng = np.random.default_rng(0)
    a = rng.uniform(0.2, 0.8, size=(128, 128, 3))
    b = a + rng.uniform(-h, h, size=a.shape)
    assert abs(psnr(a, b) - (-10 * math.log10(h * h / 3))) <= 0.2


def test_psnr_rejects_mismatched_shapes():
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


def test_ssim_identity_equals_one():
    a = torch.rand(20, 20, 3, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    assert float(ssim(a, a)) == pytest.approx(1.0, abs=1e-12)


def test_contrast_ratio_uniform_image():
    img = torch.full((4, 4, 3), 0.3, dtype=torch.float64)
    alpha = torch.ones(4, 4, dtype=torch.float64)
    assert contrast_ratio(img, alpha) == pytest.approx(1.0, abs=1e-12)


# -- point extraction ---------------------------------------------------------------------


def test_extract_points_empty_scene():
    cam = Camera.look_at((0, -3, 0), (0, 0, 0), width=8, height=8)
    assert len(extract_points(GaussianScene.empty(), [cam], radius=1.0)) == 0


def test_extract_points_lie_on_disk_plane():
    scene, cam = facing_disk(opacity=1 - 1e-9, scale=0.6)
    cloud = extract_points(scene, [cam])
    assert len(cloud) > 10
    assert np.abs(cloud.points[:, 1]).max() <= 1e-3
    assert np.allclose(np.abs(cloud.normals[:, 1]), 1.0, atol=1e-6)


def test_extract_points_on_sphere_fixture():
    fixture = make_scene(FixtureSpec())
    cloud = extract_points(fixture.scene, make_cameras(FixtureSpec()))
    err = np.abs(np.linalg.norm(cloud.points, axis=1) - 1.0)
    assert len(cloud) > 1000
    assert np.mean(err <= 0.02) >= 0.95


def test_extract_points_is_deterministic():
    fixture = make_scene(FixtureSpec(gaussian_count=128, views=4, resolution=16))
    cams = make_cameras(FixtureSpec(views=4, resolution=16))
    a, b = extract_points(fixture.scene, cams), extract_points(fixture.scene, cams)
    assert np.array_equal(a.points, b.points) and np.array_equal(a.normals, b.normals)
