"""Persistent domain types: Gaussian disks, cameras, environment maps, views and point clouds.

Gaussian parameters are kept in their unconstrained ("raw") form so the optimizer never
needs a projection step:

* bounded attributes (opacity, albedo, metallic, roughness, clay color) are stored as logits,
* scales are stored as logs,
* the tangent frame is an unconstrained pair of 3-vectors, orthonormalized (Gram-Schmidt,
  ``t_u`` first) whenever it is read.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

SH_COEFFS = 9  # degree-2 real spherical harmonics

MAGIC = b"CSPL"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sII")

# (name, floats per record) in on-disk order; the normal is derived and not stored.
RECORD_FIELDS: tuple[tuple[str, int], ...] = (
    ("position", 3),
    ("tangent_u", 3),
    ("tangent_v", 3),
    ("scale_u", 1),
    ("scale_v", 1),
    ("opacity", 1),
    ("albedo", 3),
    ("metallic", 1),
    ("roughness", 1),
    ("clay_color", 3),
    ("indirect_sh", 3 * SH_COEFFS),
)
RECORD_FLOATS = sum(n for _, n in RECORD_FIELDS)
RECORD_BYTES = 4 * RECORD_FLOATS

_FRAME_EPS = 1e-12


class SceneFormatError(ValueError):
    """A scene file could not be parsed; ``offset`` is the byte where the problem starts."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class SceneValidationError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


def logit(x, eps: float = 0.0):
    x = torch.as_tensor(x, dtype=torch.float64)
    if eps:
        x = x.clamp(eps, 1.0 - eps)
    return torch.log(x) - torch.log1p(-x)


def dot3(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Dot product over the last axis, written out so the summation order is fixed."""
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def cross3(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return torch.stack(
        (
            a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
            a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
            a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
        ),
        dim=-1,
    )


def normalize(v: torch.Tensor) -> torch.Tensor:
    return v / torch.sqrt(dot3(v, v))[..., None]


def orthonormal_frame(tangents: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Gram-Schmidt on raw tangents ``(..., 2, 3)``; returns unit ``(t_u, t_v)``."""
    t_u = normalize(tangents[..., 0, :])
    raw_v = tangents[..., 1, :]
    t_v = normalize(raw_v - dot3(raw_v, t_u)[..., None] * t_u)
    return t_u, t_v


@dataclass
class GaussianScene:
    """A set of oriented 2D Gaussian disks in raw (unconstrained) parameterization.

    Shapes, for ``K`` Gaussians: position ``(K, 3)``, tangents ``(K, 2, 3)``,
    log_scale ``(K, 2)``, opacity/metallic/roughness logits ``(K,)``, albedo/clay logits
    ``(K, 3)``, indirect_sh ``(K, 3, 9)`` (per color channel, 9 coefficients).
    """

    position: torch.Tensor
    tangents: torch.Tensor
    log_scale: torch.Tensor
    opacity_logit: torch.Tensor
    albedo_logit: torch.Tensor
    metallic_logit: torch.Tensor
    roughness_logit: torch.Tensor
    clay_logit: torch.Tensor
    indirect_sh: torch.Tensor

    def __len__(self) -> int:
        return self.position.shape[0]

    # -- activated views -------------------------------------------------------------
    def frame(self) -> tuple[torch.Tensor, torch.Tensor]:
        return orthonormal_frame(self.tangents)

    def normal(self) -> torch.Tensor:
        t_u, t_v = self.frame()
        return normalize(cross3(t_u, t_v))

    def scale(self) -> torch.Tensor:
        return torch.exp(self.log_scale)

    def opacity(self) -> torch.Tensor:
        return torch.sigmoid(self.opacity_logit)

    def albedo(self) -> torch.Tensor:
        return torch.sigmoid(self.albedo_logit)

    def metallic(self) -> torch.Tensor:
        return torch.sigmoid(self.metallic_logit)

    def roughness(self) -> torch.Tensor:
        return torch.sigmoid(self.roughness_logit)

    def clay_color(self) -> torch.Tensor:
        return torch.sigmoid(self.clay_logit)

    # -- construction ----------------------------------------------------------------
    @classmethod
    def empty(cls, dtype=torch.float64) -> "GaussianScene":
        z = lambda *s: torch.zeros(*s, dtype=dtype)  # noqa: E731
        return cls(z(0, 3), z(0, 2, 3), z(0, 2), z(0), z(0, 3), z(0), z(0), z(0, 3), z(0, 3, SH_COEFFS))

    @classmethod
    def from_attributes(
        cls,
        position,
        tangent_u,
        tangent_v,
        scale,
        opacity,
        albedo,
        metallic,
        roughness,
        clay_color=None,
        indirect_sh=None,
        dtype=torch.float64,
    ) -> "GaussianScene":
        """Build a scene from constrained attribute values, rejecting invalid ones.

        Values of exactly 0 or 1 for bounded attributes are nudged inside by 1e-9 so the
        stored logits stay finite.
        """
        t = lambda x: torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=torch.float64)  # noqa: E731
        position = t(position).reshape(-1, 3)
        k = position.shape[0]
        tangent_u = t(tangent_u).reshape(k, 3)
        tangent_v = t(tangent_v).reshape(k, 3)
        scale = t(scale).reshape(k, 2)
        opacity = t(opacity).reshape(k)
        albedo = t(albedo).reshape(k, 3)
        metallic = t(metallic).reshape(k)
        roughness = t(roughness).reshape(k)
        clay_color = torch.full((k, 3), 0.5, dtype=torch.float64) if clay_color is None else t(clay_color).reshape(k, 3)
        indirect_sh = (
            torch.zeros(k, 3, SH_COEFFS, dtype=torch.float64)
            if indirect_sh is None
            else t(indirect_sh).reshape(k, 3, SH_COEFFS)
        )
        violations = []
        for name, value in (
            ("opacity", opacity),
            ("albedo", albedo),
            ("metallic", metallic),
            ("roughness", roughness),
            ("clay_color", clay_color),
        ):
            bad = ~((value >= 0) & (value <= 1))
            for idx in torch.nonzero(_rows(bad).any(dim=1)).flatten().tolist():
                violations.append(f"{name} out of [0, 1] at gaussian {idx}")
        for idx in torch.nonzero(~(scale > 0).all(dim=1)).flatten().tolist():
            violations.append(f"non-positive scale at gaussian {idx}")
        tangents = torch.stack((tangent_u, tangent_v), dim=1)
        violations += _frame_violations(tangents)
        for name, value in (("position", position), ("indirect_sh", indirect_sh)):
            for idx in torch.nonzero(~torch.isfinite(_rows(value)).all(dim=1)).flatten().tolist():
                violations.append(f"non-finite {name} at gaussian {idx}")
        if violations:
            raise SceneValidationError(violations)
        eps = 1e-9
        scene = cls(
            position=position,
            tangents=tangents,
            log_scale=torch.log(scale),
            opacity_logit=logit(opacity, eps),
            albedo_logit=logit(albedo, eps),
            metallic_logit=logit(metallic, eps),
            roughness_logit=logit(roughness, eps),
            clay_logit=logit(clay_color, eps),
            indirect_sh=indirect_sh,
        )
        return scene.to(dtype)

    # -- tensor plumbing ---------------------------------------------------------------
    def tensors(self) -> dict[str, torch.Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def map(self, fn) -> "GaussianScene":
        return GaussianScene(**{k: fn(v) for k, v in self.tensors().items()})

    def to(self, dtype) -> "GaussianScene":
        return self.map(lambda v: v.to(dtype))

    def detach(self) -> "GaussianScene":
        return self.map(lambda v: v.detach())

    def clone(self) -> "GaussianScene":
        return self.map(lambda v: v.detach().clone())

    def requires_grad_(self, flag: bool = True) -> "GaussianScene":
        for v in self.tensors().values():
            v.requires_grad_(flag)
        return self

    def replace(self, **changes) -> "GaussianScene":
        return replace(self, **changes)

    def concat(self, other: "GaussianScene") -> "GaussianScene":
        a, b = self.tensors(), other.tensors()
        return GaussianScene(**{k: torch.cat((a[k], b[k].to(a[k].dtype)), dim=0) for k in a})

    @property
    def dtype(self):
        return self.position.dtype

    def radius(self) -> float:
        """Bounding radius of the Gaussian centers around their centroid."""
        if len(self) == 0:
            return 1.0
        p = self.position.detach()
        return float(torch.sqrt(dot3(p - p.mean(0), p - p.mean(0))).max().clamp_min(1e-6))

    def equal(self, other: "GaussianScene") -> bool:
        a, b = self.tensors(), other.tensors()
        return all(a[k].shape == b[k].shape and torch.equal(a[k], b[k].to(a[k].dtype)) for k in a)

    # -- record layout -----------------------------------------------------------------
    def to_records(self) -> np.ndarray:
        """Raw parameters as a ``(K, 47)`` float64 table in on-disk field order."""
        d = self.detach().to(torch.float64)
        k = len(self)
        cols = [
            d.position,
            d.tangents[:, 0],
            d.tangents[:, 1],
            d.log_scale[:, :1],
            d.log_scale[:, 1:],
            d.opacity_logit[:, None],
            d.albedo_logit,
            d.metallic_logit[:, None],
            d.roughness_logit[:, None],
            d.clay_logit,
            d.indirect_sh.reshape(k, 3 * SH_COEFFS),
        ]
        return torch.cat(cols, dim=1).numpy()

    @classmethod
    def from_records(cls, table, dtype=torch.float64) -> "GaussianScene":
        table = torch.as_tensor(np.asarray(table, dtype=np.float64)).reshape(-1, RECORD_FLOATS)
        k = table.shape[0]
        cols = {}
        start = 0
        for name, n in RECORD_FIELDS:
            cols[name] = table[:, start : start + n]
            start += n
        scene = cls(
            position=cols["position"].clone(),
            tangents=torch.stack((cols["tangent_u"], cols["tangent_v"]), dim=1).clone(),
            log_scale=torch.cat((cols["scale_u"], cols["scale_v"]), dim=1).clone(),
            opacity_logit=cols["opacity"][:, 0].clone(),
            albedo_logit=cols["albedo"].clone(),
            metallic_logit=cols["metallic"][:, 0].clone(),
            roughness_logit=cols["roughness"][:, 0].clone(),
            clay_logit=cols["clay_color"].clone(),
            indirect_sh=cols["indirect_sh"].reshape(k, 3, SH_COEFFS).clone(),
        )
        return scene.to(dtype)


def _rows(x: torch.Tensor) -> torch.Tensor:
    """View a per-Gaussian tensor as ``(K, n)`` (safe for K = 0)."""
    return x.flatten(1) if x.ndim > 1 else x[:, None]


def _frame_violations(tangents: torch.Tensor) -> list[str]:
    t_u, t_v = tangents[:, 0], tangents[:, 1]
    nu = torch.sqrt(dot3(t_u, t_u))
    nv = torch.sqrt(dot3(t_v, t_v))
    area = torch.sqrt(dot3(cross3(t_u, t_v), cross3(t_u, t_v)))
    degenerate = ~(area > _FRAME_EPS * torch.clamp_min(nu * nv, 1.0)) | ~(nu > _FRAME_EPS)
    return [f"degenerate tangent frame at gaussian {i}" for i in torch.nonzero(degenerate).flatten().tolist()]


def validate(scene: GaussianScene) -> list[str]:
    """Return every invariant violation of ``scene`` (an empty list means valid)."""
    violations = []
    k = len(scene)
    expected = {
        "position": (k, 3),
        "tangents": (k, 2, 3),
        "log_scale": (k, 2),
        "opacity_logit": (k,),
        "albedo_logit": (k, 3),
        "metallic_logit": (k,),
        "roughness_logit": (k,),
        "clay_logit": (k, 3),
        "indirect_sh": (k, 3, SH_COEFFS),
    }
    tensors = {name: value.detach() for name, value in scene.tensors().items()}
    for name, shape in expected.items():
        if tuple(tensors[name].shape) != shape:
            violations.append(f"shape mismatch for {name}: {tuple(tensors[name].shape)} != {shape}")
    if violations:
        return violations
    scale = torch.exp(tensors["log_scale"])
    for i in torch.nonzero(~(scale > 0).all(dim=1)).flatten().tolist():
        violations.append(f"non-positive scale at gaussian {i}")
    for name, value in tensors.items():
        if name == "log_scale":
            value = torch.where(torch.isneginf(value), torch.zeros_like(value), value)
        bad = ~torch.isfinite(_rows(value)).all(dim=1)
        for i in torch.nonzero(bad).flatten().tolist():
            violations.append(f"non-finite {name} at gaussian {i}")
    violations += _frame_violations(tensors["tangents"])
    return violations


def save_scene(scene: GaussianScene, path) -> None:
    """Write the little-endian ``CSPL`` v1 scene file (f32 raw records)."""
    table = scene.to_records().astype("<f4")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, FORMAT_VERSION, len(scene)))
        fh.write(table.tobytes())


def load_scene(path, dtype=torch.float64) -> GaussianScene:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise SceneFormatError("file shorter than the 12-byte header", len(raw))
    magic, version, count = HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise SceneFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != FORMAT_VERSION:
        raise SceneFormatError(f"unsupported format version {version}", 4)
    expected = HEADER.size + count * RECORD_BYTES
    if len(raw) != expected:
        raise SceneFormatError(
            f"header declares {count} gaussians ({expected} bytes) but file has {len(raw)} bytes",
            min(len(raw), expected),
        )
    table = np.frombuffer(raw, dtype="<f4", offset=HEADER.size, count=count * RECORD_FLOATS)
    table = table.reshape(count, RECORD_FLOATS).astype(np.float64)
    bad = np.argwhere(~np.isfinite(table))
    if len(bad):
        row, col = (int(x) for x in bad[0])
        start = 0
        for name, n in RECORD_FIELDS:
            if col < start + n:
                break
            start += n
        offset = HEADER.size + row * RECORD_BYTES + 4 * col
        raise SceneFormatError(f"non-finite value in field '{name}' of gaussian {row}", offset)
    scene = GaussianScene.from_records(table, dtype=dtype)
    violations = validate(scene)
    if violations:
        row = int(violations[0].rsplit(" ", 1)[-1]) if violations[0][-1].isdigit() else 0
        raise SceneFormatError(f"invalid scene: {violations[0]}", HEADER.size + row * RECORD_BYTES)
    return scene


def _matrix(x, shape) -> np.ndarray:
    arr = np.array(x, dtype=np.float64).reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Camera:
    """Pinhole camera; ``rotation``/``translation`` map world points into camera space.

    Camera space follows the OpenCV convention: +x right, +y down, +z forward. Pixel
    ``(row i, col j)`` has its center at image coordinates ``(j + 0.5, i + 0.5)``.
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(repr=False)
    translation: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "rotation", _matrix(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _matrix(self.translation, (3,)))
        if self.width <= 0 or self.height <= 0:
            raise ValueError("camera needs a positive image size")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError(f"rotation is not orthonormal (max error {err:.2e})")

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0), width=32, height=32, fov_deg=40.0) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rotation = np.stack((right, down, forward))
        focal = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
        return cls(width, height, focal, focal, width / 2, height / 2, rotation, -rotation @ eye)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def pixel_centers(self, dtype=torch.float64) -> torch.Tensor:
        """Image-plane coordinates ``(H*W, 2)`` of every pixel center, row-major."""
        ys, xs = torch.meshgrid(
            torch.arange(self.height, dtype=dtype) + 0.5,
            torch.arange(self.width, dtype=dtype) + 0.5,
            indexing="ij",
        )
        return torch.stack((xs.reshape(-1), ys.reshape(-1)), dim=1)

    def rays(self, pixels: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Origin ``(3,)`` and unit world directions ``(N, 3)`` through image coordinates."""
        dtype = pixels.dtype
        rot = torch.tensor(self.rotation, dtype=dtype)
        dx = (pixels[:, 0] - self.cx) / self.fx
        dy = (pixels[:, 1] - self.cy) / self.fy
        # world direction = R^T d_cam, with d_cam = (dx, dy, 1)
        d = torch.stack([rot[0, k] * dx + rot[1, k] * dy + rot[2, k] for k in range(3)], dim=-1)
        return torch.tensor(self.center, dtype=dtype), normalize(d)

    def project(self, points: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Image coordinates ``(N, 2)`` and camera-space depth ``(N,)`` of world points."""
        rot = torch.tensor(self.rotation, dtype=points.dtype)
        trans = torch.tensor(self.translation, dtype=points.dtype)
        cam = points @ rot.T + trans
        z = cam[..., 2]
        xy = torch.stack((self.fx * cam[..., 0] / z + self.cx, self.fy * cam[..., 1] / z + self.cy), dim=-1)
        return xy, z

    def transformed(self, rotation, translation) -> "Camera":
        """The same camera after a rigid world transform ``x -> rotation @ x + translation``."""
        rotation = np.asarray(rotation, dtype=np.float64)
        new_rot = self.rotation @ rotation.T
        new_trans = self.translation - new_rot @ np.asarray(translation, dtype=np.float64)
        return replace(self, rotation=new_rot, translation=new_trans)

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(**d)


@dataclass
class EnvironmentMap:
    """Lat-long radiance (z up) with its roughness-prefiltered levels and the split-sum LUT.

    ``base`` is ``(H, W, 3)``; ``prefiltered`` is ``(n_levels, H, W, 3)`` with level ``k``
    convolved for roughness ``k / (n_levels - 1)`` (level 0 is ``base``); ``brdf_lut`` is
    ``(R, R, 2)`` indexed by ``(cos_theta_v, roughness)``.
    """

    base: torch.Tensor
    prefiltered: torch.Tensor
    brdf_lut: torch.Tensor

    def __post_init__(self):
        if self.base.ndim != 3 or self.base.shape[2] != 3:
            raise ValueError(f"environment base must be (H, W, 3), got {tuple(self.base.shape)}")
        if self.prefiltered.shape[0] < 2:
            raise ValueError("environment needs at least 2 prefiltered levels")
        if self.prefiltered.shape[1:] != self.base.shape:
            raise ValueError("prefiltered levels must match the base resolution")
        if bool((self.base.detach() < 0).any()):
            raise ValueError("environment radiance must be non-negative")
        lut = self.brdf_lut.detach()
        if lut.ndim != 3 or lut.shape[2] != 2 or bool(((lut < 0) | (lut > 1.5)).any()):
            raise ValueError("BRDF LUT must be (R, R, 2) with entries in [0, 1.5]")

    @property
    def n_levels(self) -> int:
        return self.prefiltered.shape[0]


@dataclass
class TrainView:
    camera: Camera
    rgb: torch.Tensor
    clay: torch.Tensor | None = None
    mask: torch.Tensor | None = None

    def __post_init__(self):
        shape = (self.camera.height, self.camera.width, 3)
        if tuple(self.rgb.shape) != shape:
            raise ValueError(f"rgb shape {tuple(self.rgb.shape)} does not match camera {shape}")
        if self.clay is not None and tuple(self.clay.shape) != shape:
            raise ValueError(f"clay shape {tuple(self.clay.shape)} does not match rgb {shape}")
        if self.mask is not None and tuple(self.mask.shape) != shape[:2]:
            raise ValueError(f"mask shape {tuple(self.mask.shape)} does not match rgb {shape[:2]}")
        for name in ("rgb", "clay"):
            img = getattr(self, name)
            if img is not None and bool(((img < 0) | (img > 1)).any()):
                raise ValueError(f"{name} values must lie in [0, 1]")


@dataclass
class PointCloud:
    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(self.points).all():
            raise ValueError("point cloud has non-finite coordinates")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if self.normals.shape != self.points.shape:
                raise ValueError("normals must match points")
            if len(self.normals) and np.abs(np.linalg.norm(self.normals, axis=1) - 1).max() > 1e-5:
                raise ValueError("normals must be unit length")

    def __len__(self) -> int:
        return len(self.points)
