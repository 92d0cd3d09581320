"""Forward rasterization of 2D Gaussian disks into per-pixel attribute buffers.

Every pixel ray is intersected with the plane of each disk it can reach; the local disk
coordinates ``(u, v)`` give the Gaussian weight, and contributions are alpha-composited
front to back in exact per-pixel depth order. Gradients come from torch autograd over the
same computation (see :func:`backward_gbuffer`).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import torch

from .scene import Camera, GaussianScene, cross3, dot3, normalize, orthonormal_frame

NEAR_PLANE = 0.01
CUTOFF_SQ = 9.0  # disk support u^2 + v^2 <= 9 (3 sigma)
PARALLEL_EPS = 1e-9
ALPHA_EPS = 1e-4


def disk_point(position, t_u, t_v, scale, u, v):
    """World point at local coordinates ``(u, v)`` of a disk."""
    u = torch.as_tensor(u, dtype=position.dtype)[..., None]
    v = torch.as_tensor(v, dtype=position.dtype)[..., None]
    return position + scale[..., 0:1] * t_u * u + scale[..., 1:2] * t_v * v


def gaussian_weight(u, v):
    return torch.exp(-(u * u + v * v) / 2)


def intersect(origin, dirs, position, t_u, t_v, normal, scale):
    """Ray/disk-plane intersection, elementwise over broadcast ray and disk tensors.

    Returns ``(u, v, depth, hit)``; ``hit`` is False when the ray is parallel to the plane,
    the hit lies at or before the near plane, or outside the 3-sigma support. Entries that
    miss carry finite but meaningless ``u, v, depth``.
    """
    denom = dot3(dirs, normal)
    facing = torch.abs(denom) >= PARALLEL_EPS
    safe = torch.where(facing, denom, torch.ones_like(denom))
    depth = dot3(position - origin, normal) / safe
    rel = origin + depth[..., None] * dirs - position
    u = dot3(rel, t_u) / scale[..., 0]
    v = dot3(rel, t_v) / scale[..., 1]
    hit = facing & (depth > NEAR_PLANE) & (u * u + v * v <= CUTOFF_SQ)
    return u, v, depth, hit


def pixel_to_local(camera: Camera, scene: GaussianScene, index: int, pixel):
    """Local ``(u, v, depth)`` where the ray through image point ``pixel`` meets disk ``index``.

    Returns ``None`` for a parallel ray or a hit at/behind the near plane. The 3-sigma
    support is not applied here.
    """
    pixels = torch.as_tensor(pixel, dtype=scene.dtype).reshape(1, 2)
    origin, dirs = camera.rays(pixels)
    t_u, t_v = scene.frame()
    normal = normalize(cross3(t_u, t_v))
    u, v, depth, _ = intersect(
        origin, dirs[0], scene.position[index], t_u[index], t_v[index], normal[index], scene.scale()[index]
    )
    if abs(float(dot3(dirs[0], normal[index]))) < PARALLEL_EPS or float(depth) <= NEAR_PLANE:
        return None
    return float(u), float(v), float(depth)


def composite_pixel(attributes, alphas, weights_g, check_order_depths=None):
    """Front-to-back compositing of one pixel's sorted contributions.

    ``attributes`` is ``(n, C)``, ``alphas`` and ``weights_g`` are ``(n,)``. Returns
    ``(B, accum_alpha, blend_weights)``. When ``check_order_depths`` is given the
    contributions must be sorted by non-decreasing depth.
    """
    if check_order_depths is not None and len(check_order_depths) > 1:
        d = torch.as_tensor(check_order_depths)
        if bool((d[1:] < d[:-1]).any()):
            raise ValueError("contributions are not sorted front to back")
    attributes = torch.as_tensor(attributes)
    n, channels = attributes.shape
    out = torch.zeros(channels, dtype=attributes.dtype)
    accum = torch.zeros((), dtype=attributes.dtype)
    transmittance = torch.ones((), dtype=attributes.dtype)
    weights = []
    for i in range(n):
        a = alphas[i] * weights_g[i]
        w = a * transmittance
        out = out + attributes[i] * w
        accum = accum + w
        transmittance = transmittance * (1 - a)
        weights.append(w)
    weights = torch.stack(weights) if weights else torch.zeros(0, dtype=attributes.dtype)
    return out, accum, weights


# Channel layout of the composited attribute tensor.
_ALBEDO, _METALLIC, _ROUGHNESS, _NORMAL, _CLAY, _DEPTH = (
    slice(0, 3),
    slice(3, 4),
    slice(4, 5),
    slice(5, 8),
    slice(8, 11),
    slice(11, 12),
)
N_CHANNELS = 12


@dataclass
class GBuffer:
    """Per-pixel composited attributes of one view. Images are ``(H, W, C)``.

    ``albedo``, ``metallic``, ``roughness`` and ``clay`` are premultiplied by coverage (the
    raw compositing sums); ``normal`` is re-normalized and ``depth`` is the coverage-weighted
    mean hit depth. ``indirect_sh`` holds the SH coefficients composited with opacity-only
    weights, ``(H, W, 3, 9)``.
    """

    albedo: torch.Tensor
    metallic: torch.Tensor
    roughness: torch.Tensor
    normal: torch.Tensor
    clay: torch.Tensor
    alpha: torch.Tensor
    depth: torch.Tensor
    indirect_sh: torch.Tensor
    ray_origin: torch.Tensor
    ray_dirs: torch.Tensor
    # contributor lists: pixel index, gaussian index, blend weight (sorted per pixel)
    pair_pixel: torch.Tensor
    pair_gaussian: torch.Tensor
    pair_weight: torch.Tensor
    # intermediate nodes the backward pass differentiates against
    tangents_geometry: torch.Tensor | None = None
    tangents_normal: torch.Tensor | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.alpha.shape)

    def channels(self) -> dict[str, torch.Tensor]:
        names = ("albedo", "metallic", "roughness", "normal", "clay", "alpha", "depth", "indirect_sh")
        return {k: getattr(self, k) for k in names}

    def with_material(self, albedo, metallic: float, roughness: float) -> "GBuffer":
        """Copy with every Gaussian's material forced to constants and indirect light zeroed.

        Compositing is linear in the attributes, so this equals rendering a scene whose
        Gaussians all carry these materials.
        """
        alpha = self.alpha
        albedo = torch.as_tensor(albedo, dtype=alpha.dtype)
        changes = dict(
            albedo=alpha[..., None] * albedo,
            metallic=alpha * metallic,
            roughness=alpha * roughness,
            indirect_sh=torch.zeros_like(self.indirect_sh),
        )
        return self.with_channels(**changes)

    def with_channels(self, **changes) -> "GBuffer":
        """Copy with some channel tensors replaced."""
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return GBuffer(**values)


def _candidate_pairs(camera: Camera, position, t_u, t_v, scale, pixels):
    """Conservative (pixel, gaussian) candidates from each disk's projected 3-sigma box."""
    k = position.shape[0]
    n_pix = pixels.shape[0]
    corners = []
    for su in (-3.0, 3.0):
        for sv in (-3.0, 3.0):
            corners.append(position + su * scale[:, 0:1] * t_u + sv * scale[:, 1:2] * t_v)
    corners = torch.stack(corners, dim=1)  # (K, 4, 3)
    xy, z = camera.project(corners.reshape(-1, 3))
    xy, z = xy.reshape(k, 4, 2), z.reshape(k, 4)
    in_front = (z > NEAR_PLANE).all(dim=1)
    pad = 1.0
    lo = torch.where(in_front[:, None], xy.min(dim=1).values - pad, torch.full_like(xy[:, 0], -float("inf")))
    hi = torch.where(in_front[:, None], xy.max(dim=1).values + pad, torch.full_like(xy[:, 0], float("inf")))
    # disks whose plane lies entirely behind the camera can never be hit
    behind = (z <= NEAR_PLANE).all(dim=1)
    inside = (
        (pixels[:, None, 0] >= lo[None, :, 0])
        & (pixels[:, None, 0] <= hi[None, :, 0])
        & (pixels[:, None, 1] >= lo[None, :, 1])
        & (pixels[:, None, 1] <= hi[None, :, 1])
        & ~behind[None, :]
    )
    pix, gid = torch.nonzero(inside, as_tuple=True)
    return pix, gid, n_pix


def _dense_layout(pix, depth, n_pix):
    """Sort pairs by (pixel, depth) and return the permutation plus dense slot indices."""
    order = torch.sort(depth, stable=True).indices
    order = order[torch.sort(pix[order], stable=True).indices]
    pix_sorted = pix[order]
    counts = torch.bincount(pix_sorted, minlength=n_pix)
    starts = torch.cumsum(counts, 0) - counts
    slot = torch.arange(pix_sorted.shape[0]) - starts[pix_sorted]
    kmax = int(counts.max()) if pix_sorted.numel() else 0
    return order, slot, max(kmax, 1)


def _composite_dense(values, a, pix, slot, n_pix, kmax):
    """Composite per-pair ``values (n, C)`` with per-pair alpha ``a (n,)``.

    Pairs are scattered into a zero-padded ``(P, kmax)`` layout; padded entries have zero
    alpha, which leaves products and sums unchanged, so the result equals the sequential
    per-pixel fold of :func:`composite_pixel`.
    """
    dense_a = a.new_zeros(n_pix, kmax).index_put((pix, slot), a)
    dense_v = values.new_zeros(n_pix, kmax, values.shape[1]).index_put((pix, slot), values)
    keep = torch.cumprod(1 - dense_a, dim=1)
    trans = torch.cat((torch.ones_like(keep[:, :1]), keep[:, :-1]), dim=1)
    w = dense_a * trans
    out = _sequential_sum(dense_v * w[..., None])
    accum = _sequential_sum(w)
    return out, accum, w[pix, slot]


def _sequential_sum(x):
    """Sum over dim 1 accumulated in index order, so values match a front-to-back fold.

    The value comes from a cumulative sum; the gradient flows through a plain sum, whose
    backward is a broadcast instead of the reversed cumulative sum.
    """
    with torch.no_grad():
        exact = torch.cumsum(x, dim=1)[:, -1]
    if not x.requires_grad:
        return exact
    s = x.sum(dim=1)
    return exact + (s - s.detach())


def render_gbuffer(scene: GaussianScene, camera: Camera, with_sh: bool = True) -> GBuffer:
    """Rasterize ``scene`` from ``camera`` into a :class:`GBuffer`.

    Differentiable with respect to every tensor of ``scene``.
    """
    dtype = scene.dtype
    h, w = camera.height, camera.width
    pixels = camera.pixel_centers(dtype)
    origin, dirs = camera.rays(pixels)

    tan_geo = scene.tangents.clone()
    tan_nrm = scene.tangents.clone()
    t_u, t_v = orthonormal_frame(tan_geo)
    plane_normal = normalize(cross3(t_u, t_v))
    nu, nv = orthonormal_frame(tan_nrm)
    attr_normal = normalize(cross3(nu, nv))
    scale = scene.scale()
    opacity = scene.opacity()

    with torch.no_grad():
        pix, gid, n_pix = _candidate_pairs(camera, scene.position, t_u, t_v, scale, pixels)
        _, _, depth0, hit = intersect(
            origin, dirs[pix], scene.position[gid], t_u[gid], t_v[gid], plane_normal[gid], scale[gid]
        )
        pix, gid, depth0 = pix[hit], gid[hit], depth0[hit]
        order, slot, kmax = _dense_layout(pix, depth0, n_pix)
        pix, gid = pix[order], gid[order]

    u, v, depth, _ = intersect(origin, dirs[pix], scene.position[gid], t_u[gid], t_v[gid], plane_normal[gid], scale[gid])
    g = gaussian_weight(u, v)
    a = opacity[gid] * g

    with torch.no_grad():
        flip = torch.where(dot3(attr_normal[gid], dirs[pix]) > 0, -1.0, 1.0).to(dtype)
    values = torch.cat(
        (
            scene.albedo()[gid],
            scene.metallic()[gid, None],
            scene.roughness()[gid, None],
            attr_normal[gid] * flip[:, None],
            scene.clay_color()[gid],
            depth[:, None],
        ),
        dim=1,
    )
    out, accum, pair_w = _composite_dense(values, a, pix, slot, n_pix, kmax)

    covered = accum > ALPHA_EPS
    safe_accum = torch.where(covered, accum, torch.ones_like(accum))
    depth_img = torch.where(covered, out[:, _DEPTH][:, 0] / safe_accum, torch.zeros_like(accum))
    n_raw = out[:, _NORMAL]
    n_len = torch.sqrt(dot3(n_raw, n_raw))
    n_ok = covered & (n_len > 0)
    normal_img = torch.where(
        n_ok[:, None], n_raw / torch.where(n_ok, n_len, torch.ones_like(n_len))[:, None], torch.zeros_like(n_raw)
    )

    if with_sh:
        sh_vals = scene.indirect_sh[gid].reshape(-1, scene.indirect_sh.shape[1] * scene.indirect_sh.shape[2])
        sh_out, _, _ = _composite_dense(sh_vals, opacity[gid], pix, slot, n_pix, kmax)
    else:
        sh_out = torch.zeros(n_pix, scene.indirect_sh.shape[1] * scene.indirect_sh.shape[2], dtype=dtype)

    return GBuffer(
        albedo=out[:, _ALBEDO].reshape(h, w, 3),
        metallic=out[:, _METALLIC].reshape(h, w),
        roughness=out[:, _ROUGHNESS].reshape(h, w),
        normal=normal_img.reshape(h, w, 3),
        clay=out[:, _CLAY].reshape(h, w, 3),
        alpha=accum.reshape(h, w),
        depth=depth_img.reshape(h, w),
        indirect_sh=sh_out.reshape(h, w, 3, -1),
        ray_origin=origin,
        ray_dirs=dirs.reshape(h, w, 3),
        pair_pixel=pix,
        pair_gaussian=gid,
        pair_weight=pair_w.detach(),
        tangents_geometry=tan_geo,
        tangents_normal=tan_nrm,
    )


def render_gbuffer_reference(scene: GaussianScene, camera: Camera) -> dict[str, torch.Tensor]:
    """Slow per-pixel renderer without spatial culling; used as a test oracle.

    Loops over pixels, tests every Gaussian, sorts hits by depth and folds them with
    :func:`composite_pixel`.
    """
    with torch.no_grad():
        dtype = scene.dtype
        pixels = camera.pixel_centers(dtype)
        origin, dirs = camera.rays(pixels)
        t_u, t_v = scene.frame()
        normal = normalize(cross3(t_u, t_v))
        scale, opacity = scene.scale(), scene.opacity()
        albedo, metallic, roughness, clay = scene.albedo(), scene.metallic(), scene.roughness(), scene.clay_color()
        n_pix = pixels.shape[0]
        out = torch.zeros(n_pix, N_CHANNELS, dtype=dtype)
        accum = torch.zeros(n_pix, dtype=dtype)
        for p in range(n_pix):
            d = dirs[p].expand(len(scene), 3)
            u, v, depth, hit = intersect(origin, d, scene.position, t_u, t_v, normal, scale)
            idx = [i for i in range(len(scene)) if bool(hit[i])]
            idx.sort(key=lambda i: float(depth[i]))
            if not idx:
                continue
            rows = []
            for i in idx:
                n_i = normal[i] if float(dot3(normal[i], dirs[p])) <= 0 else normal[i] * -1.0
                rows.append(torch.cat((albedo[i], metallic[i : i + 1], roughness[i : i + 1], n_i, clay[i], depth[i : i + 1])))
            g = gaussian_weight(u, v)
            b, acc, _ = composite_pixel(torch.stack(rows), opacity[idx], g[idx], depth[idx])
            out[p], accum[p] = b, acc
        h, w = camera.height, camera.width
        covered = accum > ALPHA_EPS
        depth_img = torch.where(covered, out[:, 11] / torch.where(covered, accum, torch.ones_like(accum)), 0.0)
        n_raw = out[:, _NORMAL]
        n_len = torch.sqrt(dot3(n_raw, n_raw))
        ok = covered & (n_len > 0)
        normal_img = torch.where(ok[:, None], n_raw / torch.where(ok, n_len, 1.0)[:, None], 0.0)
        return {
            "albedo": out[:, _ALBEDO].reshape(h, w, 3),
            "metallic": out[:, 3].reshape(h, w),
            "roughness": out[:, 4].reshape(h, w),
            "normal": normal_img.reshape(h, w, 3),
            "clay": out[:, _CLAY].reshape(h, w, 3),
            "alpha": accum.reshape(h, w),
            "depth": depth_img.reshape(h, w),
        }


@dataclass
class SplatGradients:
    """Per-Gaussian loss gradients for each raw parameter.

    The tangent gradient is split by path: ``tangents_geometry`` through the ray/disk
    intersection and coverage weights, ``tangents_normal`` through the shading normal.
    ``env`` holds the gradient for the environment base map when one is optimized.
    """

    position: torch.Tensor
    tangents_geometry: torch.Tensor
    tangents_normal: torch.Tensor
    log_scale: torch.Tensor
    opacity_logit: torch.Tensor
    albedo_logit: torch.Tensor
    metallic_logit: torch.Tensor
    roughness_logit: torch.Tensor
    clay_logit: torch.Tensor
    indirect_sh: torch.Tensor
    env: torch.Tensor | None = None

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    @property
    def tangents(self) -> torch.Tensor:
        return self.tangents_geometry + self.tangents_normal

    @classmethod
    def zeros_like(cls, scene: GaussianScene, env: torch.Tensor | None = None) -> "SplatGradients":
        z = torch.zeros_like
        return cls(
            position=z(scene.position),
            tangents_geometry=z(scene.tangents),
            tangents_normal=z(scene.tangents),
            log_scale=z(scene.log_scale),
            opacity_logit=z(scene.opacity_logit),
            albedo_logit=z(scene.albedo_logit),
            metallic_logit=z(scene.metallic_logit),
            roughness_logit=z(scene.roughness_logit),
            clay_logit=z(scene.clay_logit),
            indirect_sh=z(scene.indirect_sh),
            env=None if env is None else z(env),
        )

    def is_finite(self) -> bool:
        return all(v is None or bool(torch.isfinite(v).all()) for _, v in self.items())


GRADIENT_TARGETS = (
    "position",
    "tangents_geometry",
    "tangents_normal",
    "log_scale",
    "opacity_logit",
    "albedo_logit",
    "metallic_logit",
    "roughness_logit",
    "clay_logit",
    "indirect_sh",
)


def gradient_inputs(scene: GaussianScene, gbuffer: GBuffer) -> list[torch.Tensor]:
    if gbuffer.tangents_geometry is None or gbuffer.tangents_normal is None:
        raise ValueError("gbuffer carries no autograd graph; render it from a scene that requires grad")
    return [
        scene.position,
        gbuffer.tangents_geometry,
        gbuffer.tangents_normal,
        scene.log_scale,
        scene.opacity_logit,
        scene.albedo_logit,
        scene.metallic_logit,
        scene.roughness_logit,
        scene.clay_logit,
        scene.indirect_sh,
    ]


def scene_gradients(loss, scene: GaussianScene, gbuffer: GBuffer, env=None, retain_graph=False) -> SplatGradients:
    """Gradients of a scalar ``loss`` for every raw Gaussian parameter (and ``env`` if given)."""
    inputs = gradient_inputs(scene, gbuffer)
    if env is not None:
        inputs = inputs + [env]
    if not loss.requires_grad:
        return SplatGradients.zeros_like(scene, env)
    grads = torch.autograd.grad(loss, inputs, retain_graph=retain_graph, allow_unused=True)
    grads = [torch.zeros_like(x) if g is None else g for x, g in zip(inputs, grads)]
    values = dict(zip(GRADIENT_TARGETS, grads))
    return SplatGradients(**values, env=grads[-1] if env is not None else None)


def backward_gbuffer(scene: GaussianScene, gbuffer: GBuffer, upstream: dict[str, torch.Tensor], retain_graph=True):
    """Chain per-pixel channel gradients ``upstream`` (keyed like :meth:`GBuffer.channels`)
    back to the raw Gaussian parameters."""
    channels = gbuffer.channels()
    outs, grads = [], []
    for name, grad in upstream.items():
        if name not in channels:
            raise KeyError(f"unknown gbuffer channel {name!r}")
        if channels[name].requires_grad:
            outs.append(channels[name])
            grads.append(torch.as_tensor(grad, dtype=channels[name].dtype).expand_as(channels[name]))
    inputs = gradient_inputs(scene, gbuffer)
    if not outs:
        return SplatGradients.zeros_like(scene)
    result = torch.autograd.grad(outs, inputs, grads, retain_graph=retain_graph, allow_unused=True)
    result = [torch.zeros_like(x) if g is None else g for x, g in zip(inputs, result)]
    return SplatGradients(**dict(zip(GRADIENT_TARGETS, result)))
