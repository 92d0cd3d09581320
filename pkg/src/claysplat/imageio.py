"""Image and point-cloud file formats: PFM (float), PNG (8-bit) and ASCII PLY."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image


def write_pfm(path, image) -> None:
    """Write a little-endian PFM. ``image`` is (H, W) or (H, W, 3)."""
    data = np.asarray(image, dtype=np.float32)
    if data.ndim == 2:
        kind = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        kind = b"PF"
    else:
        raise ValueError(f"PFM needs (H, W) or (H, W, 3) data, got shape {data.shape}")
    height, width = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(kind + b"\n")
        fh.write(f"{width} {height}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        # PFM rows run bottom to top
        fh.write(np.ascontiguousarray(data[::-1]).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    match = re.match(rb"(P[Ff])\s+(\d+)\s+(\d+)\s+(-?[\d.eE+-]+)\s", raw)
    if match is None:
        raise ValueError(f"{path}: not a PFM file")
    kind, width, height, scale = match.groups()
    width, height, scale = int(width), int(height), float(scale)
    channels = 3 if kind == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    count = width * height * channels
    offset = match.end()
    if len(raw) - offset < 4 * count:
        raise ValueError(f"{path}: truncated PFM payload at byte {len(raw)}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).astype(np.float32)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return data.reshape(shape)[::-1].copy()


def to_uint8(image) -> np.ndarray:
    data = np.asarray(image, dtype=np.float64)
    return np.round(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, image) -> None:
    """Write an LDR image with values in [0, 1] (clipped) as 8-bit PNG."""
    data = to_uint8(image)
    mode = "L" if data.ndim == 2 else "RGB"
    Image.fromarray(data, mode=mode).save(path)


def read_png(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img, dtype=np.float64) / 255.0


def write_ply(path, points, normals=None) -> None:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(points)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if normals is not None:
        normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
        lines += ["property float nx", "property float ny", "property float nz"]
    lines.append("end_header")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
        table = points if normals is None else np.hstack([points, normals])
        np.savetxt(fh, table, fmt="%.9g")


def read_ply(path):
    """Return ``(points, normals_or_None)`` from an ASCII PLY written by :func:`write_ply`."""
    text = Path(path).read_text(encoding="utf-8")
    header, _, body = text.partition("end_header\n")
    if not header.startswith("ply"):
        raise ValueError(f"{path}: not a PLY file")
    if "format ascii" not in header:
        raise ValueError(f"{path}: only ASCII PLY is supported")
    count = int(re.search(r"element vertex (\d+)", header).group(1))
    props = re.findall(r"property \w+ (\w+)", header)
    table = np.loadtxt(body.splitlines(), ndmin=2) if count else np.zeros((0, len(props)))
    if table.shape != (count, len(props)):
        raise ValueError(f"{path}: expected {count} vertices with {len(props)} properties")
    points = table[:, [props.index(k) for k in ("x", "y", "z")]]
    normals = None
    if "nx" in props:
        normals = table[:, [props.index(k) for k in ("nx", "ny", "nz")]]
    return points, normals
