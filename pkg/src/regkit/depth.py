"""Depth images: pinhole back-projection, z-buffer rendering, PNG I/O.

Depth is stored as 16-bit samples with an explicit ``depth_scale``
(meters per stored unit, e.g. 0.001 for millimeter depth); a stored
value of 0 marks an invalid pixel. Images pair with a sidecar JSON file
carrying ``{fx, fy, cx, cy, depth_scale}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .geometry import RigidTransform, transform_points
from .mesh import TriangleMesh
from .pointcloud import PointCloud

DEPTH_MAX = np.iinfo(np.uint16).max


@dataclass(frozen=True)
class PinholeIntrinsics:
    """Pinhole camera model; focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    depth_scale: float = 0.001

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.depth_scale <= 0:
            raise ValueError("depth_scale must be positive")

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "depth_scale": self.depth_scale,
        }

    @staticmethod
    def from_dict(d: dict) -> "PinholeIntrinsics":
        return PinholeIntrinsics(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            depth_scale=float(d["depth_scale"]),
        )


@dataclass(frozen=True)
class DepthImage:
    """Row-major 16-bit depth samples; 0 marks an invalid pixel."""

    data: NDArray[np.uint16]  # shape (height, width)

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.uint16)
        if d.ndim != 2 or d.shape[0] < 1 or d.shape[1] < 1:
            raise ValueError(f"depth data must be (H, W) with positive dims, got {d.shape}")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def depth_to_pointcloud(
    img: DepthImage, k: PinholeIntrinsics, mask: NDArray[np.bool_] | None = None
) -> PointCloud:
    """Back-project valid (and masked-in) pixels to camera-frame points.

    Pixel (u, v) with stored depth d maps to z = d * depth_scale,
    x = (u - cx) * z / fx, y = (v - cy) * z / fy. Points come out in
    row-major pixel order.
    """
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != img.data.shape:
            raise ValueError(
                f"mask shape {mask.shape} does not match image {img.data.shape}"
            )
    valid = img.data > 0
    if mask is not None:
        valid &= mask
    v_idx, u_idx = np.nonzero(valid)
    z = img.data[v_idx, u_idx].astype(np.float64) * k.depth_scale
    x = (u_idx - k.cx) * z / k.fx
    y = (v_idx - k.cy) * z / k.fy
    return PointCloud(np.column_stack([x, y, z]))


def render_depth(
    mesh: TriangleMesh,
    pose: RigidTransform,
    k: PinholeIntrinsics,
    width: int,
    height: int,
) -> DepthImage:
    """Rasterize the posed mesh into a z-buffer depth image.

    ``pose`` maps model coordinates into the camera frame (+z forward).
    Depth is the nearest surface hit per pixel, quantized by
    ``depth_scale``; pixels with no hit (or triangles behind the camera)
    stay 0. Perspective-correct interpolation of 1/z keeps planar
    surfaces planar after back-projection.
    """
    if width < 1 or height < 1:
        raise ValueError("image dimensions must be positive")
    cam = transform_points(pose, mesh.vertices)
    zbuf = np.full((height, width), np.inf)

    for tri_idx in mesh.faces:
        corners = cam[tri_idx]
        z = corners[:, 2]
        if np.any(z <= 1e-9):  # no near-plane clipping; skip the triangle
            continue
        u = k.fx * corners[:, 0] / z + k.cx
        v = k.fy * corners[:, 1] / z + k.cy

        u_min = max(int(np.floor(u.min() - 0.5)) , 0)
        u_max = min(int(np.ceil(u.max() + 0.5)), width - 1)
        v_min = max(int(np.floor(v.min() - 0.5)), 0)
        v_max = min(int(np.ceil(v.max() + 0.5)), height - 1)
        if u_min > u_max or v_min > v_max:
            continue

        area = (u[1] - u[0]) * (v[2] - v[0]) - (u[2] - u[0]) * (v[1] - v[0])
        if area == 0.0:
            continue

        gu, gv = np.meshgrid(
            np.arange(u_min, u_max + 1, dtype=np.float64),
            np.arange(v_min, v_max + 1, dtype=np.float64),
        )
        w0 = ((u[1] - gu) * (v[2] - gv) - (u[2] - gu) * (v[1] - gv)) / area
        w1 = ((u[2] - gu) * (v[0] - gv) - (u[0] - gu) * (v[2] - gv)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not np.any(inside):
            continue

        inv_z = w0 * (1.0 / z[0]) + w1 * (1.0 / z[1]) + w2 * (1.0 / z[2])
        depth = np.where(inside & (inv_z > 0), 1.0 / np.maximum(inv_z, 1e-300), np.inf)

        window = zbuf[v_min : v_max + 1, u_min : u_max + 1]
        np.minimum(window, depth, out=window)

    hit = np.isfinite(zbuf)
    quantized = np.zeros_like(zbuf, dtype=np.uint16)
    steps = np.rint(zbuf[hit] / k.depth_scale)
    # Depths that round to 0 are unrepresentable and stay invalid.
    quantized[hit] = np.clip(steps, 0, DEPTH_MAX).astype(np.uint16)
    return DepthImage(quantized)


# ---------------------------------------------------------------------------
# File I/O: 16-bit grayscale PNG plus sidecar intrinsics JSON
# ---------------------------------------------------------------------------

def write_depth_png(img: DepthImage, path: str | Path) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(img.data, dtype=np.uint16)).save(Path(path))


def read_depth_png(path: str | Path) -> DepthImage:
    from PIL import Image

    with Image.open(Path(path)) as im:
        arr = np.array(im)
    if arr.dtype not in (np.uint16, np.int32, np.uint8):
        raise ValueError(f"unsupported depth PNG dtype {arr.dtype}")
    return DepthImage(arr.astype(np.uint16))


def write_intrinsics_json(k: PinholeIntrinsics, path: str | Path) -> None:
    Path(path).write_text(json.dumps(k.to_dict(), sort_keys=True, indent=2) + "\n")


def read_intrinsics_json(path: str | Path) -> PinholeIntrinsics:
    return PinholeIntrinsics.from_dict(json.loads(Path(path).read_text()))


def mask_visibility_ratio(visible: NDArray, full: NDArray) -> float:
    """Fraction of an object's full-silhouette pixels that remain visible.

    Input masks are boolean pixel sets: ``full`` from rendering the object
    alone, ``visible`` from the actual (possibly occluded) view. Callers
    can threshold this to drop mostly-hidden instances.
    """
    full = np.asarray(full, dtype=bool)
    visible = np.asarray(visible, dtype=bool)
    if full.shape != visible.shape:
        raise ValueError("mask shapes differ")
    total = int(full.sum())
    if total == 0:
        return 0.0
    return float((visible & full).sum()) / total
