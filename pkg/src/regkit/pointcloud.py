"""Point-cloud container and ASCII-PLY serialization.

Coordinates are float64 throughout; normals, when present, are unit
vectors aligned index-for-index with the points.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import TypeAlias

import numpy as np
from numpy.typing import NDArray

from .errors import EmptyCloudError, ParseError

F64: TypeAlias = np.float64
Points: TypeAlias = NDArray[F64]  # shape (N, 3)

_NORMAL_TOL = 1e-6


def _as_points(x) -> Points:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("coordinates must be finite")
    return a


@dataclass(frozen=True)
class PointCloud:
    """Ordered set of 3D points with optional per-point unit normals."""

    points: Points
    normals: Points | None = None

    def __post_init__(self):
        pts = _as_points(self.points)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = _as_points(self.normals)
            if len(nrm) != len(pts):
                raise ValueError("normals length must match points")
            lengths = np.linalg.norm(nrm, axis=1)
            if np.any(np.abs(lengths - 1.0) > _NORMAL_TOL):
                raise ValueError("normals must have unit norm")
            nrm.setflags(write=False)
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def subset(self, indices) -> "PointCloud":
        """New cloud restricted to ``indices`` (order taken from indices)."""
        idx = np.asarray(indices)
        normals = self.normals[idx] if self.normals is not None else None
        return PointCloud(self.points[idx], normals)

    def without_normals(self) -> "PointCloud":
        return PointCloud(self.points) if self.has_normals else self


def centroid(pc: PointCloud) -> NDArray[F64]:
    if len(pc) == 0:
        raise EmptyCloudError("centroid of an empty cloud")
    return pc.points.mean(axis=0)


# ---------------------------------------------------------------------------
# ASCII PLY I/O. Coordinates are written with 9 significant digits, which
# round-trips float64 well below the 1e-7 contract for unit-scale data.
# ---------------------------------------------------------------------------

def write_pointcloud(pc: PointCloud, path: str | Path) -> None:
    """Write an ASCII-PLY file with x y z [nx ny nz] vertex properties."""
    path = Path(path)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(pc)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if pc.has_normals:
        lines += ["property float nx", "property float ny", "property float nz"]
    lines.append("end_header")
    rows = pc.points if not pc.has_normals else np.hstack([pc.points, pc.normals])
    for row in rows:
        lines.append(" ".join(f"{v:.9g}" for v in row))
    path.write_text("\n".join(lines) + "\n")


def _parse_ply_header(lines: list[str], path: str):
    """Return (elements, first_data_line). Elements map name -> (count, props)."""
    if not lines or lines[0].strip() != "ply":
        raise ParseError(path, 1, "missing 'ply' magic")
    elements: list[tuple[str, int, list[str]]] = []
    i = 1
    while i < len(lines):
        tokens = lines[i].strip().split()
        i += 1
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if tokens[1] != "ascii":
                raise ParseError(path, i, f"unsupported PLY format '{tokens[1]}'")
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise ParseError(path, i, "malformed element declaration")
            try:
                count = int(tokens[2])
            except ValueError:
                raise ParseError(path, i, f"bad element count '{tokens[2]}'") from None
            elements.append((tokens[1], count, []))
        elif tokens[0] == "property":
            if not elements:
                raise ParseError(path, i, "property before any element")
            elements[-1][2].append(tokens[-1])
        elif tokens[0] == "end_header":
            return elements, i
        else:
            raise ParseError(path, i, f"unexpected header token '{tokens[0]}'")
    raise ParseError(path, len(lines), "missing end_header")


def read_pointcloud(path: str | Path) -> PointCloud:
    """Read an ASCII-PLY vertex cloud written by :func:`write_pointcloud`."""
    path = Path(path)
    lines = path.read_text().splitlines()
    elements, start = _parse_ply_header(lines, str(path))
    vertex = next((e for e in elements if e[0] == "vertex"), None)
    if vertex is None:
        raise ParseError(str(path), start, "no vertex element")
    _, count, props = vertex
    for needed in ("x", "y", "z"):
        if needed not in props:
            raise ParseError(str(path), start, f"vertex element lacks property '{needed}'")
    with_normals = all(p in props for p in ("nx", "ny", "nz"))
    cols = {name: props.index(name) for name in props}

    pts = np.zeros((count, 3))
    nrm = np.zeros((count, 3)) if with_normals else None
    for k in range(count):
        lineno = start + 1 + k
        if lineno > len(lines):
            raise ParseError(str(path), len(lines), "unexpected end of file in vertex data")
        tokens = lines[lineno - 1].split()
        if len(tokens) < len(props):
            raise ParseError(str(path), lineno, f"expected {len(props)} values, got {len(tokens)}")
        try:
            values = [float(t) for t in tokens]
        except ValueError:
            raise ParseError(str(path), lineno, "non-numeric vertex value") from None
        pts[k] = [values[cols["x"]], values[cols["y"]], values[cols["z"]]]
        if nrm is not None:
            nrm[k] = [values[cols["nx"]], values[cols["ny"]], values[cols["nz"]]]
    if nrm is not None and count > 0:
        # Re-unitize: 9-digit text truncation can leave norms off by ~1e-9.
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return PointCloud(pts, nrm)
