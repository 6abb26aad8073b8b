"""Triangle meshes: loading (OBJ, ASCII-PLY), surface sampling, generators.

OBJ support covers ``v`` and ``f`` records with 1-based (optionally
negative) indices; ``f`` entries may carry ``/vt/vn`` suffixes, and
polygons with more than three vertices are fan-triangulated. PLY support
mirrors the vertex/face layout written by common tools.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import TypeAlias

import numpy as np
from numpy.typing import NDArray

from .errors import ParseError, UnsupportedFormatError
from .geometry import make_rng
from .pointcloud import PointCloud, _parse_ply_header

F64: TypeAlias = np.float64
Vertices: TypeAlias = NDArray[F64]  # (V, 3)
Faces: TypeAlias = NDArray[np.int64]  # (F, 3)


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle mesh; face indices refer into ``vertices``."""

    vertices: Vertices
    faces: Faces

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        f = np.asarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must be (V, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError(f"faces must be (F, 3), got {f.shape}")
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face index out of range")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    def triangles(self) -> NDArray[F64]:
        """(F, 3, 3) corner coordinates."""
        return self.vertices[self.faces]


def face_areas(mesh: TriangleMesh) -> NDArray[F64]:
    tri = mesh.triangles()
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


def face_normals(mesh: TriangleMesh) -> NDArray[F64]:
    """Unit face normals; zero-area faces get (0, 0, 1)."""
    tri = mesh.triangles()
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    norm = np.linalg.norm(cross, axis=1)
    out = np.zeros_like(cross)
    ok = norm > 0
    out[ok] = cross[ok] / norm[ok, None]
    out[~ok] = (0.0, 0.0, 1.0)
    return out


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def load_mesh(path: str | Path) -> TriangleMesh:
    """Load an OBJ or ASCII-PLY triangle mesh."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return _load_obj(path)
    if suffix == ".ply":
        return _load_ply_mesh(path)
    raise UnsupportedFormatError(f"unsupported mesh format '{suffix}' ({path})")


def _resolve_obj_index(token: str, n_vertices: int, path: str, lineno: int) -> int:
    head = token.split("/")[0]
    try:
        idx = int(head)
    except ValueError:
        raise ParseError(path, lineno, f"bad face index '{token}'") from None
    if idx < 0:
        idx = n_vertices + idx  # negative OBJ indices count from the end
    else:
        idx -= 1
    if not 0 <= idx < n_vertices:
        raise ParseError(path, lineno, f"face index {token} out of range")
    return idx


def _load_obj(path: Path) -> TriangleMesh:
    vertices: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        tokens = raw.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        if tokens[0] == "v":
            if len(tokens) < 4:
                raise ParseError(str(path), lineno, "vertex needs 3 coordinates")
            try:
                vertices.append([float(t) for t in tokens[1:4]])
            except ValueError:
                raise ParseError(str(path), lineno, "non-numeric vertex coordinate") from None
        elif tokens[0] == "f":
            if len(tokens) < 4:
                raise ParseError(str(path), lineno, "face needs at least 3 indices")
            idx = [_resolve_obj_index(t, len(vertices), str(path), lineno) for t in tokens[1:]]
            for k in range(1, len(idx) - 1):  # fan triangulation
                faces.append((idx[0], idx[k], idx[k + 1]))
        # Other records (vn, vt, usemtl, ...) are ignored.
    return TriangleMesh(np.array(vertices).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def _load_ply_mesh(path: Path) -> TriangleMesh:
    lines = path.read_text().splitlines()
    elements, start = _parse_ply_header(lines, str(path))
    counts = {name: count for name, count, _ in elements}
    if "vertex" not in counts or "face" not in counts:
        raise ParseError(str(path), start, "mesh PLY needs vertex and face elements")

    cursor = start
    vertices = np.zeros((counts["vertex"], 3))
    faces: list[tuple[int, int, int]] = []
    for name, count, _props in elements:
        for k in range(count):
            lineno = cursor + 1 + k
            if lineno > len(lines):
                raise ParseError(str(path), len(lines), "unexpected end of file")
            tokens = lines[lineno - 1].split()
            if name == "vertex":
                try:
                    vertices[k] = [float(t) for t in tokens[:3]]
                except (ValueError, IndexError):
                    raise ParseError(str(path), lineno, "bad vertex line") from None
            elif name == "face":
                try:
                    n = int(tokens[0])
                    idx = [int(t) for t in tokens[1 : 1 + n]]
                except (ValueError, IndexError):
                    raise ParseError(str(path), lineno, "bad face line") from None
                if len(idx) != n or n < 3:
                    raise ParseError(str(path), lineno, "bad face vertex count")
                if min(idx) < 0 or max(idx) >= len(vertices):
                    raise ParseError(str(path), lineno, "face index out of range")
                for j in range(1, n - 1):
                    faces.append((idx[0], idx[j], idx[j + 1]))
        cursor += count
    return TriangleMesh(vertices, np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_mesh_obj(mesh: TriangleMesh, path: str | Path) -> None:
    lines = [f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}" for v in mesh.vertices]
    lines += [f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}" for f in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Surface sampling
# ---------------------------------------------------------------------------

def sample_surface(
    mesh: TriangleMesh, n: int, seed: int | np.random.Generator | None
) -> PointCloud:
    """Sample ``n`` points uniformly by area; normals are face normals.

    Triangles are chosen with probability proportional to area and the
    position within each triangle is barycentric-uniform. Zero-area faces
    are never selected.
    """
    if n < 1:
        raise ValueError("need n >= 1 samples")
    areas = face_areas(mesh)
    candidates = np.nonzero(areas > 0.0)[0]  # zero-area faces are never sampled
    total = float(areas[candidates].sum()) if len(candidates) else 0.0
    if total <= 0.0:
        raise ValueError("mesh has zero surface area")
    rng = make_rng(seed)

    cdf = np.cumsum(areas[candidates]) / total
    pick = np.searchsorted(cdf, rng.random(n), side="right")
    face_idx = candidates[np.minimum(pick, len(candidates) - 1)]

    tri = mesh.triangles()[face_idx]
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0  # reflect into the lower triangle for uniformity
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    pts = tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])
    return PointCloud(pts, face_normals(mesh)[face_idx])


# ---------------------------------------------------------------------------
# Procedural shapes for tests and synthetic benchmarks
# ---------------------------------------------------------------------------

def make_box(extents=(1.0, 1.0, 1.0)) -> TriangleMesh:
    """Axis-aligned box centered at origin, 12 triangles."""
    ex, ey, ez = (float(e) / 2.0 for e in extents)
    v = np.array(
        [
            [-ex, -ey, -ez], [ex, -ey, -ez], [ex, ey, -ez], [-ex, ey, -ez],
            [-ex, -ey, ez], [ex, -ey, ez], [ex, ey, ez], [-ex, ey, ez],
        ]
    )
    f = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # z-
            [4, 5, 6], [4, 6, 7],  # z+
            [0, 1, 5], [0, 5, 4],  # y-
            [3, 7, 6], [3, 6, 2],  # y+
            [0, 4, 7], [0, 7, 3],  # x-
            [1, 2, 6], [1, 6, 5],  # x+
        ],
        dtype=np.int64,
    )
    return TriangleMesh(v, f)


def make_icosphere(subdivisions: int = 2, radius: float = 1.0) -> TriangleMesh:
    """Icosahedron subdivided ``subdivisions`` times, projected to a sphere."""
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    raw = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts = [tuple(v / np.linalg.norm(v)) for v in raw]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = np.array(verts[a]) + np.array(verts[b])
                m /= np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(tuple(m))
            return cache[key]

        next_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            next_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = next_faces
    return TriangleMesh(radius * np.array(verts), np.array(faces, dtype=np.int64))


def make_widget(
    seed: int | np.random.Generator | None,
    grid: int = 9,
    bump_amp: float = 0.35,
    n_bumps: int = 4,
) -> TriangleMesh:
    """Benchmark object: tapered box with seeded Gaussian surface bumps.

    The family is built for pose recovery to be well-posed with handcrafted
    descriptors: flats, edges, and corners give histograms contrast, the
    non-repeating bumps give localization cues, and the taper along the
    long axis breaks slide and flip quasi-symmetries.
    """
    rng = make_rng(seed)
    ext = np.array([0.62, 1.0, 1.48]) * rng.uniform(0.95, 1.05, size=3)
    verts: dict[tuple, int] = {}
    faces: list[tuple[int, int, int]] = []

    def vid(p) -> int:
        key = tuple(np.round(p, 9))
        if key not in verts:
            verts[key] = len(verts)
        return verts[key]

    face_bumps = []
    for _ in range(6):
        centers = rng.uniform(-0.75, 0.75, size=(n_bumps, 2))
        widths = rng.uniform(0.2, 0.45, size=n_bumps)
        amps = rng.uniform(0.3, 1.0, size=n_bumps) * rng.choice([-1.0, 1.0], size=n_bumps)
        face_bumps.append((centers, widths, amps))

    fidx = 0
    for axis in range(3):
        for sgn in (-1.0, 1.0):
            a1, a2 = [(1, 2), (2, 0), (0, 1)][axis]
            centers, widths, amps = face_bumps[fidx]
            fidx += 1

            def height(u: float, v: float) -> float:
                h = 0.0
                for (cu, cv), w, a in zip(centers, widths, amps):
                    h += a * math.exp(-((u - cu) ** 2 + (v - cv) ** 2) / (2 * w * w))
                edge_fade = min(1.0, 2.5 * (1 - abs(u)) * (1 - abs(v)))
                return bump_amp * h * edge_fade

            for i in range(grid):
                for j in range(grid):
                    corners = []
                    for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        u = (i + di) / grid * 2 - 1
                        v = (j + dj) / grid * 2 - 1
                        p = np.zeros(3)
                        p[axis] = sgn * ext[axis]
                        p[a1] = u * ext[a1]
                        p[a2] = v * ext[a2]
                        if abs(u) < 0.999 and abs(v) < 0.999:
                            p[axis] += sgn * height(u, v)
                        corners.append(p)
                    ia, ib, ic, id_ = (vid(c) for c in corners)
                    if sgn > 0:
                        faces += [(ia, ib, ic), (ia, ic, id_)]
                    else:
                        faces += [(ia, ic, ib), (ia, id_, ic)]

    v = np.zeros((len(verts), 3))
    for key, idx in verts.items():
        v[idx] = key
    # Taper: cross-sections never repeat along the long axis.
    t = v[:, 2] / ext[2]
    v[:, 0] *= 1.0 + 0.28 * t
    v[:, 1] *= 1.0 - 0.22 * t
    return TriangleMesh(v, np.array(faces, dtype=np.int64))


def make_blob(
    seed: int | np.random.Generator | None,
    subdivisions: int = 2,
    amplitude: float = 0.25,
    stretch=(1.0, 0.82, 0.65),
) -> TriangleMesh:
    """Smooth, asymmetric closed surface: icosphere with seeded radial waves.

    Anisotropic stretch removes rotational symmetry so pose recovery is
    well-posed; the low-frequency waves give descriptors curvature to
    latch onto.
    """
    rng = make_rng(seed)
    base = make_icosphere(subdivisions=subdivisions)
    v = np.array(base.vertices)
    unit = v / np.linalg.norm(v, axis=1, keepdims=True)

    radial = np.ones(len(v))
    n_waves = 5
    directions = rng.normal(size=(n_waves, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    freqs = rng.uniform(1.5, 3.5, size=n_waves)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=n_waves)
    amps = rng.uniform(0.4, 1.0, size=n_waves) * (amplitude / n_waves)
    for d, w, p, a in zip(directions, freqs, phases, amps):
        radial += a * np.sin(w * math.pi * (unit @ d) + p)

    v = unit * radial[:, None] * np.asarray(stretch, dtype=np.float64)
    return TriangleMesh(v, base.faces)
