"""Triangle meshes: the in-memory type, OBJ files, procedural shapes.

Meshes are loaded or generated already normalized: vertex centroid at the
origin and bounding-sphere radius 1.0, so every object fits the fixed
camera orbit the same way. Procedural shapes are generated with outward,
consistently wound faces (the visibility test relies on that).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import FormatError
from .textio import fmt


@dataclass(eq=False)
class TriMesh:
    """Immutable-by-convention triangle mesh with cached derived arrays."""

    vertices: np.ndarray  # (v, 3) float64
    faces: np.ndarray     # (f, 3) int64

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] < 3:
            raise ValueError(f"vertices must be (n >= 3, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3 or f.shape[0] < 1:
            raise ValueError(f"faces must be (n >= 1, 3), got {f.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("vertex coordinates must be finite")
        if f.min() < 0 or f.max() >= v.shape[0]:
            raise ValueError("face indices out of vertex range")
        v.setflags(write=False)
        f.setflags(write=False)
        self.vertices = v
        self.faces = f

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    @cached_property
    def corner0(self) -> np.ndarray:
        return np.ascontiguousarray(self.vertices[self.faces[:, 0]])

    @cached_property
    def edge1(self) -> np.ndarray:
        return np.ascontiguousarray(
            self.vertices[self.faces[:, 1]] - self.vertices[self.faces[:, 0]]
        )

    @cached_property
    def edge2(self) -> np.ndarray:
        return np.ascontiguousarray(
            self.vertices[self.faces[:, 2]] - self.vertices[self.faces[:, 0]]
        )

    @cached_property
    def face_normals(self) -> np.ndarray:
        """Unit normals following the winding order."""
        raw = np.cross(self.edge1, self.edge2)
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        return raw / norms

    @cached_property
    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(np.cross(self.edge1, self.edge2), axis=1)

    @cached_property
    def face_centroids(self) -> np.ndarray:
        return (
            self.vertices[self.faces[:, 0]]
            + self.vertices[self.faces[:, 1]]
            + self.vertices[self.faces[:, 2]]
        ) / 3.0

    def total_area(self) -> float:
        return float(self.face_areas.sum())

    def signed_volume(self) -> float:
        """Positive for closed meshes with outward winding."""
        v0 = self.vertices[self.faces[:, 0]]
        v1 = self.vertices[self.faces[:, 1]]
        v2 = self.vertices[self.faces[:, 2]]
        return float(np.sum(np.einsum("ij,ij->i", v0, np.cross(v1, v2))) / 6.0)


def _drop_degenerate(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    e1 = vertices[faces[:, 1]] - vertices[faces[:, 0]]
    e2 = vertices[faces[:, 2]] - vertices[faces[:, 0]]
    area2 = np.linalg.norm(np.cross(e1, e2), axis=1)
    return faces[area2 > 0.0]


def normalize_mesh(mesh: TriMesh) -> TriMesh:
    """Recenter on the vertex centroid and scale bounding sphere to 1."""
    center = mesh.vertices.mean(axis=0)
    shifted = mesh.vertices - center
    radius = float(np.linalg.norm(shifted, axis=1).max())
    if radius <= 0.0:
        raise ValueError("mesh has no spatial extent")
    return TriMesh(vertices=shifted / radius, faces=mesh.faces)


# ---------------------------------------------------------------------------
# OBJ files


def load_obj(path) -> TriMesh:
    """Read an OBJ file (v/f records, fan-triangulated), normalized.

    Texture and normal indices are ignored, negative indices resolve
    relative to the vertices seen so far, zero-area faces are dropped.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8", errors="replace")
    except OSError as exc:
        raise FormatError(f"{path}: cannot read mesh file: {exc}") from None
    verts: list[tuple[float, float, float]] = []
    tris: list[tuple[int, int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise FormatError(f"{path}:{lineno}: vertex needs 3 coordinates")
            try:
                verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad vertex coordinate") from None
        elif tag == "f":
            if len(parts) < 4:
                raise FormatError(f"{path}:{lineno}: face needs 3+ vertices")
            idx = []
            for tok in parts[1:]:
                head = tok.split("/")[0]
                try:
                    i = int(head)
                except ValueError:
                    raise FormatError(f"{path}:{lineno}: bad face index {tok!r}") from None
                if i < 0:
                    i = len(verts) + i
                else:
                    i = i - 1
                if i < 0 or i >= len(verts):
                    raise FormatError(f"{path}:{lineno}: face index {tok!r} out of range")
                idx.append(i)
            for k in range(1, len(idx) - 1):
                tris.append((idx[0], idx[k], idx[k + 1]))
        # every other record type (vn, vt, usemtl, o, g, s, ...) is ignored
    if not verts:
        raise FormatError(f"{path}: no vertices found")
    if not tris:
        raise FormatError(f"{path}: no faces found")
    vertices = np.array(verts, dtype=np.float64)
    faces = _drop_degenerate(vertices, np.array(tris, dtype=np.int64))
    if faces.shape[0] == 0:
        raise FormatError(f"{path}: all faces are degenerate")
    return normalize_mesh(TriMesh(vertices=vertices, faces=faces))


def save_obj(mesh: TriMesh, path) -> None:
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {fmt(v[0])} {fmt(v[1])} {fmt(v[2])}")
    for f in mesh.faces:
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Procedural shapes


def icosphere(subdivisions: int = 2) -> TriMesh:
    """Unit sphere approximated by a subdivided icosahedron.

    Face counts: 20 * 4**subdivisions (0 -> 20, 1 -> 80, 2 -> 320, 3 -> 1280).
    """
    if subdivisions < 0 or subdivisions > 6:
        raise ValueError(f"subdivisions must be in [0, 6], got {subdivisions}")
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(np.asarray(v) / np.linalg.norm(v)) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            got = cache.get(key)
            if got is not None:
                return got
            m = np.asarray(verts[i]) + np.asarray(verts[j])
            m = m / np.linalg.norm(m)
            verts.append(tuple(m))
            cache[key] = len(verts) - 1
            return cache[key]

        nxt = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            nxt.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
        faces = nxt
    vertices = np.array(verts, dtype=np.float64)
    face_arr = np.array(faces, dtype=np.int64)
    # enforce outward winding face by face (valid for a star-shaped solid)
    e1 = vertices[face_arr[:, 1]] - vertices[face_arr[:, 0]]
    e2 = vertices[face_arr[:, 2]] - vertices[face_arr[:, 0]]
    centroids = vertices[face_arr].mean(axis=1)
    flip = np.einsum("ij,ij->i", np.cross(e1, e2), centroids) < 0
    face_arr[flip] = face_arr[flip][:, [0, 2, 1]]
    return normalize_mesh(TriMesh(vertices=vertices, faces=face_arr))


def _polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _ear_clip(poly: np.ndarray) -> list[tuple[int, int, int]]:
    """Triangulate a simple CCW polygon by ear clipping (deterministic)."""
    n = len(poly)
    idx = list(range(n))
    tris = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10 * n:
            raise ValueError("polygon triangulation failed (not simple?)")
        clipped = False
        for k in range(len(idx)):
            i0, i1, i2 = (
                idx[k - 1],
                idx[k],
                idx[(k + 1) % len(idx)],
            )
            a, b, c = poly[i0], poly[i1], poly[i2]
            cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if cross <= 1e-15:
                continue  # reflex or degenerate corner
            ear = True
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                p = poly[j]
                d0 = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
                d1 = (c[0] - b[0]) * (p[1] - b[1]) - (c[1] - b[1]) * (p[0] - b[0])
                d2 = (a[0] - c[0]) * (p[1] - c[1]) - (a[1] - c[1]) * (p[0] - c[0])
                if d0 >= 0 and d1 >= 0 and d2 >= 0:
                    ear = False
                    break
            if ear:
                tris.append((i0, i1, i2))
                idx.pop(k)
                clipped = True
                break
        if not clipped:
            raise ValueError("polygon triangulation failed (no ear found)")
    tris.append((idx[0], idx[1], idx[2]))
    return tris


def extrude_profile(profile_xz, y_min: float, y_max: float) -> TriMesh:
    """Prism from a simple polygon in the xz plane, extruded along y."""
    poly = np.asarray(profile_xz, dtype=np.float64)
    if _polygon_area(poly) < 0:
        poly = poly[::-1].copy()
    n = len(poly)
    bottom = np.column_stack([poly[:, 0], np.full(n, y_min), poly[:, 1]])
    top = np.column_stack([poly[:, 0], np.full(n, y_max), poly[:, 1]])
    vertices = np.vstack([bottom, top])
    faces: list[tuple[int, int, int]] = []
    for i in range(n):
        j = (i + 1) % n
        faces.append((i, j, n + j))
        faces.append((i, n + j, n + i))
    for a, b, c in _ear_clip(poly):
        faces.append((a, c, b))                  # bottom cap
        faces.append((n + a, n + b, n + c))      # top cap
    mesh = TriMesh(vertices=vertices, faces=np.array(faces, dtype=np.int64))
    if mesh.signed_volume() < 0:
        flipped = mesh.faces.copy()[:, [0, 2, 1]]
        mesh = TriMesh(vertices=vertices, faces=flipped)
    return mesh


def notched_box() -> TriMesh:
    """Box with a rectangular notch cut into one face.

    The notch breaks the rotational symmetry of a plain box while the
    shape stays bilaterally symmetric about both the y = 0 and x = 0
    planes, which the mirrored-view tests rely on.
    """
    profile = [
        (-0.55, -0.55),
        (0.55, -0.55),
        (0.55, 0.55),
        (0.18, 0.55),
        (0.18, 0.10),
        (-0.18, 0.10),
        (-0.18, 0.55),
        (-0.55, 0.55),
    ]
    return normalize_mesh(extrude_profile(profile, -0.55, 0.55))


def l_shape() -> TriMesh:
    """L-shaped prism; concave, with strongly view-dependent occlusion."""
    profile = [
        (-0.5, -0.5),
        (0.5, -0.5),
        (0.5, 0.0),
        (0.0, 0.0),
        (0.0, 0.5),
        (-0.5, 0.5),
    ]
    return normalize_mesh(extrude_profile(profile, -0.3, 0.3))


PROCEDURAL_SHAPES = {
    "sphere": lambda: icosphere(2),
    "box_notch": notched_box,
    "l_shape": l_shape,
}


def make_shape(name: str) -> TriMesh:
    try:
        factory = PROCEDURAL_SHAPES[name]
    except KeyError:
        raise ValueError(
            f"unknown shape {name!r}; choose from {sorted(PROCEDURAL_SHAPES)}"
        ) from None
    return factory()
