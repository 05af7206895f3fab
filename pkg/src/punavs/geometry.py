"""Viewpoints on the viewing sphere and the anchor direction layout.

Conventions used everywhere in this package:

* elevation is the polar angle in degrees measured from the +z axis
  (0 = north pole, 90 = equator, 180 = south pole),
* azimuth is degrees counter-clockwise from +x in the xy plane,
  normalized to [0, 360),
* directions are float64 unit vectors of shape (3,), stacked row-wise
  into (n, 3) arrays.

Anchor directions are the pixel centers of an equal-area spherical
pixelization (RING ordering), 12 * n_side**2 of them; the default
n_side = 2 gives the 48 directions the rest of the package is built
around.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

WORLD_Z = np.array([0.0, 0.0, 1.0])
WORLD_Y = np.array([0.0, 1.0, 0.0])

# Camera orbit radius: object bounding spheres are normalized to 1.0,
# so the camera never intersects the object at this distance.
DEFAULT_RADIUS = 2.73

DEFAULT_N_SIDE = 2

_POLE_EPS = 1e-6


@dataclass(frozen=True)
class Viewpoint:
    """A camera position on a sphere around the origin, looking at it."""

    elevation_deg: float
    azimuth_deg: float
    radius: float = DEFAULT_RADIUS

    def __post_init__(self):
        if not (0.0 <= self.elevation_deg <= 180.0):
            raise ValueError(
                f"elevation must lie in [0, 180], got {self.elevation_deg}"
            )
        if not (self.radius > 0.0) or not math.isfinite(self.radius):
            raise ValueError(f"radius must be finite and > 0, got {self.radius}")
        if not math.isfinite(self.azimuth_deg):
            raise ValueError(f"azimuth must be finite, got {self.azimuth_deg}")
        object.__setattr__(self, "azimuth_deg", self.azimuth_deg % 360.0)

    def unit_dir(self) -> np.ndarray:
        return unit_dir(self.elevation_deg, self.azimuth_deg)

    def position(self) -> np.ndarray:
        return self.radius * self.unit_dir()


def unit_dir(elevation_deg: float, azimuth_deg: float) -> np.ndarray:
    """Unit vector for spherical angles in degrees."""
    theta = math.radians(elevation_deg)
    phi = math.radians(azimuth_deg)
    st = math.sin(theta)
    return np.array([st * math.cos(phi), st * math.sin(phi), math.cos(theta)])


def viewpoint_from_dir(direction, radius: float = DEFAULT_RADIUS) -> Viewpoint:
    """Inverse of Viewpoint.unit_dir; the input need not be normalized."""
    d = np.asarray(direction, dtype=float)
    n = np.linalg.norm(d)
    if n == 0.0 or not np.all(np.isfinite(d)):
        raise ValueError("direction must be a finite nonzero vector")
    d = d / n
    elev = math.degrees(math.atan2(math.hypot(d[0], d[1]), d[2]))
    azim = math.degrees(math.atan2(d[1], d[0])) % 360.0
    return Viewpoint(elev, azim, radius)


def angular_distance(a, b) -> float:
    """Angle in radians between two directions, in [0, pi].

    Uses the atan2 form, which stays accurate for nearly parallel and
    nearly antiparallel inputs where arccos of a dot product loses digits.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cross = np.cross(a, b)
    return math.atan2(np.linalg.norm(cross), float(np.dot(a, b)))


def angular_distances(dirs, refs) -> np.ndarray:
    """Pairwise angles, shape (len(dirs), len(refs)), same form as above."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    refs = np.atleast_2d(np.asarray(refs, dtype=float))
    cross = np.cross(dirs[:, None, :], refs[None, :, :])
    sin = np.linalg.norm(cross, axis=2)
    cos = dirs @ refs.T
    return np.arctan2(sin, cos)


def healpix_anchor_dirs(n_side: int = DEFAULT_N_SIDE) -> np.ndarray:
    """Pixel-center directions of the equal-area pixelization, RING order.

    Rings are counted from the north pole. Polar-cap ring i (1 <= i < n_side)
    holds 4*i pixels at z = 1 - i**2 / (3 n_side**2) with centers at
    phi = (pi / (2 i)) * (j - 1/2). Equatorial rings (n_side <= i <= 3 n_side)
    hold 4*n_side pixels at z = (2 n_side - i) * 2 / (3 n_side), phase-shifted
    by half a pixel on alternating rings. The south cap mirrors the north.

    Returns an array of shape (12 * n_side**2, 3).
    """
    if n_side < 1 or int(n_side) != n_side:
        raise ValueError(f"n_side must be a positive integer, got {n_side}")
    n = int(n_side)
    zs = []
    phis = []
    for i in range(1, n):  # north polar cap
        z = 1.0 - i * i / (3.0 * n * n)
        j = np.arange(1, 4 * i + 1)
        zs.append(np.full(4 * i, z))
        phis.append((math.pi / (2.0 * i)) * (j - 0.5))
    for i in range(n, 3 * n + 1):  # equatorial belt
        z = (2.0 * n - i) * 2.0 / (3.0 * n)
        fodd = 1.0 if (i + n) % 2 == 1 else 0.5
        j = np.arange(1, 4 * n + 1)
        zs.append(np.full(4 * n, z))
        phis.append((math.pi / (2.0 * n)) * (j - fodd))
    for i in range(n - 1, 0, -1):  # south polar cap
        z = -(1.0 - i * i / (3.0 * n * n))
        j = np.arange(1, 4 * i + 1)
        zs.append(np.full(4 * i, z))
        phis.append((math.pi / (2.0 * i)) * (j - 0.5))
    z = np.concatenate(zs)
    phi = np.concatenate(phis)
    s = np.sqrt(np.clip(1.0 - z * z, 0.0, 1.0))
    dirs = np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)
    assert dirs.shape == (12 * n * n, 3)
    return dirs


def nearest_anchor_index(dirs, anchors) -> np.ndarray:
    """Index of the closest anchor per direction (largest dot product).

    Ties resolve to the lowest index. Accepts (3,) or (n, 3) input and
    returns a scalar-shaped or (n,) int array accordingly.
    """
    d = np.asarray(dirs, dtype=float)
    single = d.ndim == 1
    d = np.atleast_2d(d)
    idx = np.argmax(d @ np.asarray(anchors, dtype=float).T, axis=1)
    return idx[0] if single else idx


@dataclass(frozen=True)
class ViewFrame:
    """Right-handed orthonormal basis attached to a view direction.

    forward points from the origin toward the viewpoint; right and up
    complete the basis with right = up x forward (so forward x right = up).
    """

    right: np.ndarray
    up: np.ndarray
    forward: np.ndarray

    def rotation(self) -> np.ndarray:
        """3x3 matrix with columns (right, up, forward); det = +1."""
        return np.stack([self.right, self.up, self.forward], axis=1)


def view_frame(view_dir) -> ViewFrame:
    """Build the canonical frame for a view direction.

    The up seed is world z, replaced by world y within 1e-6 of either pole
    so the construction is total. up is the seed made orthonormal to
    forward, and right = up x forward.
    """
    f = np.asarray(view_dir, dtype=float)
    n = np.linalg.norm(f)
    if n == 0.0 or not np.all(np.isfinite(f)):
        raise ValueError("view direction must be a finite nonzero vector")
    f = f / n
    seed = WORLD_Y if abs(float(np.dot(f, WORLD_Z))) > 1.0 - _POLE_EPS else WORLD_Z
    up = seed - float(np.dot(seed, f)) * f
    up = up / np.linalg.norm(up)
    right = np.cross(up, f)
    return ViewFrame(right=right, up=up, forward=f)


_CANONICAL_CACHE: dict[int, np.ndarray] = {}


def canonical_anchors(n_side: int = DEFAULT_N_SIDE) -> np.ndarray:
    """Cached copy of healpix_anchor_dirs(n_side); treat as read-only."""
    key = int(n_side)
    got = _CANONICAL_CACHE.get(key)
    if got is None:
        got = healpix_anchor_dirs(key)
        got.setflags(write=False)
        _CANONICAL_CACHE[key] = got
    return got


def anchors_for_view(view: Viewpoint, n_side: int = DEFAULT_N_SIDE) -> np.ndarray:
    """Anchor directions rotated so the layout's pole tracks the view.

    The canonical layout is defined around world z; the returned set is
    that layout mapped through the view's frame, so anchor k keeps its
    angular offset from the view direction. A view at elevation 0 returns
    the canonical set unchanged.
    """
    frame = view_frame(view.unit_dir())
    return canonical_anchors(n_side) @ frame.rotation().T


def sample_candidates(
    n: int, seed: int, radius: float = DEFAULT_RADIUS
) -> list[Viewpoint]:
    """Draw n viewpoints uniformly by sphere area (seeded, reproducible)."""
    if n <= 0:
        raise ValueError(f"candidate count must be positive, got {n}")
    rng = np.random.default_rng(seed)
    z = rng.uniform(-1.0, 1.0, size=n)
    azim = rng.uniform(0.0, 360.0, size=n)
    elev = np.degrees(np.arccos(z))
    return [Viewpoint(float(e), float(a), radius) for e, a in zip(elev, azim)]


def viewpoints_to_dirs(views) -> np.ndarray:
    """Stack unit directions of an iterable of Viewpoints into (n, 3)."""
    return np.array([v.unit_dir() for v in views])
