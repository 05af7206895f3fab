"""Per-view uncertainty maps: the type, its file format, interpolation,
dataset manifests, and a polar visualization.

A map binds one value in [0, 1] to each of the 48 anchor directions
attached to its source view (anchor 0 sits closest to the view direction;
the layout is the canonical anchor set rotated through the view frame).
Values near 1 mean renders from that direction are expected to be wrong.

File format (UTF-8 text, single spaces, floats at 17 significant digits):

    PUNUMAP 1 <kind> <step_index>
    <elevation_deg> <azimuth_deg> <radius>
    <anchor_x> <anchor_y> <anchor_z> <value>      (one line per anchor)

Dataset manifests index generated instances (see DatasetManifest below).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import FormatError, NotFoundError, VersionError
from .geometry import (
    DEFAULT_N_SIDE,
    Viewpoint,
    anchors_for_view,
    view_frame,
)
from .imageio import Image
from .metrics import UncertaintyKind
from .textio import LineReader, fmt, parse_float, parse_int

UMAP_MAGIC = "PUNUMAP"
UMAP_VERSION = 1
MANIFEST_MAGIC = "PUNSET"
MANIFEST_VERSION = 1

# Interpolation neighborhood: anchors within this angle of the query
# direction take part in the softmax; 30 degrees always captures at
# least one anchor of the 48-direction layout.
NEIGHBOR_ANGLE_RAD = math.pi / 6.0


@dataclass(frozen=True)
class UMap:
    """Uncertainty values bound to world-space anchor directions."""

    kind: UncertaintyKind
    source_view: Viewpoint
    step_index: int
    anchors_world: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.anchors_world, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != 3:
            raise ValueError(f"anchors must have shape (n, 3), got {a.shape}")
        n = a.shape[0]
        if v.shape != (n,):
            raise ValueError(f"expected {n} values, got shape {v.shape}")
        side = math.isqrt(max(n // 12, 0))
        if n < 12 or 12 * side * side != n:
            raise ValueError(f"anchor count {n} is not 12 * n_side**2")
        norms = np.linalg.norm(a, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise ValueError("anchor directions must be unit vectors")
        if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("uncertainty values must be finite and in [0, 1]")
        if self.step_index < 0:
            raise ValueError(f"step_index must be >= 0, got {self.step_index}")
        a.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "anchors_world", a)
        object.__setattr__(self, "values", v)

    @property
    def n_anchors(self) -> int:
        return self.anchors_world.shape[0]

    def with_step(self, step_index: int) -> "UMap":
        return replace(self, step_index=step_index)


def make_umap_for_view(
    view: Viewpoint,
    values,
    kind: UncertaintyKind,
    step_index: int = 0,
    n_side: int = DEFAULT_N_SIDE,
) -> UMap:
    """Bind a value vector to the standard anchor layout of a view."""
    return UMap(
        kind=kind,
        source_view=view,
        step_index=step_index,
        anchors_world=anchors_for_view(view, n_side),
        values=np.asarray(values, dtype=np.float64),
    )


def umap_to_text(umap: UMap) -> str:
    lines = [
        f"{UMAP_MAGIC} {UMAP_VERSION} {umap.kind.value} {umap.step_index}",
        f"{fmt(umap.source_view.elevation_deg)} "
        f"{fmt(umap.source_view.azimuth_deg)} {fmt(umap.source_view.radius)}",
    ]
    for anchor, value in zip(umap.anchors_world, umap.values):
        lines.append(
            f"{fmt(anchor[0])} {fmt(anchor[1])} {fmt(anchor[2])} {fmt(value)}"
        )
    return "\n".join(lines) + "\n"


def write_umap(umap: UMap, path) -> None:
    Path(path).write_text(umap_to_text(umap), encoding="utf-8")


def umap_from_text(text: str, name: str = "<umap>") -> UMap:
    reader = LineReader(text, name)
    header = reader.expect_line("header").split()
    if len(header) != 4 or header[0] != UMAP_MAGIC:
        raise FormatError(f"{name}: not an uncertainty map file")
    version = parse_int(header[1], reader.where())
    if version != UMAP_VERSION:
        raise VersionError(
            f"{name}: unsupported format version {version} (expected {UMAP_VERSION})"
        )
    try:
        kind = UncertaintyKind.from_token(header[2])
    except ValueError as exc:
        raise FormatError(f"{name}: {exc}") from None
    step_index = parse_int(header[3], reader.where())
    view_fields = reader.expect_line("source view").split()
    if len(view_fields) != 3:
        raise FormatError(f"{reader.where()}: source view needs 3 fields")
    elev, azim, radius = (parse_float(t, reader.where()) for t in view_fields)
    try:
        view = Viewpoint(elev, azim, radius)
    except ValueError as exc:
        raise FormatError(f"{reader.where()}: {exc}") from None
    anchors = []
    values = []
    while True:
        line = reader.next_content_line()
        if line is None:
            break
        fields = line.split()
        if len(fields) != 4:
            raise FormatError(f"{reader.where()}: anchor rows need 4 fields")
        x, y, z, value = (parse_float(t, reader.where()) for t in fields)
        anchors.append((x, y, z))
        values.append(value)
    try:
        return UMap(
            kind=kind,
            source_view=view,
            step_index=step_index,
            anchors_world=np.array(anchors, dtype=np.float64).reshape(-1, 3),
            values=np.array(values, dtype=np.float64),
        )
    except ValueError as exc:
        raise FormatError(f"{name}: {exc}") from None


def read_umap(path) -> UMap:
    return umap_from_text(Path(path).read_text(encoding="utf-8"), str(path))


# ---------------------------------------------------------------------------
# Spherical interpolation


def interpolation_weights(
    anchors: np.ndarray,
    dirs: np.ndarray,
    max_angle_rad: float = NEIGHBOR_ANGLE_RAD,
) -> np.ndarray:
    """Softmax-over-distance weights, one row per query direction.

    Anchors within max_angle_rad of the query get weight
    exp(-angle) / sum(exp(-angle)); everything else gets 0. A query with
    no anchor in range falls back to a one-hot row on its nearest anchor,
    so rows always sum to 1.
    """
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    anchors = np.asarray(anchors, dtype=np.float64)
    cross = np.cross(dirs[:, None, :], anchors[None, :, :])
    angles = np.arctan2(np.linalg.norm(cross, axis=2), dirs @ anchors.T)
    inside = angles <= max_angle_rad
    raw = np.where(inside, np.exp(-angles), 0.0)
    sums = raw.sum(axis=1)
    empty = sums == 0.0
    if np.any(empty):
        nearest = np.argmin(angles[empty], axis=1)
        raw[np.flatnonzero(empty), nearest] = 1.0
        sums = raw.sum(axis=1)
    return raw / sums[:, None]


def interpolate_on_sphere(
    anchors: np.ndarray,
    values: np.ndarray,
    dirs: np.ndarray,
    max_angle_rad: float = NEIGHBOR_ANGLE_RAD,
) -> np.ndarray:
    """Interpolated values for each query direction, shape (n_dirs,)."""
    w = interpolation_weights(anchors, dirs, max_angle_rad)
    return w @ np.asarray(values, dtype=np.float64)


# ---------------------------------------------------------------------------
# Dataset manifest


@dataclass
class ViewRecord:
    """One rendered view of an instance plus its uncertainty map files."""

    view: Viewpoint
    image_path: str
    umap_paths: dict[str, str] = field(default_factory=dict)  # kind token -> path


@dataclass
class InstanceRecord:
    instance_id: str
    mesh_path: str
    views: list[ViewRecord] = field(default_factory=list)


@dataclass
class DatasetManifest:
    """Index of a generated dataset; all paths are relative to its file."""

    n_side: int = DEFAULT_N_SIDE
    resolution: int = 128
    radius: float = 2.73
    views_per_instance: int = 12
    seed: int = 0
    kind: UncertaintyKind = UncertaintyKind.PSNR
    instances: list[InstanceRecord] = field(default_factory=list)

    def view_count(self) -> int:
        return sum(len(inst.views) for inst in self.instances)


def manifest_to_text(manifest: DatasetManifest) -> str:
    out = [
        f"{MANIFEST_MAGIC} {MANIFEST_VERSION}",
        f"n_side {manifest.n_side}",
        f"resolution {manifest.resolution}",
        f"radius {fmt(manifest.radius)}",
        f"views_per_instance {manifest.views_per_instance}",
        f"seed {manifest.seed}",
        f"kind {manifest.kind.value}",
    ]
    for inst in manifest.instances:
        out.append(f"instance {inst.instance_id}")
        out.append(f"  mesh {inst.mesh_path}")
        for rec in inst.views:
            out.append(
                f"  view {fmt(rec.view.elevation_deg)} "
                f"{fmt(rec.view.azimuth_deg)} {fmt(rec.view.radius)}"
            )
            out.append(f"    image {rec.image_path}")
            for token in sorted(rec.umap_paths):
                out.append(f"    umap {token} {rec.umap_paths[token]}")
    return "\n".join(out) + "\n"


def save_manifest(manifest: DatasetManifest, path) -> None:
    Path(path).write_text(manifest_to_text(manifest), encoding="utf-8")


def _manifest_header(reader: LineReader, fields: dict) -> None:
    """Parse 'key value' header lines into fields until an instance line."""
    while True:
        line = reader.next_content_line()
        if line is None:
            return
        parts = line.split()
        if parts[0] == "instance":
            reader.index -= 1  # hand the line back
            return
        if len(parts) != 2:
            raise FormatError(f"{reader.where()}: header lines take one value")
        fields[parts[0]] = parts[1]


def manifest_from_text(text: str, name: str = "<manifest>") -> DatasetManifest:
    reader = LineReader(text, name)
    header = reader.expect_line("header").split()
    if len(header) != 2 or header[0] != MANIFEST_MAGIC:
        raise FormatError(f"{name}: not a dataset manifest")
    version = parse_int(header[1], reader.where())
    if version != MANIFEST_VERSION:
        raise VersionError(
            f"{name}: unsupported manifest version {version} "
            f"(expected {MANIFEST_VERSION})"
        )
    fields: dict[str, str] = {}
    _manifest_header(reader, fields)
    required = ("n_side", "resolution", "radius", "views_per_instance", "seed", "kind")
    missing = [k for k in required if k not in fields]
    if missing:
        raise FormatError(f"{name}: manifest header missing {', '.join(missing)}")
    try:
        kind = UncertaintyKind.from_token(fields["kind"])
    except ValueError as exc:
        raise FormatError(f"{name}: {exc}") from None
    manifest = DatasetManifest(
        n_side=parse_int(fields["n_side"], name),
        resolution=parse_int(fields["resolution"], name),
        radius=parse_float(fields["radius"], name),
        views_per_instance=parse_int(fields["views_per_instance"], name),
        seed=parse_int(fields["seed"], name),
        kind=kind,
        instances=[],
    )
    inst = None
    rec = None
    while True:
        line = reader.next_content_line()
        if line is None:
            break
        parts = line.split()
        tag = parts[0]
        if tag == "instance" and len(parts) == 2:
            inst = InstanceRecord(instance_id=parts[1], mesh_path="")
            manifest.instances.append(inst)
            rec = None
        elif tag == "mesh" and len(parts) == 2 and inst is not None:
            inst.mesh_path = parts[1]
        elif tag == "view" and len(parts) == 4 and inst is not None:
            elev, azim, radius = (parse_float(t, reader.where()) for t in parts[1:])
            try:
                vp = Viewpoint(elev, azim, radius)
            except ValueError as exc:
                raise FormatError(f"{reader.where()}: {exc}") from None
            rec = ViewRecord(view=vp, image_path="")
            inst.views.append(rec)
        elif tag == "image" and len(parts) == 2 and rec is not None:
            rec.image_path = parts[1]
        elif tag == "umap" and len(parts) == 3 and rec is not None:
            rec.umap_paths[parts[1]] = parts[2]
        else:
            raise FormatError(f"{reader.where()}: unexpected line {line!r}")
    for inst in manifest.instances:
        if not inst.mesh_path:
            raise FormatError(f"{name}: instance {inst.instance_id} has no mesh")
        for rec in inst.views:
            if not rec.image_path:
                raise FormatError(
                    f"{name}: a view of {inst.instance_id} has no image path"
                )
    return manifest


def load_manifest(path, check_paths: bool = True) -> DatasetManifest:
    """Read a manifest; optionally verify every referenced file exists.

    With check_paths, all missing files are collected first so the error
    names every one of them, not just the first.
    """
    path = Path(path)
    manifest = manifest_from_text(path.read_text(encoding="utf-8"), str(path))
    if check_paths:
        root = path.parent
        missing = []
        for inst in manifest.instances:
            for rel in _instance_paths(inst):
                if not (root / rel).exists():
                    missing.append(rel)
        if missing:
            raise NotFoundError(
                f"{path}: {len(missing)} referenced files missing: "
                + ", ".join(missing)
            )
    return manifest


def _instance_paths(inst: InstanceRecord):
    yield inst.mesh_path
    for rec in inst.views:
        yield rec.image_path
        yield from rec.umap_paths.values()


# ---------------------------------------------------------------------------
# Polar visualization

_COLOR_STOPS = np.array(
    [
        [0.10, 0.05, 0.35],
        [0.05, 0.35, 0.65],
        [0.05, 0.60, 0.55],
        [0.45, 0.75, 0.25],
        [0.95, 0.85, 0.15],
        [0.98, 0.55, 0.10],
    ]
)


def _colormap(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] scalars to RGB through piecewise-linear color stops."""
    t = np.clip(values, 0.0, 1.0) * (len(_COLOR_STOPS) - 1)
    lo = np.minimum(t.astype(int), len(_COLOR_STOPS) - 2)
    frac = (t - lo)[..., None]
    return _COLOR_STOPS[lo] * (1.0 - frac) + _COLOR_STOPS[lo + 1] * frac


def render_polar_map(umap: UMap, size_px: int = 256) -> Image:
    """Draw a map as a polar disk seen from its source view.

    Radius encodes the angle from the view direction (0 at the center,
    180 degrees at the rim), polar angle encodes the azimuth in the view
    frame. The background is the interpolated field; anchors appear as
    filled disks of their exact value, so a constant map renders as one
    uniform disk.
    """
    if size_px < 32:
        raise ValueError(f"polar map needs size_px >= 32, got {size_px}")
    frame = view_frame(umap.source_view.unit_dir())
    rot = frame.rotation()
    center = (size_px - 1) / 2.0
    rim = size_px / 2.0 - 2.0

    py, px = np.mgrid[0:size_px, 0:size_px]
    dx = (px - center) / rim
    dy = (center - py) / rim
    rr = np.hypot(dx, dy)
    inside = rr <= 1.0

    theta = rr[inside] * math.pi
    phi = np.arctan2(dy[inside], dx[inside])
    st = np.sin(theta)
    local = np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=1)
    world = local @ rot.T
    field_vals = interpolate_on_sphere(umap.anchors_world, umap.values, world)

    pixels = np.ones((size_px, size_px, 3))
    pixels[inside] = _colormap(field_vals)

    local_anchors = umap.anchors_world @ rot
    a_theta = np.arccos(np.clip(local_anchors[:, 2], -1.0, 1.0))
    a_phi = np.arctan2(local_anchors[:, 1], local_anchors[:, 0])
    a_r = (a_theta / math.pi) * rim
    ax = center + a_r * np.cos(a_phi)
    ay = center - a_r * np.sin(a_phi)
    disk_r = max(2.0, size_px / 40.0)
    colors = _colormap(umap.values)
    for k in range(umap.n_anchors):
        dist = np.hypot(px - ax[k], py - ay[k])
        pixels[dist <= disk_r] = colors[k]
    return Image(np.ascontiguousarray(np.clip(pixels, 0.0, 1.0)))
