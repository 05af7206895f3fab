"""Deterministic software renderer and visual-hull reconstruction.

The renderer casts one primary ray per pixel against the mesh
(two-sided Lambertian shading, a single light fixed along the camera
direction, 0.2 ambient, white background). No sampling, no threads, no
time dependence: the same inputs produce bit-identical images.

The visual hull starts from a voxel ball known to contain every
normalized object and carves cells that image onto background pixels.
A cell lives or dies by where its center projects; an optional
conservative mode widens the silhouette test by the projected
half-diagonal of a cell so that no surface-containing cell is ever
carved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import distance_transform_edt, gaussian_filter

from . import kernels
from .errors import EmptyHullError, FormatError
from .geometry import (
    DEFAULT_N_SIDE,
    DEFAULT_RADIUS,
    Viewpoint,
    ViewFrame,
    anchors_for_view,
    view_frame,
    viewpoint_from_dir,
)
from .imageio import Image, write_ppm
from .meshes import TriMesh, load_obj, save_obj
from .metrics import UncertaintyKind, mse, psnr, ssim, to_uncertainty
from .umaps import (
    DatasetManifest,
    InstanceRecord,
    UMap,
    ViewRecord,
    save_manifest,
    write_umap,
)

# Luminance at or above this counts as background in silhouette extraction.
FOREGROUND_CUTOFF = 0.999


@dataclass(frozen=True)
class RenderConfig:
    resolution: int = 128
    fov_deg: float = 50.0
    ambient: float = 0.2
    albedo: float = 0.7
    background: float = 1.0

    def __post_init__(self):
        if self.resolution < 8:
            raise ValueError(f"resolution must be >= 8, got {self.resolution}")
        if not (10.0 < self.fov_deg < 120.0):
            raise ValueError(f"fov must lie in (10, 120), got {self.fov_deg}")


@dataclass(frozen=True)
class CameraPose:
    """A placed pinhole camera looking at the origin."""

    position: np.ndarray
    frame: ViewFrame
    fov_deg: float
    resolution: int

    @classmethod
    def from_viewpoint(cls, view: Viewpoint, cfg: RenderConfig) -> "CameraPose":
        frame = view_frame(view.unit_dir())
        return cls(
            position=view.position(),
            frame=frame,
            fov_deg=cfg.fov_deg,
            resolution=cfg.resolution,
        )

    @cached_property
    def tan_half_fov(self) -> float:
        return math.tan(math.radians(self.fov_deg) / 2.0)


def project_points(points: np.ndarray, pose: CameraPose):
    """Map world points to float pixel coordinates and depth.

    Returns (px, py, depth); depth is distance along the optical axis,
    positive in front of the camera. Pixel (0, 0) is the top-left pixel
    center.
    """
    rel = np.atleast_2d(points) - pose.position
    x_cam = rel @ pose.frame.right
    y_cam = rel @ pose.frame.up
    depth = rel @ (-pose.frame.forward)
    res = pose.resolution
    t = pose.tan_half_fov
    with np.errstate(divide="ignore", invalid="ignore"):
        x_ndc = x_cam / (depth * t)
        y_ndc = y_cam / (depth * t)
    px = (x_ndc + 1.0) / 2.0 * res - 0.5
    py = (1.0 - y_ndc) / 2.0 * res - 0.5
    return px, py, depth


def _pixel_rays(pose: CameraPose, x0: int, y0: int, x1: int, y1: int):
    """Normalized rays through pixel centers of the [x0, x1) x [y0, y1) rect."""
    res = pose.resolution
    t = pose.tan_half_fov
    pxs = np.arange(x0, x1)
    pys = np.arange(y0, y1)
    x_ndc = (2.0 * (pxs + 0.5) / res - 1.0) * t
    y_ndc = (1.0 - 2.0 * (pys + 0.5) / res) * t
    gx, gy = np.meshgrid(x_ndc, y_ndc)
    dirs = (
        -pose.frame.forward[None, None, :]
        + gx[:, :, None] * pose.frame.right[None, None, :]
        + gy[:, :, None] * pose.frame.up[None, None, :]
    )
    dirs = dirs.reshape(-1, 3)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(pose.position, dirs.shape)
    return np.ascontiguousarray(origins), np.ascontiguousarray(dirs)


def _bounding_rect(points: np.ndarray, pose: CameraPose, pad: int = 2):
    px, py, depth = project_points(points, pose)
    if np.any(depth <= 0.0):  # something behind the camera: no culling
        return 0, 0, pose.resolution, pose.resolution
    res = pose.resolution
    x0 = max(int(math.floor(px.min())) - pad, 0)
    y0 = max(int(math.floor(py.min())) - pad, 0)
    x1 = min(int(math.ceil(px.max())) + pad + 1, res)
    y1 = min(int(math.ceil(py.max())) + pad + 1, res)
    if x0 >= x1 or y0 >= y1:
        return 0, 0, 0, 0  # fully off-screen
    return x0, y0, x1, y1


def _shade(normal_dot_light: np.ndarray, cfg: RenderConfig) -> np.ndarray:
    lit = cfg.ambient + (1.0 - cfg.ambient) * np.abs(normal_dot_light)
    return cfg.albedo * np.clip(lit, 0.0, 1.0)


def _as_pose(view, cfg: RenderConfig) -> CameraPose:
    if isinstance(view, CameraPose):
        return view
    return CameraPose.from_viewpoint(view, cfg)


def render_view(mesh: TriMesh, view, cfg: RenderConfig = RenderConfig()) -> Image:
    """Render the mesh from a viewpoint (or prebuilt pose) to an RGB image."""
    pose = _as_pose(view, cfg)
    res = pose.resolution
    out = np.full((res, res, 3), cfg.background, dtype=np.float64)
    x0, y0, x1, y1 = _bounding_rect(mesh.vertices, pose)
    if x1 > x0 and y1 > y0:
        origins, dirs = _pixel_rays(pose, x0, y0, x1, y1)
        face, _t, _u, _v = kernels.ray_triangle_hits(
            origins, dirs, mesh.corner0, mesh.edge1, mesh.edge2
        )
        hit = face >= 0
        if np.any(hit):
            ndl = mesh.face_normals[face[hit]] @ pose.frame.forward
            gray = _shade(ndl, cfg)
            block = out[y0:y1, x0:x1].reshape(-1, 3)
            block[hit] = gray[:, None]
            out[y0:y1, x0:x1] = block.reshape(y1 - y0, x1 - x0, 3)
    return Image(out)


def silhouette(image: Image, cutoff: float = FOREGROUND_CUTOFF) -> np.ndarray:
    """Boolean foreground mask: pixels darker than the background cutoff."""
    return image.luminance() < cutoff


# ---------------------------------------------------------------------------
# Voxel grid and carving


@dataclass
class VoxelGrid:
    """Axis-aligned voxel block with occupancy and per-cell color."""

    origin: np.ndarray      # (3,) min corner
    cell_size: np.ndarray   # (3,) edge lengths
    occupancy: np.ndarray   # (nx, ny, nz) bool
    colors: np.ndarray      # (nx, ny, nz, 3) float64

    @classmethod
    def initial(
        cls,
        dims: int | tuple[int, int, int] = 64,
        half_extent: float = 1.1,
        ball_radius: float = 1.05,
    ) -> "VoxelGrid":
        """Fresh grid: a centered ball of occupied cells inside a cube.

        The cube spans [-half_extent, half_extent]^3 (a superset of every
        normalized mesh bounding box); cells whose centers lie within
        ball_radius start occupied. The default ball exceeds the unit
        bounding sphere by half a cell diagonal, so all surface-containing
        cells start occupied, and it stays inside the default viewing
        frustum so every cell can be carved by evidence from any view.
        """
        if isinstance(dims, int):
            dims = (dims, dims, dims)
        dims = tuple(int(d) for d in dims)
        if min(dims) < 4:
            raise ValueError(f"grid dims must be >= 4, got {dims}")
        origin = np.full(3, -half_extent)
        cell = np.array([2.0 * half_extent / d for d in dims])
        grid = cls(
            origin=origin,
            cell_size=cell,
            occupancy=np.zeros(dims, dtype=bool),
            colors=np.full(dims + (3,), 0.5, dtype=np.float64),
        )
        centers = grid.cell_centers()
        dist = np.linalg.norm(centers, axis=3)
        grid.occupancy[:] = dist <= ball_radius
        return grid

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.occupancy.shape

    def cell_centers(self) -> np.ndarray:
        """(nx, ny, nz, 3) world coordinates of cell centers."""
        nx, ny, nz = self.dims
        xs = self.origin[0] + (np.arange(nx) + 0.5) * self.cell_size[0]
        ys = self.origin[1] + (np.arange(ny) + 0.5) * self.cell_size[1]
        zs = self.origin[2] + (np.arange(nz) + 0.5) * self.cell_size[2]
        gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
        return np.stack([gx, gy, gz], axis=3)

    def occupied_count(self) -> int:
        return int(self.occupancy.sum())

    def copy(self) -> "VoxelGrid":
        return VoxelGrid(
            origin=self.origin.copy(),
            cell_size=self.cell_size.copy(),
            occupancy=self.occupancy.copy(),
            colors=self.colors.copy(),
        )

    def surface_mask(self) -> np.ndarray:
        """Occupied cells with an empty 6-neighbor or on the grid border."""
        occ = self.occupancy
        padded = np.pad(occ, 1, constant_values=False)
        interior = (
            padded[:-2, 1:-1, 1:-1]
            & padded[2:, 1:-1, 1:-1]
            & padded[1:-1, :-2, 1:-1]
            & padded[1:-1, 2:, 1:-1]
            & padded[1:-1, 1:-1, :-2]
            & padded[1:-1, 1:-1, 2:]
        )
        return occ & ~interior

    def surface_points(self) -> np.ndarray:
        mask = self.surface_mask()
        if not mask.any():
            raise EmptyHullError("voxel grid holds no occupied cells")
        return self.cell_centers()[mask]


def carve_hull(
    image: Image,
    view,
    grid: VoxelGrid,
    cfg: RenderConfig = RenderConfig(),
    cutoff: float = FOREGROUND_CUTOFF,
    conservative: bool = False,
) -> VoxelGrid:
    """Remove cells that this view images as background. Mutates grid.

    Only cells with actual evidence are touched: a cell whose center
    projects outside the image (or behind the camera) is left alone;
    otherwise the center pixel decides. With conservative=True a cell
    also survives when the silhouette passes within the projected
    half-diagonal of the cell, so cells containing true surface are
    never carved at the cost of a fatter hull. Surviving cells visible
    from this view (first hit along their pixel ray) take that pixel's
    color; occluded cells keep their previous color.

    Raises EmptyHullError when the silhouette has no foreground at all
    (carving with it would be meaningless).
    """
    pose = _as_pose(view, cfg)
    if pose.resolution != image.width or pose.resolution != image.height:
        raise ValueError(
            f"image is {image.width}x{image.height}, pose expects "
            f"{pose.resolution}x{pose.resolution}"
        )
    sil = silhouette(image, cutoff)
    if not sil.any():
        raise EmptyHullError("silhouette is empty; nothing to carve against")
    occ = grid.occupancy
    if not occ.any():
        return grid
    centers = grid.cell_centers()[occ]
    px, py, depth = project_points(centers, pose)
    res = pose.resolution
    ix = np.rint(px).astype(np.int64)
    iy = np.rint(py).astype(np.int64)
    in_frame = (depth > 1e-9) & (ix >= 0) & (ix < res) & (iy >= 0) & (iy < res)

    keep = np.ones(centers.shape[0], dtype=bool)
    half_diag = 0.5 * float(np.linalg.norm(grid.cell_size))
    if conservative:
        if sil.all():
            inside_sil = np.ones(centers.shape[0], dtype=bool)
        else:
            # Distance (in pixels) from each pixel to the nearest
            # silhouette pixel; a cell survives when that distance is
            # within its own projected footprint radius.
            dist_px = distance_transform_edt(~sil)
            px_world = 2.0 * depth * pose.tan_half_fov / res
            footprint = half_diag / px_world + math.sqrt(0.5)
            safe_ix = np.clip(ix, 0, res - 1)
            safe_iy = np.clip(iy, 0, res - 1)
            inside_sil = dist_px[safe_iy, safe_ix] <= footprint
        keep &= ~in_frame | inside_sil
    else:
        safe_ix = np.clip(ix, 0, res - 1)
        safe_iy = np.clip(iy, 0, res - 1)
        keep &= ~in_frame | sil[safe_iy, safe_ix]

    flat_idx = np.flatnonzero(occ.reshape(-1))
    occ.reshape(-1)[flat_idx[~keep]] = False

    # Paint only cells this view actually sees: march a ray per pixel and
    # give the first occupied cell that pixel's color. Occluded cells keep
    # their current color (0.5 "unobserved" gray until some view sees them),
    # so renders from never-observed directions stay visibly wrong.
    if occ.any():
        nx, ny, nz = grid.dims
        corners = grid.origin + grid.cell_size * np.array(
            [[i, j, k] for i in (0, nx) for j in (0, ny) for k in (0, nz)],
            dtype=float,
        )
        x0, y0, x1, y1 = _bounding_rect(corners, pose)
        if x1 > x0 and y1 > y0:
            origins, dirs = _pixel_rays(pose, x0, y0, x1, y1)
            occ_u8 = np.ascontiguousarray(occ.astype(np.uint8))
            cell, _axis, _t = kernels.march_grid(
                origins, dirs, occ_u8, np.ascontiguousarray(grid.origin),
                np.ascontiguousarray(grid.cell_size),
            )
            hit = cell >= 0
            src = image.pixels[y0:y1, x0:x1].reshape(-1, 3)
            grid.colors.reshape(-1, 3)[cell[hit]] = src[hit]
    return grid


# Smoothing radius (in cells) for the occupancy field that hull-render
# normals are estimated from. Around one cell keeps normals local while
# washing out the voxel staircase.
NORMAL_FIELD_SIGMA = 1.0


def render_hull(grid: VoxelGrid, view, cfg: RenderConfig = RenderConfig()) -> Image:
    """Ray-march the grid front to back; shade the first occupied cell.

    The cell's stored color is lit with the same camera-frame light as
    render_view. Normals come from the gradient of a smoothed occupancy
    field; where that gradient vanishes the axis of the entered cell
    face stands in.
    """
    pose = _as_pose(view, cfg)
    res = pose.resolution
    out = np.full((res, res, 3), cfg.background, dtype=np.float64)
    if not grid.occupancy.any():
        return Image(out)
    nx, ny, nz = grid.dims
    corners = grid.origin + grid.cell_size * np.array(
        [[i, j, k] for i in (0, nx) for j in (0, ny) for k in (0, nz)], dtype=float
    )
    x0, y0, x1, y1 = _bounding_rect(corners, pose)
    if x1 <= x0 or y1 <= y0:
        return Image(out)
    origins, dirs = _pixel_rays(pose, x0, y0, x1, y1)
    occ_u8 = np.ascontiguousarray(grid.occupancy.astype(np.uint8))
    cell, axis, _t = kernels.march_grid(
        origins, dirs, occ_u8, np.ascontiguousarray(grid.origin),
        np.ascontiguousarray(grid.cell_size),
    )
    hit = cell >= 0
    if np.any(hit):
        field = gaussian_filter(
            grid.occupancy.astype(np.float64), sigma=NORMAL_FIELD_SIGMA
        )
        grad = np.stack(np.gradient(field), axis=-1).reshape(-1, 3)
        gv = grad[cell[hit]]
        norm = np.linalg.norm(gv, axis=1)
        smooth = norm > 1e-12
        normals = np.eye(3)[axis[hit]]
        normals[smooth] = gv[smooth] / norm[smooth, None]
        base = grid.colors.reshape(-1, 3)[cell[hit]]
        ndl = np.abs(normals @ pose.frame.forward)
        lit = cfg.ambient + (1.0 - cfg.ambient) * ndl
        shaded = base * np.clip(lit, 0.0, 1.0)[:, None]
        block = out[y0:y1, x0:x1].reshape(-1, 3)
        block[hit] = np.clip(shaded, 0.0, 1.0)
        out[y0:y1, x0:x1] = block.reshape(y1 - y0, x1 - x0, 3)
    return Image(out)


# ---------------------------------------------------------------------------
# Uncertainty map generation


@dataclass(frozen=True)
class SimConfig:
    """Everything the simulated uncertainty pipeline needs."""

    render: RenderConfig = RenderConfig()
    grid_dims: int = 64
    n_side: int = DEFAULT_N_SIDE

    def with_resolution(self, resolution: int) -> "SimConfig":
        return replace(self, render=replace(self.render, resolution=resolution))


def make_umap(
    mesh: TriMesh,
    view: Viewpoint,
    kind: UncertaintyKind = UncertaintyKind.PSNR,
    sim: SimConfig = SimConfig(),
    step_index: int = 0,
) -> UMap:
    """Measure how wrong single-view hull renders are per anchor direction.

    Reconstructs a visual hull from the one input view, then compares a
    hull render against a ground-truth render at each of the view's
    anchor directions; the metric error maps to [0, 1] uncertainty.
    """
    gt = render_view(mesh, view, sim.render)
    grid = VoxelGrid.initial(dims=sim.grid_dims)
    carve_hull(gt, view, grid, sim.render)
    anchors = anchors_for_view(view, sim.n_side)
    values = np.empty(anchors.shape[0], dtype=np.float64)
    for k, anchor in enumerate(anchors):
        vp = viewpoint_from_dir(anchor, view.radius)
        truth = render_view(mesh, vp, sim.render)
        guess = render_hull(grid, vp, sim.render)
        if kind is UncertaintyKind.PSNR:
            metric = psnr(truth, guess)
        elif kind is UncertaintyKind.SSIM:
            metric = ssim(truth, guess)
        elif kind is UncertaintyKind.MSE:
            metric = mse(truth, guess)
        else:
            raise ValueError(f"cannot simulate uncertainty kind {kind.value!r}")
        values[k] = to_uncertainty(metric, kind)
    return UMap(
        kind=kind,
        source_view=view,
        step_index=step_index,
        anchors_world=anchors,
        values=values,
    )


# ---------------------------------------------------------------------------
# Dataset generation


def strided_anchor_views(
    views_per_instance: int,
    radius: float = DEFAULT_RADIUS,
    n_side: int = DEFAULT_N_SIDE,
) -> list[Viewpoint]:
    """Evenly strided selection of the canonical anchor directions."""
    from .geometry import canonical_anchors

    anchors = canonical_anchors(n_side)
    npix = anchors.shape[0]
    if not (1 <= views_per_instance <= npix):
        raise ValueError(
            f"views_per_instance must lie in [1, {npix}], got {views_per_instance}"
        )
    idx = [(i * npix) // views_per_instance for i in range(views_per_instance)]
    return [viewpoint_from_dir(anchors[i], radius) for i in idx]


def gen_dataset(
    mesh_paths: Sequence,
    out_dir,
    views_per_instance: int = 12,
    resolution: int = 128,
    radius: float = DEFAULT_RADIUS,
    seed: int = 0,
    kinds: Sequence[UncertaintyKind] = (UncertaintyKind.PSNR,),
    grid_dims: int = 64,
    n_side: int = DEFAULT_N_SIDE,
) -> DatasetManifest:
    """Render a per-view dataset with uncertainty maps and write a manifest.

    Each mesh becomes one instance: the mesh is copied in (normalized, as
    OBJ), views_per_instance anchor views are rendered to pixmaps, and a
    map per requested kind is simulated for every view. Output paths in
    the manifest are relative to the manifest file; two runs with equal
    arguments produce byte-identical trees.
    """
    if not mesh_paths:
        raise ValueError("no mesh files given")
    kinds = list(kinds)
    if not kinds:
        raise ValueError("at least one uncertainty kind is required")
    out = Path(out_dir)
    (out / "meshes").mkdir(parents=True, exist_ok=True)
    sim = SimConfig(
        render=RenderConfig(resolution=resolution),
        grid_dims=grid_dims,
        n_side=n_side,
    )
    manifest = DatasetManifest(
        n_side=n_side,
        resolution=resolution,
        radius=radius,
        views_per_instance=views_per_instance,
        seed=seed,
        kind=kinds[0],
        instances=[],
    )
    views = strided_anchor_views(views_per_instance, radius, n_side)
    for mesh_path in sorted(Path(p) for p in mesh_paths):
        instance_id = mesh_path.stem
        mesh = load_obj(mesh_path)
        rel_mesh = f"meshes/{instance_id}.obj"
        save_obj(mesh, out / rel_mesh)
        inst = InstanceRecord(instance_id=instance_id, mesh_path=rel_mesh)
        (out / "images" / instance_id).mkdir(parents=True, exist_ok=True)
        (out / "umaps" / instance_id).mkdir(parents=True, exist_ok=True)
        for vi, vp in enumerate(views):
            rel_img = f"images/{instance_id}/v{vi:03d}.ppm"
            write_ppm(render_view(mesh, vp, sim.render), out / rel_img)
            rec = ViewRecord(view=vp, image_path=rel_img)
            for kind in kinds:
                umap = make_umap(mesh, vp, kind, sim)
                rel_umap = f"umaps/{instance_id}/v{vi:03d}_{kind.value}.umap"
                write_umap(umap, out / rel_umap)
                rec.umap_paths[kind.value] = rel_umap
            inst.views.append(rec)
        manifest.instances.append(inst)
    save_manifest(manifest, out / "manifest.txt")
    return manifest


def discover_meshes(meshes_dir) -> list[Path]:
    d = Path(meshes_dir)
    if not d.is_dir():
        raise FormatError(f"{d}: not a directory of meshes")
    found = sorted(d.glob("*.obj"))
    if not found:
        raise FormatError(f"{d}: no .obj files found")
    return found
