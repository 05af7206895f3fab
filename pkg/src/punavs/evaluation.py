"""Evaluation of a selected view set against the true mesh.

Covers the image side (hull renders vs ground-truth renders at a fixed
set of held-out poses), the geometry side (hull surface accuracy and
completion), and coverage (which mesh faces any selected view actually
saw). Everything is seeded and deterministic, so a report serializes to
identical bytes across runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .errors import EmptyHullError
from .geometry import DEFAULT_RADIUS, Viewpoint, viewpoints_to_dirs
from .meshes import TriMesh
from .metrics import mse, psnr, ssim
from .simulator import (
    RenderConfig,
    VoxelGrid,
    carve_hull,
    render_hull,
    render_view,
)
from .textio import fmt


@dataclass(frozen=True)
class EvalPoseSet:
    """Held-out camera poses: all combinations of 8 azimuths x 5 elevations."""

    azimuths_deg: tuple
    elevations_deg: tuple
    radius: float = DEFAULT_RADIUS

    @classmethod
    def sample(
        cls,
        seed: int,
        n_azimuths: int = 8,
        n_elevations: int = 5,
        radius: float = DEFAULT_RADIUS,
    ) -> "EvalPoseSet":
        """Draw azimuths uniformly and elevations area-uniformly."""
        rng = np.random.default_rng(seed)
        azim = np.sort(rng.uniform(0.0, 360.0, size=n_azimuths))
        elev = np.sort(np.degrees(np.arccos(rng.uniform(-1.0, 1.0, size=n_elevations))))
        return cls(
            azimuths_deg=tuple(float(a) for a in azim),
            elevations_deg=tuple(float(e) for e in elev),
            radius=radius,
        )

    def poses(self) -> list[Viewpoint]:
        """Elevation-major ordering; index = elev_i * n_azimuths + azim_i."""
        return [
            Viewpoint(e, a, self.radius)
            for e in self.elevations_deg
            for a in self.azimuths_deg
        ]


# ---------------------------------------------------------------------------
# Visibility


def visible_faces(mesh: TriMesh, view: Viewpoint) -> np.ndarray:
    """Boolean mask of faces this viewpoint sees.

    A face is visible when it faces the camera and the segment from the
    camera to its centroid first intersects the mesh at that face.
    Assumes outward-wound faces (procedural shapes guarantee it).
    """
    pos = view.position()
    to_cam = pos[None, :] - mesh.face_centroids
    front = np.einsum("ij,ij->i", mesh.face_normals, to_cam) > 0.0
    dirs = mesh.face_centroids - pos[None, :]
    dist = np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = np.ascontiguousarray(dirs / dist)
    origins = np.ascontiguousarray(np.broadcast_to(pos, dirs.shape))
    face, _t, _u, _v = kernels.ray_triangle_hits(
        origins, dirs, mesh.corner0, mesh.edge1, mesh.edge2
    )
    return front & (face == np.arange(mesh.n_faces))


def visibility(mesh: TriMesh, views) -> tuple[float, float]:
    """(fraction of faces seen, area-weighted fraction) over all views."""
    seen = np.zeros(mesh.n_faces, dtype=bool)
    for view in views:
        seen |= visible_faces(mesh, view)
    vis = float(seen.sum()) / mesh.n_faces
    vis_area = float(mesh.face_areas[seen].sum()) / float(mesh.face_areas.sum())
    return vis, vis_area


# ---------------------------------------------------------------------------
# Geometry metrics


def mesh_accuracy(points: np.ndarray, mesh: TriMesh) -> float:
    """Mean exact distance from points to the mesh surface."""
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    if pts.shape[0] == 0:
        raise ValueError("accuracy needs at least one point")
    dists = kernels.point_tri_dists(pts, mesh.corner0, mesh.edge1, mesh.edge2)
    return float(np.mean(dists))


def sample_surface(mesh: TriMesh, n_samples: int, seed: int) -> np.ndarray:
    """Area-weighted uniform surface samples, shape (n_samples, 3)."""
    if n_samples < 1:
        raise ValueError(f"need at least 1 sample, got {n_samples}")
    rng = np.random.default_rng(seed)
    weights = mesh.face_areas / mesh.face_areas.sum()
    idx = rng.choice(mesh.n_faces, size=n_samples, p=weights)
    u = rng.random(n_samples)
    v = rng.random(n_samples)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    return (
        mesh.corner0[idx]
        + u[:, None] * mesh.edge1[idx]
        + v[:, None] * mesh.edge2[idx]
    )


def completion_ratio(
    mesh: TriMesh,
    recon_points: np.ndarray,
    tau: float = 0.05,
    n_samples: int = 10000,
    seed: int = 7,
) -> float:
    """Fraction of true-surface samples within tau of a recon point."""
    recon = np.atleast_2d(recon_points)
    if recon.shape[0] == 0:
        raise EmptyHullError("no reconstruction points for completion ratio")
    gt = sample_surface(mesh, n_samples, seed)
    dists, _ = cKDTree(recon).query(gt, k=1)
    return float(np.mean(dists <= tau))


# ---------------------------------------------------------------------------
# Full evaluation


@dataclass(frozen=True)
class EvalConfig:
    render: RenderConfig = RenderConfig(resolution=64)
    grid_dims: int = 64
    tau: float = 0.05
    gt_samples: int = 10000
    sample_seed: int = 7


@dataclass
class PoseRow:
    index: int
    view: Viewpoint
    psnr: float
    ssim: float
    mse: float


@dataclass
class EvalReport:
    label: str
    n_views: int
    psnr_mean: float
    ssim_mean: float
    mse_mean: float
    accuracy: float
    completion: float
    vis: float
    vis_area: float
    hull_cells: int
    rows: list[PoseRow] = field(default_factory=list)

    def summary_values(self) -> tuple:
        """Values in the documented table column order."""
        return (
            self.psnr_mean,
            self.ssim_mean,
            self.mse_mean,
            self.accuracy,
            self.completion,
            self.vis,
            self.vis_area,
        )


TABLE_HEADER = "method psnr ssim mse acc cr vis vis_area"


def format_table_row(report: EvalReport) -> str:
    vals = report.summary_values()
    return " ".join([report.label] + [f"{v:.4f}" for v in vals])


def report_to_text(report: EvalReport) -> str:
    lines = [
        f"label {report.label}",
        f"n_views {report.n_views}",
        f"psnr_mean {fmt(report.psnr_mean)}",
        f"ssim_mean {fmt(report.ssim_mean)}",
        f"mse_mean {fmt(report.mse_mean)}",
        f"accuracy {fmt(report.accuracy)}",
        f"completion {fmt(report.completion)}",
        f"vis {fmt(report.vis)}",
        f"vis_area {fmt(report.vis_area)}",
        f"hull_cells {report.hull_cells}",
        f"n_poses {len(report.rows)}",
    ]
    return "\n".join(lines) + "\n"


def rows_to_csv(report: EvalReport) -> str:
    lines = ["pose_index,elevation_deg,azimuth_deg,psnr,ssim,mse"]
    for row in report.rows:
        lines.append(
            f"{row.index},{fmt(row.view.elevation_deg)},"
            f"{fmt(row.view.azimuth_deg)},{fmt(row.psnr)},"
            f"{fmt(row.ssim)},{fmt(row.mse)}"
        )
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"report_{report.label}.txt").write_text(
        report_to_text(report), encoding="utf-8"
    )
    (out / f"poses_{report.label}.csv").write_text(
        rows_to_csv(report), encoding="utf-8"
    )


def build_hull(
    mesh: TriMesh, views, cfg: EvalConfig = EvalConfig()
) -> VoxelGrid:
    """Visual hull carved from renders of the mesh at the given views."""
    grid = VoxelGrid.initial(dims=cfg.grid_dims)
    for view in views:
        img = render_view(mesh, view, cfg.render)
        carve_hull(img, view, grid, cfg.render)
    return grid


def evaluate_selection(
    mesh: TriMesh,
    views,
    poses: EvalPoseSet,
    cfg: EvalConfig = EvalConfig(),
    label: str = "run",
) -> EvalReport:
    """Score a view selection: image quality, geometry, and coverage."""
    views = list(views)
    if not views:
        raise ValueError("cannot evaluate an empty view selection")
    grid = build_hull(mesh, views, cfg)
    if not grid.occupancy.any():
        raise EmptyHullError("carving removed every cell")
    rows = []
    for i, pose in enumerate(poses.poses()):
        truth = render_view(mesh, pose, cfg.render)
        guess = render_hull(grid, pose, cfg.render)
        rows.append(
            PoseRow(
                index=i,
                view=pose,
                psnr=psnr(truth, guess),
                ssim=ssim(truth, guess),
                mse=mse(truth, guess),
            )
        )
    surface = grid.surface_points()
    acc = mesh_accuracy(surface, mesh)
    cr = completion_ratio(
        mesh, surface, tau=cfg.tau, n_samples=cfg.gt_samples, seed=cfg.sample_seed
    )
    vis, vis_area = visibility(mesh, views)
    return EvalReport(
        label=label,
        n_views=len(views),
        psnr_mean=float(np.mean([r.psnr for r in rows])),
        ssim_mean=float(np.mean([r.ssim for r in rows])),
        mse_mean=float(np.mean([r.mse for r in rows])),
        accuracy=acc,
        completion=cr,
        vis=vis,
        vis_area=vis_area,
        hull_cells=grid.occupied_count(),
        rows=rows,
    )
