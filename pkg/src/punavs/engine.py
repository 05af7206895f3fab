"""Active view selection loop.

Each step: predict an uncertainty map for the current view, sample 512
fresh candidate viewpoints, interpolate every historical map at every
candidate, drop redundant candidates, aggregate each survivor's history
into one score, and move to the argmax. Ties always resolve to the
lowest candidate index so runs are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, NotFoundError, PeerError, VersionError
from .geometry import (
    DEFAULT_RADIUS,
    Viewpoint,
    anchors_for_view,
    angular_distances,
    canonical_anchors,
    sample_candidates,
    viewpoint_from_dir,
    viewpoints_to_dirs,
)
from .imageio import Image
from .meshes import TriMesh
from .metrics import UncertaintyKind
from .simulator import RenderConfig, render_view
from .textio import LineReader, fmt, parse_float, parse_int
from .umaps import UMap, interpolate_on_sphere

CANDIDATE_COUNT = 512
DEFAULT_BUDGET = 20
PRODUCT_FLOOR = 1e-12

START_VIEW = Viewpoint(0.0, 0.0, DEFAULT_RADIUS)


# ---------------------------------------------------------------------------
# Redundancy filters


@dataclass(frozen=True)
class SmallThreshold:
    """Kill candidates whose interpolated value ever dropped below threshold."""

    threshold: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must be in (0, 1), got {self.threshold}")

    def kills(self, values, cand_dirs, selected_dirs):
        return values.min(axis=0) < self.threshold


@dataclass(frozen=True)
class Disable:
    """No filtering; every candidate stays alive."""

    def kills(self, values, cand_dirs, selected_dirs):
        return np.zeros(values.shape[1], dtype=bool)


@dataclass(frozen=True)
class TopCount:
    """Kill candidates ranked among the count lowest values at any step."""

    count: int = 32

    def __post_init__(self):
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")

    def kills(self, values, cand_dirs, selected_dirs):
        kill = np.zeros(values.shape[1], dtype=bool)
        for row in values:
            # stable sort: equal values resolve by candidate index
            kill[np.argsort(row, kind="stable")[: self.count]] = True
        return kill


@dataclass(frozen=True)
class SingleAngular:
    """Kill candidates strictly closer than min_sep_deg to any past view."""

    min_sep_deg: float = 5.0

    def __post_init__(self):
        if self.min_sep_deg <= 0.0:
            raise ValueError(f"min_sep_deg must be > 0, got {self.min_sep_deg}")

    def kills(self, values, cand_dirs, selected_dirs):
        if len(selected_dirs) == 0:
            return np.zeros(values.shape[1], dtype=bool)
        ang = angular_distances(cand_dirs, selected_dirs)
        return (ang < np.radians(self.min_sep_deg)).any(axis=1)


def apply_filter(policy, values, cand_dirs, selected_dirs):
    """Alive mask over candidates, plus an every-candidate-died flag.

    values is the (steps, candidates) interpolated history. If the policy
    would kill everything, all candidates are resurrected and the flag is
    set, so selection always has something to pick.
    """
    values = np.asarray(values, dtype=np.float64)
    kill = policy.kills(values, cand_dirs, selected_dirs)
    if kill.all():
        return np.ones(values.shape[1], dtype=bool), True
    return ~kill, False


# ---------------------------------------------------------------------------
# Score aggregation


@dataclass(frozen=True)
class ProductAll:
    """Score = product of the candidate's values across all steps."""

    def scores(self, values, cand_dirs):
        logs = np.log(np.maximum(values, PRODUCT_FLOOR))
        return np.exp(logs.sum(axis=0))


@dataclass(frozen=True)
class LastOnly:
    """Score = the candidate's value in the newest map only."""

    def scores(self, values, cand_dirs):
        return values[-1].copy()


@dataclass(frozen=True)
class NeighborDiff:
    """Score = newest value minus the mean over nearby candidates.

    Nearby means other candidates within radius_deg; a candidate with
    none takes its single nearest other candidate instead. Scores can be
    negative; only their ranking matters.
    """

    radius_deg: float = 5.0

    def __post_init__(self):
        if self.radius_deg <= 0.0:
            raise ValueError(f"radius_deg must be > 0, got {self.radius_deg}")

    def scores(self, values, cand_dirs):
        last = values[-1]
        n = last.shape[0]
        if n == 1:
            return np.zeros(1)
        ang = angular_distances(cand_dirs, cand_dirs)
        np.fill_diagonal(ang, np.inf)
        near = ang <= np.radians(self.radius_deg)
        counts = near.sum(axis=1)
        sums = near.astype(np.float64) @ last
        ctx = last[np.argmin(ang, axis=1)]  # fallback: nearest other candidate
        has = counts > 0
        ctx[has] = sums[has] / counts[has]
        return last - ctx


def aggregate_scores(policy, values, cand_dirs):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 1:
        raise ValueError("values must be a (steps, candidates) matrix")
    return policy.scores(values, cand_dirs)


def select_index(scores, alive) -> int:
    """Argmax over alive candidates; ties go to the lowest index."""
    idx = np.flatnonzero(alive)
    if idx.size == 0:
        raise ValueError("no alive candidates to select from")
    return int(idx[np.argmax(scores[idx])])


# ---------------------------------------------------------------------------
# Policy tokens (shared by the CLI and trajectory files)

_FILTER_NAMES = {"small", "disable", "top32", "single"}


def parse_filter(token: str):
    name, _, arg = token.partition(":")
    try:
        if name == "disable":
            if arg:
                raise ValueError("disable takes no parameter")
            return Disable()
        if name == "small":
            return SmallThreshold(float(arg)) if arg else SmallThreshold()
        if name == "top32":
            return TopCount(int(arg)) if arg else TopCount()
        if name == "single":
            return SingleAngular(float(arg)) if arg else SingleAngular()
    except ValueError as exc:
        raise ValueError(f"bad filter token {token!r}: {exc}") from None
    raise ValueError(
        f"unknown filter {token!r} (expected one of {sorted(_FILTER_NAMES)})"
    )


def filter_token(policy) -> str:
    if isinstance(policy, Disable):
        return "disable"
    if isinstance(policy, SmallThreshold):
        return f"small:{policy.threshold:g}"
    if isinstance(policy, TopCount):
        return f"top32:{policy.count}"
    if isinstance(policy, SingleAngular):
        return f"single:{policy.min_sep_deg:g}"
    raise TypeError(f"not a filter policy: {policy!r}")


def parse_agg(token: str):
    name, _, arg = token.partition(":")
    try:
        if name == "product":
            if arg:
                raise ValueError("product takes no parameter")
            return ProductAll()
        if name == "last":
            if arg:
                raise ValueError("last takes no parameter")
            return LastOnly()
        if name == "diff":
            return NeighborDiff(float(arg)) if arg else NeighborDiff()
    except ValueError as exc:
        raise ValueError(f"bad aggregation token {token!r}: {exc}") from None
    raise ValueError(
        f"unknown aggregation {token!r} (expected product, last, or diff)"
    )


def agg_token(policy) -> str:
    if isinstance(policy, ProductAll):
        return "product"
    if isinstance(policy, LastOnly):
        return "last"
    if isinstance(policy, NeighborDiff):
        return f"diff:{policy.radius_deg:g}"
    raise TypeError(f"not an aggregation policy: {policy!r}")


# ---------------------------------------------------------------------------
# Episode loop


@dataclass(frozen=True)
class SelectionRound:
    """What happened when picking the next view after one step."""

    candidate_count: int
    alive_count: int
    chosen_index: int
    score: float
    filter_exhausted: bool


@dataclass(frozen=True)
class StepRecord:
    view: Viewpoint
    umap: UMap
    selection: SelectionRound | None  # None on the final step


@dataclass(frozen=True)
class EpisodeTrajectory:
    steps: tuple
    budget: int
    seed: int
    filter_token: str
    agg_token: str
    candidate_count: int
    complete: bool

    @property
    def views(self) -> list[Viewpoint]:
        return [s.view for s in self.steps]

    @property
    def kind(self) -> UncertaintyKind:
        return self.steps[0].umap.kind


def run_episode(
    predictor,
    budget: int = DEFAULT_BUDGET,
    filter_policy=None,
    agg_policy=None,
    seed: int = 0,
    start_view: Viewpoint = START_VIEW,
    mesh: TriMesh | None = None,
    render: RenderConfig = RenderConfig(),
    candidate_count: int = CANDIDATE_COUNT,
) -> EpisodeTrajectory:
    """Run one selection episode of `budget` views starting at start_view.

    Candidates are redrawn each step from a stream keyed on (seed, step),
    so a fixed seed gives a byte-identical trajectory. If the predictor
    raises mid-episode the partial trajectory is returned with
    complete=False.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    if candidate_count < 1:
        raise ValueError(f"candidate_count must be >= 1, got {candidate_count}")
    filter_policy = filter_policy if filter_policy is not None else SmallThreshold()
    agg_policy = agg_policy if agg_policy is not None else ProductAll()

    needs_image = bool(getattr(predictor, "needs_image", False))
    if needs_image and mesh is None:
        raise ValueError("this predictor needs images; pass the mesh to render")

    history: list[UMap] = []
    steps: list[StepRecord] = []
    current = start_view
    complete = True

    for t in range(budget):
        image: Image | None = None
        if needs_image:
            image = render_view(mesh, current, render)
        try:
            umap = predictor.predict(current, image, step_index=t)
        except (PeerError, NotFoundError):
            complete = False
            break
        history.append(umap)

        if t == budget - 1:
            steps.append(StepRecord(view=current, umap=umap, selection=None))
            break

        cands = sample_candidates(candidate_count, seed=[seed, t], radius=current.radius)
        cand_dirs = viewpoints_to_dirs(cands)
        values = np.stack(
            [interpolate_on_sphere(m.anchors_world, m.values, cand_dirs)
             for m in history]
        )
        selected_dirs = viewpoints_to_dirs([s.view for s in steps] + [current])
        alive, exhausted = apply_filter(
            filter_policy, values, cand_dirs, selected_dirs
        )
        scores = aggregate_scores(agg_policy, values, cand_dirs)
        chosen = select_index(scores, alive)
        steps.append(
            StepRecord(
                view=current,
                umap=umap,
                selection=SelectionRound(
                    candidate_count=candidate_count,
                    alive_count=int(alive.sum()),
                    chosen_index=chosen,
                    score=float(scores[chosen]),
                    filter_exhausted=exhausted,
                ),
            )
        )
        current = cands[chosen]

    return EpisodeTrajectory(
        steps=tuple(steps),
        budget=budget,
        seed=seed,
        filter_token=filter_token(filter_policy),
        agg_token=agg_token(agg_policy),
        candidate_count=candidate_count,
        complete=complete,
    )


# ---------------------------------------------------------------------------
# Trajectory files

TRAJ_MAGIC = "PUNTRAJ"
TRAJ_VERSION = 1


def trajectory_to_text(traj: EpisodeTrajectory) -> str:
    if not traj.steps:
        raise ValueError("cannot serialize a trajectory with no steps")
    lines = [
        f"{TRAJ_MAGIC} {TRAJ_VERSION}",
        f"budget {traj.budget}",
        f"seed {traj.seed}",
        f"filter {traj.filter_token}",
        f"agg {traj.agg_token}",
        f"candidates {traj.candidate_count}",
        f"kind {traj.kind.value}",
        f"complete {1 if traj.complete else 0}",
        f"steps {len(traj.steps)}",
    ]
    for i, step in enumerate(traj.steps):
        v = step.view
        lines.append(f"step {i}")
        lines.append(
            f"view {fmt(v.elevation_deg)} {fmt(v.azimuth_deg)} {fmt(v.radius)}"
        )
        lines.append("values " + " ".join(fmt(x) for x in step.umap.values))
        if step.selection is not None:
            s = step.selection
            lines.append(
                f"round {s.candidate_count} {s.alive_count} {s.chosen_index} "
                f"{fmt(s.score)} {1 if s.filter_exhausted else 0}"
            )
    return "\n".join(lines) + "\n"


def save_trajectory(traj: EpisodeTrajectory, path) -> None:
    Path(path).write_text(trajectory_to_text(traj), encoding="utf-8")


def _header_int(reader, line, key):
    parts = line.split()
    if len(parts) != 2 or parts[0] != key:
        raise FormatError(f"{reader.where()}: expected '{key} <value>'")
    return parse_int(parts[1], reader.where())


def _header_str(reader, line, key):
    parts = line.split(None, 1)
    if len(parts) != 2 or parts[0] != key:
        raise FormatError(f"{reader.where()}: expected '{key} <value>'")
    return parts[1]


def trajectory_from_text(text: str, name: str = "<trajectory>") -> EpisodeTrajectory:
    reader = LineReader(text, name)
    header = reader.expect_line("header").split()
    if len(header) != 2 or header[0] != TRAJ_MAGIC:
        raise FormatError(f"{name}: not a trajectory file")
    version = parse_int(header[1], reader.where())
    if version != TRAJ_VERSION:
        raise VersionError(f"{name}: unsupported trajectory version {version}")
    budget = _header_int(reader, reader.expect_line("budget"), "budget")
    seed = _header_int(reader, reader.expect_line("seed"), "seed")
    ftoken = _header_str(reader, reader.expect_line("filter"), "filter")
    atoken = _header_str(reader, reader.expect_line("agg"), "agg")
    cand_count = _header_int(reader, reader.expect_line("candidates"), "candidates")
    kind = UncertaintyKind.from_token(
        _header_str(reader, reader.expect_line("kind"), "kind")
    )
    complete = _header_int(reader, reader.expect_line("complete"), "complete") == 1
    n_steps = _header_int(reader, reader.expect_line("steps"), "steps")
    if n_steps < 1:
        raise FormatError(f"{name}: trajectory must hold at least one step")

    steps = []
    for i in range(n_steps):
        sline = reader.expect_line("step marker").split()
        if len(sline) != 2 or sline[0] != "step" or sline[1] != str(i):
            raise FormatError(f"{reader.where()}: expected 'step {i}'")
        vline = reader.expect_line("view").split()
        if len(vline) != 4 or vline[0] != "view":
            raise FormatError(f"{reader.where()}: expected a view line")
        view = Viewpoint(*(parse_float(t, reader.where()) for t in vline[1:]))
        uline = reader.expect_line("values").split()
        if uline[0] != "values":
            raise FormatError(f"{reader.where()}: expected a values line")
        values = np.array(
            [parse_float(t, reader.where()) for t in uline[1:]], dtype=np.float64
        )
        umap = UMap(
            kind=kind,
            source_view=view,
            step_index=i,
            anchors_world=anchors_for_view(view),
            values=values,
        )

        # an interrupted episode records a round for every stored step; a
        # finished one records rounds everywhere except the final step
        selection = None
        if i < n_steps - 1 or not complete:
            rline = reader.expect_line("round").split()
            if len(rline) != 6 or rline[0] != "round":
                raise FormatError(f"{reader.where()}: expected a 5-field round line")
            selection = SelectionRound(
                candidate_count=parse_int(rline[1], reader.where()),
                alive_count=parse_int(rline[2], reader.where()),
                chosen_index=parse_int(rline[3], reader.where()),
                score=parse_float(rline[4], reader.where()),
                filter_exhausted=parse_int(rline[5], reader.where()) == 1,
            )
        steps.append(StepRecord(view=view, umap=umap, selection=selection))
    return EpisodeTrajectory(
        steps=tuple(steps),
        budget=budget,
        seed=seed,
        filter_token=ftoken,
        agg_token=atoken,
        candidate_count=cand_count,
        complete=complete,
    )


def load_trajectory(path) -> EpisodeTrajectory:
    text = Path(path).read_text(encoding="utf-8")
    return trajectory_from_text(text, str(path))


# ---------------------------------------------------------------------------
# Baselines

FPS_POOL_N_SIDE = 16


def baseline_select(
    kind: str,
    budget: int,
    seed: int = 0,
    radius: float = DEFAULT_RADIUS,
    start_view: Viewpoint | None = None,
) -> list[Viewpoint]:
    """Non-adaptive comparison policies.

    random: budget independent area-uniform draws. fps: greedy
    farthest-point placement, starting from start_view, over a dense
    spherical grid extended with the antipodes of everything selected so
    far (so the optimal second view, the exact antipode, is reachable).
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    if kind == "random":
        return sample_candidates(budget, seed=[seed, 0], radius=radius)
    if kind == "fps":
        start = start_view if start_view is not None else Viewpoint(0.0, 0.0, radius)
        views = [start]
        chosen_dirs = [start.unit_dir()]
        pool = canonical_anchors(FPS_POOL_N_SIDE)
        for _ in range(budget - 1):
            cand = np.concatenate([pool, -np.array(chosen_dirs)], axis=0)
            dists = angular_distances(cand, np.array(chosen_dirs))
            best = int(np.argmax(dists.min(axis=1)))
            direction = cand[best]
            views.append(viewpoint_from_dir(direction, radius))
            chosen_dirs.append(direction)
        return views
    raise ValueError(f"unknown baseline {kind!r} (expected 'random' or 'fps')")
