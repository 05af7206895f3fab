"""Selection engine: filters, aggregation, the episode loop, baselines."""

import math

import numpy as np
import pytest

from punavs.errors import FormatError, PeerError, VersionError
from punavs.engine import (
    CANDIDATE_COUNT,
    PRODUCT_FLOOR,
    START_VIEW,
    Disable,
    LastOnly,
    NeighborDiff,
    ProductAll,
    SingleAngular,
    SmallThreshold,
    TopCount,
    agg_token,
    aggregate_scores,
    apply_filter,
    baseline_select,
    filter_token,
    load_trajectory,
    parse_agg,
    parse_filter,
    run_episode,
    save_trajectory,
    select_index,
    trajectory_from_text,
    trajectory_to_text,
)
from punavs.geometry import (
    Viewpoint,
    anchors_for_view,
    angular_distance,
    angular_distances,
    sample_candidates,
    unit_dir,
    viewpoints_to_dirs,
)
from punavs.metrics import UncertaintyKind
from punavs.umaps import UMap, interpolate_on_sphere


class FakePredictor:
    """Deterministic per-view maps with no rendering, for fast loop tests."""

    needs_image = False
    kind = UncertaintyKind.PSNR

    def __init__(self, low=0.2, high=0.9):
        self.low = low
        self.high = high
        self.calls = 0

    def predict(self, view, image=None, step_index=0):
        self.calls += 1
        key = [
            int(round(view.elevation_deg * 1000)) % (2**31),
            int(round(view.azimuth_deg * 1000)) % (2**31),
        ]
        values = np.random.default_rng(key).uniform(self.low, self.high, 48)
        return UMap(
            kind=self.kind,
            source_view=view,
            step_index=step_index,
            anchors_world=anchors_for_view(view),
            values=values,
        )

    def close(self):
        pass


class FailAfter(FakePredictor):
    def __init__(self, n_ok):
        super().__init__()
        self.n_ok = n_ok

    def predict(self, view, image=None, step_index=0):
        if self.calls >= self.n_ok:
            raise PeerError("peer went away")
        return super().predict(view, image, step_index)


def dirs_at(*pairs):
    return np.array([unit_dir(e, a) for e, a in pairs])


class TestFilters:
    def test_small_threshold_uses_worst_step(self):
        values = np.array([[0.05, 0.3, 0.1], [0.9, 0.3, 0.5]])
        kill = SmallThreshold(0.1).kills(values, None, None)
        # candidate 0 dipped below once; candidate 2 sits exactly at the
        # threshold and the comparison is strict
        np.testing.assert_array_equal(kill, [True, False, False])

    def test_small_threshold_validation(self):
        with pytest.raises(ValueError):
            SmallThreshold(0.0)
        with pytest.raises(ValueError):
            SmallThreshold(1.0)

    def test_disable_keeps_everything(self):
        values = np.array([[0.0, 0.0, 0.0]])
        kill = Disable().kills(values, None, None)
        assert not kill.any()

    def test_top_count_unions_per_step_bottoms(self):
        values = np.array(
            [
                [0.5, 0.1, 0.2, 0.8, 0.9],
                [0.9, 0.8, 0.7, 0.1, 0.2],
            ]
        )
        kill = TopCount(2).kills(values, None, None)
        np.testing.assert_array_equal(kill, [False, True, True, True, True])

    def test_top_count_breaks_ties_by_index(self):
        values = np.array([[0.2, 0.2, 0.2, 0.9]])
        kill = TopCount(2).kills(values, None, None)
        np.testing.assert_array_equal(kill, [True, True, False, False])

    def test_top_count_validation(self):
        with pytest.raises(ValueError):
            TopCount(0)

    def test_single_angular_boundary_is_strict(self):
        selected = dirs_at((0.0, 0.0))
        cands = dirs_at((4.9, 0.0), (5.1, 0.0), (5.0, 0.0), (170.0, 0.0))
        values = np.zeros((1, 4))
        kill = SingleAngular(5.0).kills(values, cands, selected)
        np.testing.assert_array_equal(kill, [True, False, False, False])

    def test_single_angular_any_past_view_counts(self):
        selected = dirs_at((0.0, 0.0), (90.0, 0.0))
        cands = dirs_at((3.0, 0.0), (88.0, 0.0), (45.0, 90.0))
        kill = SingleAngular(5.0).kills(np.zeros((1, 3)), cands, selected)
        np.testing.assert_array_equal(kill, [True, True, False])

    def test_single_angular_validation(self):
        with pytest.raises(ValueError):
            SingleAngular(0.0)

    def test_apply_filter_resurrects_when_all_die(self):
        values = np.array([[0.01, 0.02, 0.03]])
        alive, exhausted = apply_filter(SmallThreshold(0.1), values, None, None)
        assert alive.all()
        assert exhausted is True

    def test_apply_filter_normal_path(self):
        values = np.array([[0.01, 0.5, 0.6]])
        alive, exhausted = apply_filter(SmallThreshold(0.1), values, None, None)
        np.testing.assert_array_equal(alive, [False, True, True])
        assert exhausted is False


class TestAggregation:
    def test_product_all_multiplies_steps(self):
        values = np.array([[0.9, 0.2], [0.9, 0.95]])
        scores = aggregate_scores(ProductAll(), values, None)
        np.testing.assert_allclose(scores, [0.81, 0.19], rtol=1e-12)

    def test_product_matches_direct_product(self):
        rng = np.random.default_rng(0)
        values = rng.uniform(0.05, 1.0, (20, 64))
        scores = aggregate_scores(ProductAll(), values, None)
        np.testing.assert_allclose(scores, np.prod(values, axis=0), rtol=1e-9)

    def test_product_floors_zeros(self):
        scores = aggregate_scores(ProductAll(), np.array([[0.0]]), None)
        np.testing.assert_allclose(scores, [PRODUCT_FLOOR], rtol=1e-12)

    def test_product_survives_twenty_floored_steps(self):
        values = np.zeros((20, 2))
        values[:, 1] = 0.5
        scores = aggregate_scores(ProductAll(), values, None)
        assert scores[0] > 0.0  # no underflow to an exact zero
        assert scores[1] > scores[0]

    def test_last_only_copies_newest_row(self):
        values = np.array([[0.1, 0.9], [0.7, 0.3]])
        scores = aggregate_scores(LastOnly(), values, None)
        np.testing.assert_array_equal(scores, [0.7, 0.3])
        scores[0] = -1.0
        assert values[1, 0] == 0.7  # caller-owned copy

    def test_neighbor_diff_uses_mean_within_radius(self):
        cands = dirs_at((0.0, 0.0), (3.0, 0.0), (3.0, 180.0), (90.0, 0.0))
        last = np.array([0.8, 0.4, 0.6, 0.9])
        scores = aggregate_scores(NeighborDiff(5.0), np.array([last]), cands)
        # cand 0 has both 3-degree neighbors; cands 1 and 2 see only cand 0
        # (they sit 6 degrees apart from each other); cand 3 is isolated and
        # falls back to its nearest other candidate, cand 1 at 87 degrees
        np.testing.assert_allclose(
            scores, [0.8 - 0.5, 0.4 - 0.8, 0.6 - 0.8, 0.9 - 0.4], atol=1e-12
        )

    def test_neighbor_diff_single_candidate_scores_zero(self):
        scores = aggregate_scores(
            NeighborDiff(5.0), np.array([[0.7]]), dirs_at((0.0, 0.0))
        )
        np.testing.assert_array_equal(scores, [0.0])

    def test_neighbor_diff_only_newest_step_matters(self):
        cands = dirs_at((0.0, 0.0), (3.0, 0.0))
        a = aggregate_scores(
            NeighborDiff(5.0), np.array([[0.1, 0.2], [0.5, 0.9]]), cands
        )
        b = aggregate_scores(
            NeighborDiff(5.0), np.array([[0.9, 0.8], [0.5, 0.9]]), cands
        )
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_neighbor_diff_validation(self):
        with pytest.raises(ValueError):
            NeighborDiff(0.0)

    def test_aggregate_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            aggregate_scores(ProductAll(), np.zeros(5), None)
        with pytest.raises(ValueError):
            aggregate_scores(ProductAll(), np.zeros((0, 5)), None)


class TestSelectIndex:
    def test_argmax_over_alive_only(self):
        scores = np.array([0.9, 0.5, 0.8])
        alive = np.array([False, True, True])
        assert select_index(scores, alive) == 2

    def test_ties_resolve_to_lowest_index(self):
        scores = np.array([0.3, 0.7, 0.7, 0.7])
        alive = np.ones(4, dtype=bool)
        assert select_index(scores, alive) == 1

    def test_no_alive_rejected(self):
        with pytest.raises(ValueError):
            select_index(np.array([1.0]), np.array([False]))

    def test_matches_slow_reference_for_every_policy_pair(self):
        rng = np.random.default_rng(42)
        filters = [SmallThreshold(0.1), Disable(), TopCount(3), SingleAngular(20.0)]
        aggs = [ProductAll(), LastOnly(), NeighborDiff(15.0)]
        for trial in range(12):
            n = 10
            values = rng.uniform(0.0, 1.0, (3, n))
            cand_views = sample_candidates(n, seed=[trial, 0])
            cand_dirs = viewpoints_to_dirs(cand_views)
            sel_views = sample_candidates(2, seed=[trial, 1])
            sel_dirs = viewpoints_to_dirs(sel_views)
            for filt in filters:
                for agg in aggs:
                    alive, _ = apply_filter(filt, values, cand_dirs, sel_dirs)
                    scores = aggregate_scores(agg, values, cand_dirs)
                    got = select_index(scores, alive)
                    best, best_score = None, -np.inf
                    for j in range(n):
                        if not alive[j]:
                            continue
                        if scores[j] > best_score:
                            best, best_score = j, scores[j]
                    assert got == best, f"{filt} {agg} trial {trial}"


class TestPolicyTokens:
    @pytest.mark.parametrize(
        "policy",
        [
            SmallThreshold(0.1),
            SmallThreshold(0.25),
            Disable(),
            TopCount(32),
            TopCount(7),
            SingleAngular(5.0),
            SingleAngular(12.5),
        ],
    )
    def test_filter_round_trip(self, policy):
        assert parse_filter(filter_token(policy)) == policy

    @pytest.mark.parametrize(
        "policy", [ProductAll(), LastOnly(), NeighborDiff(5.0), NeighborDiff(8.25)]
    )
    def test_agg_round_trip(self, policy):
        assert parse_agg(agg_token(policy)) == policy

    def test_default_tokens(self):
        assert parse_filter("small") == SmallThreshold(0.1)
        assert parse_filter("top32") == TopCount(32)
        assert parse_filter("single") == SingleAngular(5.0)
        assert parse_agg("diff") == NeighborDiff(5.0)

    @pytest.mark.parametrize(
        "token",
        ["small:abc", "small:2.0", "disable:1", "top32:0", "nope", "single:-1"],
    )
    def test_bad_filter_tokens(self, token):
        with pytest.raises(ValueError):
            parse_filter(token)

    @pytest.mark.parametrize("token", ["product:2", "last:1", "diff:0", "nope"])
    def test_bad_agg_tokens(self, token):
        with pytest.raises(ValueError):
            parse_agg(token)


class TestRunEpisode:
    def test_budget_one_is_a_single_unscored_step(self):
        traj = run_episode(FakePredictor(), budget=1, candidate_count=16)
        assert len(traj.steps) == 1
        assert traj.steps[0].view == START_VIEW
        assert traj.steps[0].selection is None
        assert traj.complete is True

    def test_budget_counts_the_start_view(self):
        traj = run_episode(FakePredictor(), budget=5, candidate_count=16, seed=3)
        assert len(traj.steps) == 5
        assert traj.steps[0].view == START_VIEW
        assert all(s.selection is not None for s in traj.steps[:-1])
        assert traj.steps[-1].selection is None

    def test_deterministic_per_seed(self):
        a = run_episode(FakePredictor(), budget=4, candidate_count=32, seed=9)
        b = run_episode(FakePredictor(), budget=4, candidate_count=32, seed=9)
        assert trajectory_to_text(a) == trajectory_to_text(b)
        c = run_episode(FakePredictor(), budget=4, candidate_count=32, seed=10)
        assert trajectory_to_text(a) != trajectory_to_text(c)

    def test_first_choice_reproducible_from_parts(self):
        seed = 21
        traj = run_episode(
            FakePredictor(),
            budget=3,
            candidate_count=32,
            seed=seed,
            filter_policy=SmallThreshold(0.1),
            agg_policy=ProductAll(),
        )
        first = traj.steps[0]
        cands = sample_candidates(32, seed=[seed, 0], radius=START_VIEW.radius)
        cand_dirs = viewpoints_to_dirs(cands)
        umap = first.umap
        values = interpolate_on_sphere(umap.anchors_world, umap.values, cand_dirs)
        alive, _ = apply_filter(
            SmallThreshold(0.1),
            values[None, :],
            cand_dirs,
            viewpoints_to_dirs([START_VIEW]),
        )
        scores = aggregate_scores(ProductAll(), values[None, :], cand_dirs)
        chosen = select_index(scores, alive)
        assert first.selection.chosen_index == chosen
        assert traj.steps[1].view == cands[chosen]

    def test_predictor_failure_yields_partial_trajectory(self):
        traj = run_episode(FailAfter(2), budget=6, candidate_count=16, seed=1)
        assert traj.complete is False
        assert len(traj.steps) == 2
        assert all(s.selection is not None for s in traj.steps)

    def test_failure_on_first_step_rejected_by_serializer(self):
        traj = run_episode(FailAfter(0), budget=3, candidate_count=16)
        assert traj.complete is False
        assert len(traj.steps) == 0
        with pytest.raises(ValueError, match="no steps"):
            trajectory_to_text(traj)

    def test_image_predictor_requires_mesh(self):
        class NeedsImage(FakePredictor):
            needs_image = True

        with pytest.raises(ValueError, match="mesh"):
            run_episode(NeedsImage(), budget=2)

    def test_validation(self):
        with pytest.raises(ValueError):
            run_episode(FakePredictor(), budget=0)
        with pytest.raises(ValueError):
            run_episode(FakePredictor(), budget=2, candidate_count=0)

    def test_policies_change_the_path(self):
        a = run_episode(
            FakePredictor(), budget=4, candidate_count=64, seed=5,
            agg_policy=ProductAll(),
        )
        b = run_episode(
            FakePredictor(), budget=4, candidate_count=64, seed=5,
            agg_policy=NeighborDiff(30.0),
        )
        assert a.views != b.views

    def test_default_policy_tokens_recorded(self):
        traj = run_episode(FakePredictor(), budget=2, candidate_count=8)
        assert traj.filter_token == "small:0.1"
        assert traj.agg_token == "product"
        assert traj.candidate_count == 8
        assert traj.kind is UncertaintyKind.PSNR


class TestTrajectoryFiles:
    def roundtrip(self, traj):
        return trajectory_from_text(trajectory_to_text(traj))

    def assert_same(self, a, b):
        assert a.budget == b.budget
        assert a.seed == b.seed
        assert a.filter_token == b.filter_token
        assert a.agg_token == b.agg_token
        assert a.candidate_count == b.candidate_count
        assert a.complete == b.complete
        assert len(a.steps) == len(b.steps)
        for sa, sb in zip(a.steps, b.steps):
            assert sa.view == sb.view
            assert sa.selection == sb.selection
            np.testing.assert_array_equal(sa.umap.values, sb.umap.values)
            assert sa.umap.step_index == sb.umap.step_index
            assert sa.umap.kind is sb.umap.kind

    def test_round_trip_complete(self):
        traj = run_episode(FakePredictor(), budget=4, candidate_count=16, seed=2)
        self.assert_same(traj, self.roundtrip(traj))

    def test_round_trip_partial(self):
        traj = run_episode(FailAfter(2), budget=6, candidate_count=16, seed=2)
        back = self.roundtrip(traj)
        assert back.complete is False
        self.assert_same(traj, back)

    def test_text_is_stable(self):
        traj = run_episode(FakePredictor(), budget=3, candidate_count=16, seed=4)
        text = trajectory_to_text(traj)
        assert text == trajectory_to_text(self.roundtrip(traj))

    def test_file_round_trip(self, tmp_path):
        traj = run_episode(FakePredictor(), budget=3, candidate_count=16, seed=6)
        save_trajectory(traj, tmp_path / "t.txt")
        self.assert_same(traj, load_trajectory(tmp_path / "t.txt"))

    def test_bad_magic_rejected(self):
        with pytest.raises(FormatError):
            trajectory_from_text("NOTTRAJ 1\n")

    def test_bad_version_rejected(self):
        with pytest.raises(VersionError):
            trajectory_from_text("PUNTRAJ 9\n")

    def test_truncated_file_rejected(self):
        traj = run_episode(FakePredictor(), budget=3, candidate_count=16, seed=6)
        text = trajectory_to_text(traj)
        lines = text.splitlines()
        with pytest.raises(FormatError):
            trajectory_from_text("\n".join(lines[:-2]) + "\n")


class TestBaselines:
    def test_random_is_reproducible_sampling(self):
        views = baseline_select("random", budget=7, seed=3)
        assert views == sample_candidates(7, seed=[3, 0])
        assert len(views) == 7
        assert views != baseline_select("random", budget=7, seed=4)

    def test_random_radius_propagates(self):
        views = baseline_select("random", budget=3, seed=0, radius=4.0)
        assert all(v.radius == 4.0 for v in views)

    def test_fps_second_view_is_the_antipode(self):
        views = baseline_select("fps", budget=2, seed=0)
        assert views[0] == Viewpoint(0.0, 0.0, 2.73)
        ang = angular_distance(views[0].unit_dir(), views[1].unit_dir())
        assert ang == pytest.approx(math.pi, abs=1e-9)

    def test_fps_budget_six_spreads_views(self):
        views = baseline_select("fps", budget=6)
        dirs = viewpoints_to_dirs(views)
        ang = angular_distances(dirs, dirs)
        np.fill_diagonal(ang, np.inf)
        assert ang.min() >= math.radians(60.0) - 1e-9

    def test_fps_deterministic(self):
        assert baseline_select("fps", budget=5) == baseline_select("fps", budget=5)

    def test_fps_custom_start(self):
        start = Viewpoint(90.0, 45.0, 2.73)
        views = baseline_select("fps", budget=2, start_view=start)
        assert views[0] == start
        ang = angular_distance(views[0].unit_dir(), views[1].unit_dir())
        assert ang == pytest.approx(math.pi, abs=1e-9)

    def test_unknown_baseline_rejected(self):
        with pytest.raises(ValueError):
            baseline_select("greedy", budget=2)
        with pytest.raises(ValueError):
            baseline_select("random", budget=0)

    def test_constants(self):
        assert CANDIDATE_COUNT == 512
        assert START_VIEW == Viewpoint(0.0, 0.0, 2.73)
