"""Predictor implementations: oracles, k-NN regression, external peers."""

import math
import sys

import numpy as np
import pytest

from punavs.errors import NotFoundError, PeerError, ProtocolError
from punavs.geometry import Viewpoint, anchors_for_view
from punavs.imageio import Image, write_ppm
from punavs.meshes import make_shape, save_obj
from punavs.metrics import UncertaintyKind
from punavs.predictor import (
    DEFAULT_TIMEOUT_S,
    HELLO_LINE,
    OK_LINE,
    DatasetOracle,
    ExternalPredictor,
    KnnModel,
    KnnRegressor,
    SimulatorOracle,
    external_predict,
    image_features,
    knn_fit,
    knn_predict,
    load_knn_model,
    save_knn_model,
)
from punavs.simulator import RenderConfig, SimConfig, gen_dataset, make_umap, render_view
from punavs.umaps import load_manifest, read_umap

SIM = SimConfig(render=RenderConfig(resolution=32), grid_dims=24)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    """Two-instance dataset: 6 views each, psnr maps only."""
    root = tmp_path_factory.mktemp("dataset")
    mesh_dir = root / "src_meshes"
    mesh_dir.mkdir()
    save_obj(make_shape("sphere"), mesh_dir / "sphere.obj")
    save_obj(make_shape("box_notch"), mesh_dir / "box_notch.obj")
    out = root / "data"
    manifest = gen_dataset(
        sorted(mesh_dir.glob("*.obj")),
        out,
        views_per_instance=6,
        resolution=32,
        grid_dims=24,
    )
    return manifest, out


class TestSimulatorOracle:
    def test_matches_direct_simulation(self):
        mesh = make_shape("sphere")
        oracle = SimulatorOracle(mesh, sim=SIM)
        view = Viewpoint(60.0, 120.0, 2.73)
        got = oracle.predict(view, step_index=4)
        want = make_umap(mesh, view, UncertaintyKind.PSNR, SIM, step_index=4)
        np.testing.assert_array_equal(got.values, want.values)
        assert got.source_view == want.source_view
        assert got.step_index == 4
        assert got.kind is UncertaintyKind.PSNR

    def test_declares_no_image_needed(self):
        oracle = SimulatorOracle(make_shape("sphere"), sim=SIM)
        assert oracle.needs_image is False
        oracle.close()
        oracle.close()  # idempotent


def instance_named(manifest, instance_id):
    return next(i for i in manifest.instances if i.instance_id == instance_id)


class TestDatasetOracle:
    def test_exact_query_returns_stored_map(self, dataset):
        manifest, root = dataset
        oracle = DatasetOracle(manifest, root, instance_id="sphere")
        rec = instance_named(manifest, "sphere").views[2]
        got = oracle.predict(rec.view, step_index=7)
        stored = read_umap(root / rec.umap_paths["psnr"])
        np.testing.assert_array_equal(got.values, stored.values)
        np.testing.assert_array_equal(got.anchors_world, stored.anchors_world)
        assert got.step_index == 7

    def test_reload_from_disk_behaves_identically(self, dataset):
        manifest, root = dataset
        reloaded = load_manifest(root / "manifest.txt")
        rec = instance_named(reloaded, "box_notch").views[0]
        a = DatasetOracle(manifest, root, instance_id="box_notch").predict(rec.view)
        b = DatasetOracle(reloaded, root, instance_id="box_notch").predict(rec.view)
        np.testing.assert_array_equal(a.values, b.values)

    def test_multi_instance_needs_explicit_id(self, dataset):
        manifest, root = dataset
        with pytest.raises(ValueError, match="instance_id"):
            DatasetOracle(manifest, root)

    def test_unknown_instance_rejected(self, dataset):
        manifest, root = dataset
        with pytest.raises(NotFoundError, match="nosuch"):
            DatasetOracle(manifest, root, instance_id="nosuch")

    def test_missing_kind_rejected(self, dataset):
        manifest, root = dataset
        with pytest.raises(NotFoundError, match="ssim"):
            DatasetOracle(
                manifest, root, instance_id="sphere", kind=UncertaintyKind.SSIM
            )

    def test_off_grid_query_misses_by_default(self, dataset):
        manifest, root = dataset
        oracle = DatasetOracle(manifest, root, instance_id="sphere")
        rec = instance_named(manifest, "sphere").views[0]
        off = Viewpoint(
            rec.view.elevation_deg + 2.0, rec.view.azimuth_deg, rec.view.radius
        )
        with pytest.raises(NotFoundError):
            oracle.predict(off)

    def test_nearest_mode_reanchors_stored_values(self, dataset):
        manifest, root = dataset
        oracle = DatasetOracle(
            manifest,
            root,
            instance_id="sphere",
            nearest_within_rad=math.radians(10.0),
        )
        rec = instance_named(manifest, "sphere").views[3]
        off = Viewpoint(
            rec.view.elevation_deg + 2.0, rec.view.azimuth_deg, rec.view.radius
        )
        got = oracle.predict(off, step_index=1)
        stored = read_umap(root / rec.umap_paths["psnr"])
        np.testing.assert_array_equal(got.values, stored.values)
        np.testing.assert_allclose(
            got.anchors_world, anchors_for_view(off), atol=1e-12
        )
        assert got.source_view == off

    def test_nearest_mode_still_misses_outside_radius(self, dataset):
        manifest, root = dataset
        oracle = DatasetOracle(
            manifest,
            root,
            instance_id="sphere",
            nearest_within_rad=math.radians(0.5),
        )
        rec = instance_named(manifest, "sphere").views[0]
        off = Viewpoint(
            rec.view.elevation_deg + 2.0, rec.view.azimuth_deg, rec.view.radius
        )
        with pytest.raises(NotFoundError):
            oracle.predict(off)


class TestImageFeatures:
    def test_pooling_matches_block_means(self):
        rng = np.random.default_rng(0)
        px = rng.uniform(0, 1, (32, 32, 1))
        feats = image_features(Image(px))
        blocks = px[:, :, 0].reshape(16, 2, 16, 2).mean(axis=(1, 3)).reshape(-1)
        np.testing.assert_allclose(feats, blocks - blocks.mean(), atol=1e-12)

    def test_uneven_sizes_pool_over_index_ranges(self):
        rng = np.random.default_rng(1)
        px = rng.uniform(0, 1, (33, 19, 1))
        feats = image_features(Image(px))
        ys = (np.arange(17) * 33) // 16
        xs = (np.arange(17) * 19) // 16
        want = np.empty((16, 16))
        for i in range(16):
            for j in range(16):
                want[i, j] = px[ys[i]:ys[i + 1], xs[j]:xs[j + 1], 0].mean()
        want = want.reshape(-1)
        np.testing.assert_allclose(feats, want - want.mean(), atol=1e-12)

    def test_mean_centered(self):
        rng = np.random.default_rng(2)
        feats = image_features(Image(rng.uniform(0, 1, (48, 48, 3))))
        assert feats.shape == (256,)
        assert abs(feats.mean()) < 1e-12

    def test_small_images_rejected(self):
        with pytest.raises(ValueError):
            image_features(Image(np.zeros((8, 8, 1))))


def synthetic_model(k=3):
    rng = np.random.default_rng(5)
    features = rng.normal(0, 1, (6, 256))
    features -= features.mean(axis=1, keepdims=True)
    values = rng.uniform(0.1, 0.9, (6, 48))
    views = [Viewpoint(30.0 + 10 * i, 20.0 * i, 2.73) for i in range(6)]
    return KnnModel(
        features=features,
        values=values,
        views=views,
        kind=UncertaintyKind.PSNR,
        k=k,
    )


class TestKnn:
    def test_fit_collects_every_view(self, dataset):
        manifest, root = dataset
        model = knn_fit(manifest, root)
        assert model.n_rows == 12
        assert model.features.shape == (12, 256)
        assert model.values.shape == (12, 48)
        assert model.n_side == manifest.n_side

    def test_fit_missing_kind_rejected(self, dataset):
        manifest, root = dataset
        with pytest.raises(NotFoundError):
            knn_fit(manifest, root, kind=UncertaintyKind.MSE)

    def test_exact_match_dominates(self):
        model = synthetic_model(k=3)
        pred = knn_predict(model, model.features[2])
        np.testing.assert_allclose(pred, model.values[2], atol=1e-5)

    def test_k1_self_query_is_exact(self):
        model = synthetic_model(k=1)
        pred = knn_predict(model, model.features[4])
        np.testing.assert_allclose(pred, model.values[4], rtol=1e-12)

    def test_equidistant_neighbors_average_exactly(self):
        features = np.zeros((3, 256))
        features[0, 0] = 1.0
        features[1, 1] = 1.0
        features[2, 2] = 1.0
        values = np.array([[0.2] * 48, [0.4] * 48, [0.9] * 48])
        model = KnnModel(
            features=features,
            values=values,
            views=[Viewpoint(90.0, 0.0, 2.73)] * 3,
            kind=UncertaintyKind.PSNR,
            k=3,
        )
        pred = knn_predict(model, np.zeros(256))
        np.testing.assert_allclose(pred, values.mean(axis=0), rtol=1e-12)

    def test_prediction_stays_in_training_hull(self):
        model = synthetic_model(k=4)
        rng = np.random.default_rng(9)
        for _ in range(10):
            pred = knn_predict(model, rng.normal(0, 1, 256))
            assert np.all(pred >= model.values.min(axis=0) - 1e-12)
            assert np.all(pred <= model.values.max(axis=0) + 1e-12)

    def test_save_load_round_trip(self, tmp_path):
        model = synthetic_model(k=2)
        save_knn_model(model, tmp_path / "m.knn")
        back = load_knn_model(tmp_path / "m.knn")
        np.testing.assert_array_equal(back.features, model.features)
        np.testing.assert_array_equal(back.values, model.values)
        assert back.views == model.views
        assert back.kind is model.kind
        assert back.n_side == model.n_side
        assert back.k == model.k

    def test_load_rejects_other_files(self, tmp_path):
        from punavs.errors import FormatError, VersionError

        bad = tmp_path / "bad.knn"
        bad.write_text("NOTKNN 1 psnr 2 3 0\n")
        with pytest.raises(FormatError):
            load_knn_model(bad)
        bad.write_text("PUNKNN 99 psnr 2 3 0\n")
        with pytest.raises(VersionError):
            load_knn_model(bad)

    def test_regressor_wraps_model(self, dataset):
        manifest, root = dataset
        model = knn_fit(manifest, root, k=3)
        reg = KnnRegressor(model)
        assert reg.needs_image is True
        view = Viewpoint(45.0, 10.0, 2.73)
        img = render_view(make_shape("sphere"), view, SIM.render)
        with pytest.raises(ValueError):
            reg.predict(view)
        got = reg.predict(view, image=img, step_index=2)
        assert got.step_index == 2
        assert got.values.min() >= 0.0 and got.values.max() <= 1.0
        np.testing.assert_allclose(got.anchors_world, anchors_for_view(view), atol=1e-12)
        again = reg.predict(view, image=img, step_index=2)
        np.testing.assert_array_equal(got.values, again.values)


# ---------------------------------------------------------------------------
# External peers, driven by small scripted processes


PEER_COMMON = """\
import sys
from pathlib import Path

def serve(reply):
    hello = sys.stdin.readline()
    if hello.strip() != "HELLO PUN 1":
        print("ERR bad hello", flush=True)
        return
    print("OK PUN 1", flush=True)
    for line in sys.stdin:
        parts = line.split()
        if len(parts) != 5 or parts[0] != "PREDICT":
            print("ERR malformed request", flush=True)
            continue
        reply(parts)
"""

ECHO_BODY = """\
def reply(parts):
    if not Path(parts[4]).is_file():
        print("ERR missing image " + parts[4], flush=True)
        return
    print("UMAP " + " ".join(f"{i / 128:.17g}" for i in range(48)), flush=True)

serve(reply)
"""


def write_peer(tmp_path, name, body):
    script = tmp_path / name
    script.write_text(PEER_COMMON + body)
    return [sys.executable, str(script)]


def tiny_image():
    rng = np.random.default_rng(3)
    return Image(rng.uniform(0, 1, (16, 16, 3)))


class TestExternalPredictor:
    def test_round_trip_constant_peer(self, tmp_path):
        cmd = write_peer(tmp_path, "echo.py", ECHO_BODY)
        peer = ExternalPredictor(cmd, scratch_dir=tmp_path / "scratch")
        try:
            view = Viewpoint(30.0, 200.0, 2.73)
            got = peer.predict(view, image=tiny_image(), step_index=3)
            np.testing.assert_array_equal(
                got.values, np.arange(48) / 128.0
            )
            assert got.step_index == 3
            np.testing.assert_allclose(
                got.anchors_world, anchors_for_view(view), atol=1e-12
            )
            assert (tmp_path / "scratch" / "query_00000.ppm").is_file()
            peer.predict(view, image=tiny_image())
            assert (tmp_path / "scratch" / "query_00001.ppm").is_file()
        finally:
            peer.close()

    def test_relative_paths_resolve_before_sending(self, tmp_path, monkeypatch):
        cmd = write_peer(tmp_path, "echo.py", ECHO_BODY)
        peer = ExternalPredictor(cmd)
        try:
            img_dir = tmp_path / "imgs"
            img_dir.mkdir()
            write_ppm(tiny_image(), img_dir / "q.ppm")
            monkeypatch.chdir(img_dir)
            got = peer.predict_path(Viewpoint(10.0, 0.0, 2.73), "q.ppm")
            assert got.values.shape == (48,)
        finally:
            peer.close()

    def test_one_shot_helper(self, tmp_path):
        cmd = write_peer(tmp_path, "echo.py", ECHO_BODY)
        write_ppm(tiny_image(), tmp_path / "q.ppm")
        got = external_predict(cmd, Viewpoint(20.0, 45.0, 2.73), tmp_path / "q.ppm")
        np.testing.assert_array_equal(got.values, np.arange(48) / 128.0)

    def test_err_reply_raises_peer_error(self, tmp_path):
        cmd = write_peer(tmp_path, "echo.py", ECHO_BODY)
        peer = ExternalPredictor(cmd)
        try:
            with pytest.raises(PeerError, match="missing image"):
                peer.predict_path(
                    Viewpoint(10.0, 0.0, 2.73), tmp_path / "nosuch.ppm"
                )
        finally:
            peer.close()

    def test_wrong_value_count_is_protocol_error(self, tmp_path):
        body = """\
def reply(parts):
    print("UMAP " + " ".join("0.5" for _ in range(47)), flush=True)

serve(reply)
"""
        cmd = write_peer(tmp_path, "short.py", body)
        peer = ExternalPredictor(cmd)
        try:
            write_ppm(tiny_image(), tmp_path / "q.ppm")
            with pytest.raises(ProtocolError, match="48"):
                peer.predict_path(Viewpoint(0.0, 0.0, 2.73), tmp_path / "q.ppm")
        finally:
            peer.close()

    def test_out_of_range_values_rejected(self, tmp_path):
        body = """\
def reply(parts):
    print("UMAP " + " ".join("1.5" for _ in range(48)), flush=True)

serve(reply)
"""
        cmd = write_peer(tmp_path, "range.py", body)
        peer = ExternalPredictor(cmd)
        try:
            write_ppm(tiny_image(), tmp_path / "q.ppm")
            with pytest.raises(ProtocolError, match=r"\[0, 1\]"):
                peer.predict_path(Viewpoint(0.0, 0.0, 2.73), tmp_path / "q.ppm")
        finally:
            peer.close()

    def test_slow_peer_times_out(self, tmp_path):
        body = """\
import time

def reply(parts):
    time.sleep(30)

serve(reply)
"""
        cmd = write_peer(tmp_path, "slow.py", body)
        peer = ExternalPredictor(cmd, timeout_s=0.4)
        try:
            write_ppm(tiny_image(), tmp_path / "q.ppm")
            with pytest.raises(PeerError, match="did not answer"):
                peer.predict_path(Viewpoint(0.0, 0.0, 2.73), tmp_path / "q.ppm")
        finally:
            peer.close()

    def test_bad_handshake_rejected(self, tmp_path):
        script = tmp_path / "indifferent.py"
        script.write_text(
            "import sys\nsys.stdin.readline()\nprint('OK WHAT 9', flush=True)\n"
        )
        with pytest.raises(ProtocolError, match="handshake"):
            ExternalPredictor([sys.executable, str(script)])

    def test_dying_peer_reported(self, tmp_path):
        script = tmp_path / "quitter.py"
        script.write_text(
            "import sys\nsys.stdin.readline()\nprint('OK PUN 1', flush=True)\n"
        )
        peer = ExternalPredictor([sys.executable, str(script)], timeout_s=2.0)
        try:
            write_ppm(tiny_image(), tmp_path / "q.ppm")
            with pytest.raises(PeerError):
                peer.predict_path(Viewpoint(0.0, 0.0, 2.73), tmp_path / "q.ppm")
        finally:
            peer.close()

    def test_unstartable_command_is_peer_error(self):
        with pytest.raises(PeerError, match="cannot start"):
            ExternalPredictor(["/nonexistent/peer-binary"])

    def test_empty_command_rejected(self):
        with pytest.raises(ValueError):
            ExternalPredictor([])

    def test_protocol_constants(self):
        assert HELLO_LINE == "HELLO PUN 1"
        assert OK_LINE == "OK PUN 1"
        assert DEFAULT_TIMEOUT_S == 10.0
