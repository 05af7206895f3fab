"""Uncertainty predictors: where the per-view maps come from.

Four interchangeable sources, all returning a UMap anchored to the
queried view:

* SimulatorOracle  - runs the full render/carve/compare pipeline.
* DatasetOracle    - looks maps up in a generated dataset.
* KnnRegressor     - distance-weighted nearest neighbors on image features.
* ExternalPredictor- speaks the line protocol to a spawned peer process.

The wire protocol (newline-delimited UTF-8 over stdin/stdout):

    client: HELLO PUN 1
    peer:   OK PUN 1
    client: PREDICT <elev_deg> <azim_deg> <radius> <absolute-image-path>
    peer:   UMAP <v1> ... <v48>          (decimals, >= 9 significant digits)
        or  ERR <message>
"""

from __future__ import annotations

import math
import queue
import shlex
import subprocess
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NotFoundError, PeerError, ProtocolError
from .geometry import (
    DEFAULT_N_SIDE,
    Viewpoint,
    angular_distance,
    anchors_for_view,
    viewpoints_to_dirs,
)
from .imageio import Image, read_ppm, write_ppm
from .meshes import TriMesh
from .metrics import UncertaintyKind
from .simulator import SimConfig, make_umap
from .textio import LineReader, fmt, parse_float, parse_int
from .umaps import DatasetManifest, UMap, read_umap

PROTOCOL_NAME = "PUN"
PROTOCOL_VERSION = 1
HELLO_LINE = f"HELLO {PROTOCOL_NAME} {PROTOCOL_VERSION}"
OK_LINE = f"OK {PROTOCOL_NAME} {PROTOCOL_VERSION}"
DEFAULT_TIMEOUT_S = 10.0

EXACT_MATCH_TOL_RAD = 1e-6


class SimulatorOracle:
    """Ground-truth predictor: simulates the map from the mesh itself."""

    needs_image = False

    def __init__(
        self,
        mesh: TriMesh,
        kind: UncertaintyKind = UncertaintyKind.PSNR,
        sim: SimConfig = SimConfig(),
    ):
        self.mesh = mesh
        self.kind = kind
        self.sim = sim

    def predict(self, view: Viewpoint, image: Image | None = None,
                step_index: int = 0) -> UMap:
        return make_umap(self.mesh, view, self.kind, self.sim, step_index)

    def close(self):
        pass


class DatasetOracle:
    """Serves stored maps for one dataset instance.

    By default only near-exact view matches (within 1e-6 rad) resolve;
    with nearest_within_rad set, a miss inside that radius returns the
    nearest stored map re-anchored to the queried view (map values are
    view-relative, so re-anchoring preserves their meaning).
    """

    needs_image = False

    def __init__(
        self,
        manifest: DatasetManifest,
        root,
        instance_id: str | None = None,
        kind: UncertaintyKind = UncertaintyKind.PSNR,
        nearest_within_rad: float | None = None,
    ):
        self.kind = kind
        self.root = Path(root)
        self.nearest_within_rad = nearest_within_rad
        if instance_id is None:
            if len(manifest.instances) != 1:
                raise ValueError(
                    "manifest holds multiple instances; pass instance_id"
                )
            inst = manifest.instances[0]
        else:
            matches = [
                i for i in manifest.instances if i.instance_id == instance_id
            ]
            if not matches:
                raise NotFoundError(
                    f"instance {instance_id!r} not in manifest "
                    f"(has {[i.instance_id for i in manifest.instances]})"
                )
            inst = matches[0]
        self.instance = inst
        self._records = []
        for rec in inst.views:
            path = rec.umap_paths.get(kind.value)
            if path is not None:
                self._records.append((rec.view, self.root / path))
        if not self._records:
            raise NotFoundError(
                f"instance {inst.instance_id!r} has no {kind.value} maps"
            )
        self._dirs = viewpoints_to_dirs([v for v, _ in self._records])

    def predict(self, view: Viewpoint, image: Image | None = None,
                step_index: int = 0) -> UMap:
        d = view.unit_dir()
        cos = self._dirs @ d
        best = int(np.argmax(cos))
        ang = angular_distance(self._dirs[best], d)
        if ang <= EXACT_MATCH_TOL_RAD:
            return read_umap(self._records[best][1]).with_step(step_index)
        if self.nearest_within_rad is not None and ang <= self.nearest_within_rad:
            stored = read_umap(self._records[best][1])
            return UMap(
                kind=stored.kind,
                source_view=view,
                step_index=step_index,
                anchors_world=anchors_for_view(view),
                values=stored.values,
            )
        raise NotFoundError(
            f"no stored map within tolerance of elev={view.elevation_deg:.6f} "
            f"azim={view.azimuth_deg:.6f} (nearest is {math.degrees(ang):.3f} deg away)"
        )

    def close(self):
        pass


# ---------------------------------------------------------------------------
# k-nearest-neighbor regressor

FEATURE_SIDE = 16


def image_features(image: Image) -> np.ndarray:
    """Mean-centered 16x16 grayscale thumbnail, flattened to 256 floats."""
    lum = image.luminance()
    h, w = lum.shape
    if h < FEATURE_SIDE or w < FEATURE_SIDE:
        raise ValueError(
            f"image must be at least {FEATURE_SIDE}x{FEATURE_SIDE}, got {h}x{w}"
        )
    ys = (np.arange(FEATURE_SIDE + 1) * h) // FEATURE_SIDE
    xs = (np.arange(FEATURE_SIDE + 1) * w) // FEATURE_SIDE
    rows = np.add.reduceat(lum, ys[:-1], axis=0)
    cells = np.add.reduceat(rows, xs[:-1], axis=1)
    counts = np.outer(np.diff(ys), np.diff(xs)).astype(np.float64)
    pooled = cells / counts
    flat = pooled.reshape(-1)
    return flat - flat.mean()


@dataclass
class KnnModel:
    """Training rows for distance-weighted k-nearest-neighbor regression."""

    features: np.ndarray   # (n, 256)
    values: np.ndarray     # (n, n_anchors)
    views: list[Viewpoint]
    kind: UncertaintyKind
    n_side: int = DEFAULT_N_SIDE
    k: int = 3

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]


KNN_MAGIC = "PUNKNN"
KNN_VERSION = 1
_KNN_EPS = 1e-8


def knn_fit(
    manifest: DatasetManifest,
    root,
    kind: UncertaintyKind = UncertaintyKind.PSNR,
    k: int = 3,
) -> KnnModel:
    """Build a model from every view of every instance with a map of kind."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    root = Path(root)
    feats, vals, views = [], [], []
    for inst in manifest.instances:
        for rec in inst.views:
            umap_rel = rec.umap_paths.get(kind.value)
            if umap_rel is None:
                continue
            feats.append(image_features(read_ppm(root / rec.image_path)))
            vals.append(read_umap(root / umap_rel).values)
            views.append(rec.view)
    if not feats:
        raise NotFoundError(f"dataset has no {kind.value} maps to fit on")
    return KnnModel(
        features=np.array(feats),
        values=np.array(vals),
        views=views,
        kind=kind,
        n_side=manifest.n_side,
        k=k,
    )


def knn_predict(model: KnnModel, feature: np.ndarray) -> np.ndarray:
    """Inverse-distance weighted mean of the k nearest training rows.

    Neighbors are the k smallest Euclidean distances; equal distances
    resolve by row index (stable sort). Weights are 1 / (d + 1e-8),
    normalized, so an exact feature match dominates.
    """
    feature = np.asarray(feature, dtype=np.float64)
    d = np.linalg.norm(model.features - feature[None, :], axis=1)
    k = min(model.k, model.n_rows)
    order = np.argsort(d, kind="stable")[:k]
    w = 1.0 / (d[order] + _KNN_EPS)
    w = w / w.sum()
    return w @ model.values[order]


class KnnRegressor:
    """Predictor wrapper: image -> features -> weighted neighbor mean."""

    needs_image = True

    def __init__(self, model: KnnModel):
        self.model = model
        self.kind = model.kind

    def predict(self, view: Viewpoint, image: Image | None = None,
                step_index: int = 0) -> UMap:
        if image is None:
            raise ValueError("the k-NN predictor needs the current image")
        values = knn_predict(self.model, image_features(image))
        return UMap(
            kind=self.kind,
            source_view=view,
            step_index=step_index,
            anchors_world=anchors_for_view(view, self.model.n_side),
            values=np.clip(values, 0.0, 1.0),
        )

    def close(self):
        pass


def save_knn_model(model: KnnModel, path) -> None:
    lines = [
        f"{KNN_MAGIC} {KNN_VERSION} {model.kind.value} "
        f"{model.n_side} {model.k} {model.n_rows}"
    ]
    for i in range(model.n_rows):
        v = model.views[i]
        lines.append(f"view {fmt(v.elevation_deg)} {fmt(v.azimuth_deg)} {fmt(v.radius)}")
        lines.append("feat " + " ".join(fmt(x) for x in model.features[i]))
        lines.append("vals " + " ".join(fmt(x) for x in model.values[i]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_knn_model(path) -> KnnModel:
    from .errors import FormatError, VersionError

    text = Path(path).read_text(encoding="utf-8")
    reader = LineReader(text, str(path))
    header = reader.expect_line("header").split()
    if len(header) != 6 or header[0] != KNN_MAGIC:
        raise FormatError(f"{path}: not a k-NN model file")
    version = parse_int(header[1], reader.where())
    if version != KNN_VERSION:
        raise VersionError(f"{path}: unsupported model version {version}")
    kind = UncertaintyKind.from_token(header[2])
    n_side = parse_int(header[3], reader.where())
    k = parse_int(header[4], reader.where())
    n_rows = parse_int(header[5], reader.where())
    feats, vals, views = [], [], []
    for _ in range(n_rows):
        vline = reader.expect_line("view row").split()
        if len(vline) != 4 or vline[0] != "view":
            raise FormatError(f"{reader.where()}: expected a view row")
        views.append(
            Viewpoint(*(parse_float(t, reader.where()) for t in vline[1:]))
        )
        fline = reader.expect_line("feature row").split()
        if fline[0] != "feat":
            raise FormatError(f"{reader.where()}: expected a feature row")
        feats.append([parse_float(t, reader.where()) for t in fline[1:]])
        uline = reader.expect_line("value row").split()
        if uline[0] != "vals":
            raise FormatError(f"{reader.where()}: expected a value row")
        vals.append([parse_float(t, reader.where()) for t in uline[1:]])
    return KnnModel(
        features=np.array(feats, dtype=np.float64),
        values=np.array(vals, dtype=np.float64),
        views=views,
        kind=kind,
        n_side=n_side,
        k=k,
    )


# ---------------------------------------------------------------------------
# External peer over the line protocol


class _PeerProcess:
    """Spawned subprocess with a timeout-capable line reader."""

    def __init__(self, command, timeout_s: float):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not argv:
            raise ValueError("empty peer command")
        self.timeout_s = timeout_s
        try:
            self.proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise PeerError(f"cannot start peer {argv[0]!r}: {exc}") from None
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self):
        try:
            for line in self.proc.stdout:
                self._lines.put(line.rstrip("\n"))
        except ValueError:
            pass  # stream closed mid-read
        self._lines.put(None)  # EOF marker

    def send(self, line: str) -> None:
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        except (OSError, ValueError) as exc:
            raise PeerError(f"peer pipe closed while sending: {exc}") from None

    def recv(self) -> str:
        try:
            line = self._lines.get(timeout=self.timeout_s)
        except queue.Empty:
            raise PeerError(
                f"peer did not answer within {self.timeout_s:.1f} s"
            ) from None
        if line is None:
            raise PeerError("peer closed its output stream")
        return line

    def close(self):
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()


def _parse_umap_line(line: str, n_expected: int) -> np.ndarray:
    parts = line.split()
    if not parts:
        raise ProtocolError("peer sent an empty line")
    if parts[0] == "ERR":
        raise PeerError(f"peer error: {line[4:].strip() or 'unspecified'}")
    if parts[0] != "UMAP":
        raise ProtocolError("unexpected response tag", line)
    if len(parts) - 1 != n_expected:
        raise ProtocolError(
            f"expected {n_expected} values, got {len(parts) - 1}", line
        )
    try:
        values = np.array([float(t) for t in parts[1:]], dtype=np.float64)
    except ValueError:
        raise ProtocolError("non-numeric value in response", line) from None
    if not np.all(np.isfinite(values)) or values.min() < 0.0 or values.max() > 1.0:
        raise ProtocolError("values out of [0, 1]", line)
    return values


class ExternalPredictor:
    """Client for a peer process speaking the PREDICT line protocol."""

    needs_image = True

    def __init__(
        self,
        command,
        kind: UncertaintyKind = UncertaintyKind.PSNR,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        n_side: int = DEFAULT_N_SIDE,
        scratch_dir=None,
    ):
        self.kind = kind
        self.n_side = n_side
        self._n_anchors = 12 * n_side * n_side
        self._scratch = Path(scratch_dir) if scratch_dir else None
        self._counter = 0
        self._peer = _PeerProcess(command, timeout_s)
        self._handshake()

    def _handshake(self):
        self._peer.send(HELLO_LINE)
        answer = self._peer.recv()
        if answer != OK_LINE:
            self._peer.close()
            raise ProtocolError("bad handshake answer", answer)

    def _image_to_path(self, image: Image) -> Path:
        if self._scratch is None:
            import tempfile

            self._scratch = Path(tempfile.mkdtemp(prefix="punavs_peer_"))
        self._scratch.mkdir(parents=True, exist_ok=True)
        path = self._scratch / f"query_{self._counter:05d}.ppm"
        self._counter += 1
        write_ppm(image, path)
        return path

    def predict_path(self, view: Viewpoint, image_path,
                     step_index: int = 0) -> UMap:
        path = Path(image_path).resolve()
        self._peer.send(
            f"PREDICT {fmt(view.elevation_deg)} {fmt(view.azimuth_deg)} "
            f"{fmt(view.radius)} {path}"
        )
        values = _parse_umap_line(self._peer.recv(), self._n_anchors)
        return UMap(
            kind=self.kind,
            source_view=view,
            step_index=step_index,
            anchors_world=anchors_for_view(view, self.n_side),
            values=values,
        )

    def predict(self, view: Viewpoint, image: Image | None = None,
                step_index: int = 0) -> UMap:
        if image is None:
            raise ValueError("the external predictor needs the current image")
        return self.predict_path(view, self._image_to_path(image), step_index)

    def close(self):
        self._peer.close()


def external_predict(
    command,
    view: Viewpoint,
    image_path,
    kind: UncertaintyKind = UncertaintyKind.PSNR,
    timeout_s: float = DEFAULT_TIMEOUT_S,
) -> UMap:
    """One-shot convenience: spawn, handshake, predict once, shut down."""
    peer = ExternalPredictor(command, kind=kind, timeout_s=timeout_s)
    try:
        return peer.predict_path(view, image_path)
    finally:
        peer.close()
