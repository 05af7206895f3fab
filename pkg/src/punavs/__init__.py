"""Uncertainty-guided active view selection for 3D reconstruction.

The package picks camera viewpoints one at a time: each observed view
yields a 48-anchor uncertainty map, maps are interpolated onto freshly
sampled candidate viewpoints, redundant candidates are filtered, and the
candidate with the highest accumulated uncertainty wins. A deterministic
triangle renderer and a visual-hull reconstructor stand in for the
neural pipeline so everything runs from a seed, byte-for-byte.
"""

from .errors import (
    EmptyHullError,
    FormatError,
    NotFoundError,
    PeerError,
    ProtocolError,
    VersionError,
)
from .geometry import (
    DEFAULT_N_SIDE,
    DEFAULT_RADIUS,
    Viewpoint,
    anchors_for_view,
    angular_distance,
    canonical_anchors,
    healpix_anchor_dirs,
    sample_candidates,
    view_frame,
    viewpoint_from_dir,
)
from .imageio import Image, image_from_array, read_ppm, write_ppm
from .metrics import UncertaintyKind, mse, psnr, ssim, to_uncertainty
from .umaps import (
    DatasetManifest,
    UMap,
    interpolate_on_sphere,
    interpolation_weights,
    load_manifest,
    make_umap_for_view,
    read_umap,
    render_polar_map,
    save_manifest,
    write_umap,
)
from .meshes import TriMesh, icosphere, load_obj, make_shape, save_obj
from .simulator import (
    CameraPose,
    RenderConfig,
    SimConfig,
    VoxelGrid,
    carve_hull,
    gen_dataset,
    make_umap,
    render_hull,
    render_view,
)
from .evaluation import (
    EvalConfig,
    EvalPoseSet,
    EvalReport,
    completion_ratio,
    evaluate_selection,
    mesh_accuracy,
    visibility,
)
from .predictor import (
    DatasetOracle,
    ExternalPredictor,
    KnnRegressor,
    SimulatorOracle,
    external_predict,
    knn_fit,
    knn_predict,
)
from .engine import (
    Disable,
    EpisodeTrajectory,
    LastOnly,
    NeighborDiff,
    ProductAll,
    SingleAngular,
    SmallThreshold,
    TopCount,
    baseline_select,
    load_trajectory,
    run_episode,
    save_trajectory,
)

__version__ = "0.1.0"
