"""Command-line front end.

Subcommands:

    gen-meshes    write the built-in procedural shapes as OBJ files
    gen-dataset   render views + uncertainty maps for a mesh directory
    fit-knn       train the k-NN map regressor on a dataset
    run-avs       run one view-selection episode, write the trajectory
    evaluate      score a trajectory or baseline against its mesh
    render-umap   draw an uncertainty map as a polar PPM image

Every subcommand accepts `--config FILE` holding `key value` lines;
explicit flags win over config values, which win over defaults. Exit
codes: 0 success, 2 usage or data error, 3 external-peer failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from .errors import EmptyHullError, FormatError, NotFoundError, PeerError
from .evaluation import (
    EvalConfig,
    EvalPoseSet,
    TABLE_HEADER,
    evaluate_selection,
    format_table_row,
    write_report,
)
from .engine import (
    CANDIDATE_COUNT,
    DEFAULT_BUDGET,
    agg_token,
    baseline_select,
    filter_token,
    load_trajectory,
    parse_agg,
    parse_filter,
    run_episode,
    save_trajectory,
)
from .geometry import DEFAULT_N_SIDE, DEFAULT_RADIUS, Viewpoint
from .imageio import write_ppm
from .meshes import PROCEDURAL_SHAPES, load_obj, make_shape, save_obj
from .metrics import UncertaintyKind
from .predictor import (
    DatasetOracle,
    ExternalPredictor,
    KnnRegressor,
    SimulatorOracle,
    knn_fit,
    load_knn_model,
    save_knn_model,
)
from .simulator import RenderConfig, SimConfig, discover_meshes, gen_dataset
from .umaps import load_manifest, read_umap, render_polar_map


def _load_config(path) -> dict:
    """Key/value lines, same shape as a manifest header. '#' comments ok."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read config {path}: {exc}") from None
    config = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(" ")
        value = value.strip()
        if not value:
            raise FormatError(f"{path}:{lineno}: expected 'key value'")
        config[key.replace("-", "_")] = value
    return config


def _resolve(args, config, name, convert, default):
    """Flag beats config beats default; flags are declared with default None."""
    flag = getattr(args, name, None)
    if flag is not None:
        return flag
    if name in config:
        try:
            return convert(config[name])
        except ValueError as exc:
            raise FormatError(f"config key {name}: {exc}") from None
    return default


def _config_of(args) -> dict:
    return _load_config(args.config) if args.config else {}


def _write_provenance(out_dir: Path, entries: dict) -> None:
    lines = [f"{key} {entries[key]}" for key in sorted(entries)]
    (out_dir / "run_config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gen_meshes(args) -> int:
    config = _config_of(args)
    out = Path(_resolve(args, config, "out", str, "meshes"))
    names = _resolve(args, config, "shapes", str, ",".join(sorted(PROCEDURAL_SHAPES)))
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in [n.strip() for n in names.split(",") if n.strip()]:
        mesh = make_shape(name)
        save_obj(mesh, out / f"{name}.obj")
        written.append(name)
    print(f"wrote {len(written)} meshes to {out}: {', '.join(written)}")
    return 0


def cmd_gen_dataset(args) -> int:
    config = _config_of(args)
    mesh_dir = Path(_resolve(args, config, "meshes", str, "meshes"))
    out = Path(_resolve(args, config, "out", str, "dataset"))
    views = _resolve(args, config, "views", int, 12)
    seed = _resolve(args, config, "seed", int, 0)
    resolution = _resolve(args, config, "resolution", int, 128)
    radius = _resolve(args, config, "radius", float, DEFAULT_RADIUS)
    grid_dims = _resolve(args, config, "grid_dims", int, 64)
    n_side = _resolve(args, config, "n_side", int, DEFAULT_N_SIDE)
    kinds = tuple(
        UncertaintyKind.from_token(t.strip())
        for t in _resolve(args, config, "kind", str, "psnr").split(",")
        if t.strip()
    )
    mesh_paths = discover_meshes(mesh_dir)
    manifest = gen_dataset(
        mesh_paths,
        out,
        views_per_instance=views,
        resolution=resolution,
        radius=radius,
        seed=seed,
        kinds=kinds,
        grid_dims=grid_dims,
        n_side=n_side,
    )
    _write_provenance(
        out,
        {
            "subcommand": "gen-dataset",
            "meshes": mesh_dir,
            "views": views,
            "seed": seed,
            "resolution": resolution,
            "radius": f"{radius:g}",
            "grid_dims": grid_dims,
            "n_side": n_side,
            "kind": ",".join(k.value for k in kinds),
        },
    )
    print(
        f"dataset at {out}: {len(manifest.instances)} instances, "
        f"{manifest.view_count()} views, kinds {','.join(k.value for k in kinds)}"
    )
    return 0


def cmd_fit_knn(args) -> int:
    config = _config_of(args)
    dataset = Path(_resolve(args, config, "dataset", str, "dataset"))
    out = Path(_resolve(args, config, "out", str, "knn_model.txt"))
    k = _resolve(args, config, "k", int, 3)
    kind = UncertaintyKind.from_token(_resolve(args, config, "kind", str, "psnr"))
    manifest = load_manifest(dataset / "manifest.txt")
    model = knn_fit(manifest, dataset, kind=kind, k=k)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_knn_model(model, out)
    print(f"fitted k={k} model on {model.n_rows} views -> {out}")
    return 0


def _build_predictor(args, config, kind, render, grid_dims):
    name = _resolve(args, config, "predictor", str, "sim")
    mesh_path = _resolve(args, config, "mesh", str, None)
    mesh = load_obj(mesh_path) if mesh_path else None
    if name == "sim":
        if mesh is None:
            raise FormatError("predictor 'sim' needs --mesh")
        sim = SimConfig(render=render, grid_dims=grid_dims)
        return SimulatorOracle(mesh, kind, sim), mesh
    if name == "dataset":
        dataset = _resolve(args, config, "dataset", str, None)
        if dataset is None:
            raise FormatError("predictor 'dataset' needs --dataset")
        root = Path(dataset)
        manifest = load_manifest(root / "manifest.txt")
        instance = _resolve(args, config, "instance", str, None)
        nearest_deg = _resolve(args, config, "nearest_deg", float, 180.0)
        nearest = None if nearest_deg <= 0 else math.radians(nearest_deg)
        oracle = DatasetOracle(
            manifest, root, instance_id=instance, kind=kind,
            nearest_within_rad=nearest,
        )
        return oracle, mesh
    if name == "knn":
        model_path = _resolve(args, config, "model", str, None)
        if model_path is None:
            raise FormatError("predictor 'knn' needs --model")
        if mesh is None:
            raise FormatError("predictor 'knn' needs --mesh to render views")
        return KnnRegressor(load_knn_model(model_path)), mesh
    if name == "external":
        peer = _resolve(args, config, "peer", str, None)
        if peer is None:
            raise FormatError("predictor 'external' needs --peer")
        if mesh is None:
            raise FormatError("predictor 'external' needs --mesh to render views")
        timeout = _resolve(args, config, "timeout", float, 10.0)
        return ExternalPredictor(peer, kind=kind, timeout_s=timeout), mesh
    raise FormatError(
        f"unknown predictor {name!r} (expected sim, dataset, knn, or external)"
    )


def cmd_run_avs(args) -> int:
    config = _config_of(args)
    out = Path(_resolve(args, config, "out", str, "run"))
    budget = _resolve(args, config, "budget", int, DEFAULT_BUDGET)
    seed = _resolve(args, config, "seed", int, 0)
    kind = UncertaintyKind.from_token(_resolve(args, config, "kind", str, "psnr"))
    filter_policy = parse_filter(_resolve(args, config, "filter", str, "small:0.1"))
    agg_policy = parse_agg(_resolve(args, config, "agg", str, "product"))
    resolution = _resolve(args, config, "resolution", int, 64)
    grid_dims = _resolve(args, config, "grid_dims", int, 64)
    candidates = _resolve(args, config, "candidates", int, CANDIDATE_COUNT)
    radius = _resolve(args, config, "radius", float, DEFAULT_RADIUS)
    start_elev = _resolve(args, config, "start_elev", float, 0.0)
    start_azim = _resolve(args, config, "start_azim", float, 0.0)
    plots = bool(getattr(args, "plots", False)) or config.get("plots") == "1"

    render = RenderConfig(resolution=resolution)
    predictor, mesh = _build_predictor(args, config, kind, render, grid_dims)
    start = Viewpoint(start_elev, start_azim, radius)
    try:
        traj = run_episode(
            predictor,
            budget=budget,
            filter_policy=filter_policy,
            agg_policy=agg_policy,
            seed=seed,
            start_view=start,
            mesh=mesh,
            render=render,
            candidate_count=candidates,
        )
    finally:
        predictor.close()

    if not traj.steps:
        print("peer error: predictor failed before the first view", file=sys.stderr)
        return 3
    out.mkdir(parents=True, exist_ok=True)
    save_trajectory(traj, out / "trajectory.txt")
    _write_provenance(
        out,
        {
            "subcommand": "run-avs",
            "predictor": _resolve(args, config, "predictor", str, "sim"),
            "budget": budget,
            "seed": seed,
            "kind": kind.value,
            "filter": filter_token(filter_policy),
            "agg": agg_token(agg_policy),
            "resolution": resolution,
            "grid_dims": grid_dims,
            "candidates": candidates,
            "radius": f"{radius:g}",
            "start": f"{start_elev:g} {start_azim:g}",
        },
    )
    if plots:
        plot_dir = out / "plots"
        plot_dir.mkdir(exist_ok=True)
        for i, step in enumerate(traj.steps):
            write_ppm(render_polar_map(step.umap), plot_dir / f"step_{i:03d}.ppm")
    status = "complete" if traj.complete else "INCOMPLETE"
    print(
        f"{status} trajectory: {len(traj.steps)} views "
        f"(budget {budget}) -> {out / 'trajectory.txt'}"
    )
    return 0 if traj.complete else 3


def cmd_evaluate(args) -> int:
    config = _config_of(args)
    mesh_path = _resolve(args, config, "mesh", str, None)
    if mesh_path is None:
        raise FormatError("evaluate needs --mesh")
    mesh = load_obj(mesh_path)
    trajectory = _resolve(args, config, "trajectory", str, None)
    baseline = _resolve(args, config, "baseline", str, None)
    budget = _resolve(args, config, "budget", int, DEFAULT_BUDGET)
    seed = _resolve(args, config, "seed", int, 0)
    radius = _resolve(args, config, "radius", float, DEFAULT_RADIUS)

    if (trajectory is None) == (baseline is None):
        raise FormatError("pass exactly one of --trajectory or --baseline")
    if trajectory is not None:
        traj = load_trajectory(trajectory)
        views = traj.views
        label = _resolve(args, config, "label", str, Path(trajectory).stem)
    else:
        views = baseline_select(baseline, budget, seed=seed, radius=radius)
        label = _resolve(args, config, "label", str, baseline)

    poses_seed = _resolve(args, config, "poses_seed", int, 0)
    resolution = _resolve(args, config, "resolution", int, 64)
    grid_dims = _resolve(args, config, "grid_dims", int, 64)
    tau = _resolve(args, config, "tau", float, 0.05)
    poses = EvalPoseSet.sample(seed=poses_seed, radius=radius)
    cfg = EvalConfig(
        render=RenderConfig(resolution=resolution), grid_dims=grid_dims, tau=tau
    )
    report = evaluate_selection(mesh, views, poses, cfg, label=label)

    out = _resolve(args, config, "out", str, None)
    if out is not None:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_report(report, out_dir)
        _write_provenance(
            out_dir,
            {
                "subcommand": "evaluate",
                "mesh": mesh_path,
                "source": trajectory if trajectory else f"baseline:{baseline}",
                "label": label,
                "budget": len(views),
                "seed": seed,
                "poses_seed": poses_seed,
                "resolution": resolution,
                "grid_dims": grid_dims,
                "tau": f"{tau:g}",
                "radius": f"{radius:g}",
            },
        )
    print(TABLE_HEADER)
    print(format_table_row(report))
    return 0


def cmd_render_umap(args) -> int:
    config = _config_of(args)
    src = _resolve(args, config, "infile", str, None)
    dst = _resolve(args, config, "out", str, None)
    if src is None or dst is None:
        raise FormatError("render-umap needs --in and --out")
    size = _resolve(args, config, "size", int, 256)
    umap = read_umap(src)
    image = render_polar_map(umap, size_px=size)
    Path(dst).parent.mkdir(parents=True, exist_ok=True)
    write_ppm(image, dst)
    print(f"wrote {size}x{size} polar map to {dst}")
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="punavs",
        description="Uncertainty-guided active view selection toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key/value config file; flags override it")
        p.set_defaults(func=func)
        return p

    p = add("gen-meshes", cmd_gen_meshes, "write the procedural shapes as OBJ")
    p.add_argument("--out")
    p.add_argument("--shapes", help="comma-separated subset of shape names")

    p = add("gen-dataset", cmd_gen_dataset, "render a view/map dataset")
    p.add_argument("--meshes")
    p.add_argument("--out")
    p.add_argument("--views", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--radius", type=float)
    p.add_argument("--grid-dims", dest="grid_dims", type=int)
    p.add_argument("--n-side", dest="n_side", type=int)
    p.add_argument("--kind", help="comma-separated map kinds (psnr, ssim, mse)")

    p = add("fit-knn", cmd_fit_knn, "train the k-NN map regressor")
    p.add_argument("--dataset")
    p.add_argument("--out")
    p.add_argument("--k", type=int)
    p.add_argument("--kind")

    p = add("run-avs", cmd_run_avs, "run one view-selection episode")
    p.add_argument("--mesh")
    p.add_argument("--predictor", help="sim, dataset, knn, or external")
    p.add_argument("--dataset", help="dataset dir for the dataset predictor")
    p.add_argument("--instance", help="instance id within the dataset")
    p.add_argument("--nearest-deg", dest="nearest_deg", type=float,
                   help="dataset predictor: accept nearest view within this angle")
    p.add_argument("--model", help="model file for the knn predictor")
    p.add_argument("--peer", help="command line of the external predictor")
    p.add_argument("--timeout", type=float)
    p.add_argument("--budget", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--kind")
    p.add_argument("--filter", help="small:T | disable | top32:N | single:DEG")
    p.add_argument("--agg", help="product | last | diff:DEG")
    p.add_argument("--candidates", type=int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--grid-dims", dest="grid_dims", type=int)
    p.add_argument("--radius", type=float)
    p.add_argument("--start-elev", dest="start_elev", type=float)
    p.add_argument("--start-azim", dest="start_azim", type=float)
    p.add_argument("--plots", action="store_true", default=False)
    p.add_argument("--out")

    p = add("evaluate", cmd_evaluate, "score selected views against the mesh")
    p.add_argument("--mesh")
    p.add_argument("--trajectory")
    p.add_argument("--baseline", help="random or fps")
    p.add_argument("--budget", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--poses-seed", dest="poses_seed", type=int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--grid-dims", dest="grid_dims", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--radius", type=float)
    p.add_argument("--label")
    p.add_argument("--out")

    p = add("render-umap", cmd_render_umap, "draw a map as a polar image")
    p.add_argument("--in", dest="infile")
    p.add_argument("--out")
    p.add_argument("--size", type=int)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PeerError as exc:
        print(f"peer error: {exc}", file=sys.stderr)
        return 3
    except (FormatError, NotFoundError, EmptyHullError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
