"""Command-line surface: register, benchmark, svd-probe, train-toy, synth.

Every output file embeds the resolved run configuration and the toolkit
version. All commands are deterministic under --seed (REGKIT_SEED serves
as a fallback), and benchmark outputs are byte-identical for any --jobs
value. Exit codes: 0 success, 1 usage or I/O error, 2 no correspondences,
3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .depth import read_depth_png, read_intrinsics_json, depth_to_pointcloud
from .errors import NoCorrespondencesError, RegkitError, TrainingDivergedError
from .evaluation import (
    SCENARIOS,
    Thresholds,
    method_names,
    report_csv_lines,
    report_summary_text,
    report_to_dict,
    run_benchmark,
)
from .geometry import (
    EulerRanges,
    RigidTransform,
    rotation_error,
    translation_error_norm,
    translation_mse,
)
from .learning import (
    ToyEncoderConfig,
    load_encoder,
    save_encoder,
    train_toy_encoder,
)
from .mesh import load_mesh, make_blob, make_box, make_icosphere, sample_surface
from .pointcloud import PointCloud, read_pointcloud, write_pointcloud
from .preprocess import make_synthetic_pair
from .solver import (
    RegisterConfig,
    fit_loglog_slope,
    gap_probe_matrix,
    register,
    svd_gradient_probe,
)
from .geometry import apply as apply_transform

_UNSET = object()


def pose_to_dict(pose: RigidTransform) -> dict:
    return {"rotation": pose.rotation.tolist(), "translation": pose.translation.tolist()}


def pose_from_dict(d: dict) -> RigidTransform:
    return RigidTransform(np.array(d["rotation"]), np.array(d["translation"]))


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


_OUTPUT_KEYS = ("out", "out_dir", "aligned_out", "loss_csv")


def embeddable(cfg: dict) -> dict:
    """Result-defining configuration: everything except output locations."""
    return {k: v for k, v in cfg.items() if k not in _OUTPUT_KEYS}


def _resolve(ns: argparse.Namespace, defaults: dict) -> dict:
    """Merge precedence: explicit flags > --config file > defaults."""
    explicit = {k: v for k, v in vars(ns).items() if v is not _UNSET}
    merged = dict(defaults)
    config_path = explicit.pop("config", None)
    if config_path:
        try:
            file_cfg = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise SystemExit(f"error: cannot read --config {config_path}: {exc}")
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise SystemExit(f"error: unknown config keys: {', '.join(sorted(unknown))}")
        merged.update(file_cfg)
    merged.update({k: v for k, v in explicit.items() if k in defaults})
    return merged


def _seed_from(cfg: dict) -> int:
    if cfg.get("seed") is not None:
        return int(cfg["seed"])
    env = os.environ.get("REGKIT_SEED")
    return int(env) if env else 0


def _register_config(cfg: dict, seed: int) -> RegisterConfig:
    return RegisterConfig(
        normalize=not cfg["no_normalize"],
        voxel=not cfg["no_voxel"],
        voxel_size=cfg["voxel_size"],
        target_ratio=cfg["target_ratio"],
        normal_k=cfg["normal_k"],
        fpfh_radius=cfg["fpfh_radius"],
        matcher=cfg["matcher"],
        selection=cfg["selection"],
        bin_score=cfg["bin_score"],
        sinkhorn_iters=cfg["sinkhorn_iters"],
        epsilon=cfg["epsilon"],
        softmax_temperature=cfg["temperature"],
        hard_threshold=cfg["threshold"],
        icp_refine=not cfg["no_icp"],
        n_sample=cfg["n_sample"],
        target_is_scan=cfg["target_is_scan"],
        seed=seed,
    )


def _load_source(path: str):
    p = Path(path)
    if not p.exists():
        raise SystemExit(f"error: source file not found: {p}")
    if p.suffix.lower() == ".obj":
        return load_mesh(p)
    if p.suffix.lower() == ".ply":
        text = p.read_text()
        if "element face" in text and "element vertex" in text:
            return load_mesh(p)
        return read_pointcloud(p)
    raise SystemExit(f"error: unsupported source format: {p.suffix}")


def _load_target(cfg: dict) -> PointCloud:
    path = Path(cfg["target"])
    if not path.exists():
        raise SystemExit(f"error: target file not found: {path}")
    if path.suffix.lower() == ".ply":
        return read_pointcloud(path)
    if path.suffix.lower() == ".png":
        intr_path = cfg.get("intrinsics") or str(path.with_suffix(".json"))
        if not Path(intr_path).exists():
            raise SystemExit(f"error: intrinsics sidecar not found: {intr_path}")
        img = read_depth_png(path)
        intr = read_intrinsics_json(intr_path)
        mask = None
        if cfg.get("mask"):
            mask_img = read_depth_png(cfg["mask"])
            mask = np.asarray(mask_img.data) > 0
        return depth_to_pointcloud(img, intr, mask)
    raise SystemExit(f"error: unsupported target format: {path.suffix}")


# ---------------------------------------------------------------------------
# register
# ---------------------------------------------------------------------------

REGISTER_DEFAULTS = {
    "source": None,
    "target": None,
    "intrinsics": None,
    "mask": None,
    "out": "register_report.json",
    "aligned_out": None,
    "gt": None,
    "seed": None,
    "no_normalize": False,
    "no_voxel": False,
    "no_icp": False,
    "voxel_size": 0.05,
    "target_ratio": 0.75,
    "normal_k": 16,
    "fpfh_radius": None,
    "matcher": "sinkhorn",
    "selection": "hard",
    "bin_score": 0.0,
    "sinkhorn_iters": 100,
    "epsilon": 0.1,
    "temperature": 0.05,
    "threshold": 0.5,
    "n_sample": 1024,
    "target_is_scan": False,
}


def cmd_register(ns: argparse.Namespace) -> int:
    cfg = _resolve(ns, REGISTER_DEFAULTS)
    if not cfg["source"] or not cfg["target"]:
        raise SystemExit("error: register needs --source and --target")
    seed = _seed_from(cfg)
    run_config = embeddable({**cfg, "seed": seed})

    source = _load_source(cfg["source"])
    target = _load_target(cfg)
    reg_config = _register_config(cfg, seed)
    out_path = Path(cfg["out"])

    try:
        result = register(source, target, reg_config)
    except NoCorrespondencesError as exc:
        _write_json(
            out_path,
            {"version": __version__, "run_config": run_config, "error": str(exc)},
        )
        print(f"no correspondences: {exc}", file=sys.stderr)
        return 2
    except RegkitError as exc:
        _write_json(
            out_path,
            {"version": __version__, "run_config": run_config, "error": str(exc)},
        )
        print(f"error: {exc}", file=sys.stderr)
        return 1

    payload = {
        "version": __version__,
        "run_config": run_config,
        "pose": pose_to_dict(result.pose),
        "normalized_pose": pose_to_dict(result.normalized_pose),
        "correspondence_count": result.correspondence_count,
        "inlier_rms": result.inlier_rms,
        "converged": result.converged,
        "diagnostics": result.diagnostics,
    }
    if cfg["gt"]:
        gt = pose_from_dict(json.loads(Path(cfg["gt"]).read_text()))
        payload["errors"] = {
            "rot_err_deg": rotation_error(result.pose.rotation, gt.rotation),
            "trans_norm": translation_error_norm(result.pose.translation, gt.translation),
            "trans_mse": translation_mse(result.pose.translation, gt.translation),
        }
    _write_json(out_path, payload)
    if cfg["aligned_out"]:
        cloud = source if isinstance(source, PointCloud) else sample_surface(source, cfg["n_sample"], seed)
        write_pointcloud(apply_transform(result.pose, cloud), cfg["aligned_out"])
    print(f"wrote {out_path}")
    return 0


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------

BENCHMARK_DEFAULTS = {
    "scenario": "45deg",
    "methods": "bpnet,icp",
    "n": 20,
    "seed": None,
    "jobs": None,
    "out_dir": "benchmark_out",
    "trans_metric": "mse",
}


def cmd_benchmark(ns: argparse.Namespace) -> int:
    cfg = _resolve(ns, BENCHMARK_DEFAULTS)
    if cfg["n"] < 1:
        raise SystemExit("error: --n must be >= 1")
    if cfg["scenario"] not in SCENARIOS:
        raise SystemExit(f"error: unknown scenario '{cfg['scenario']}'; valid: {', '.join(sorted(SCENARIOS))}")
    methods = [m.strip() for m in cfg["methods"].split(",") if m.strip()]
    invalid = [m for m in methods if m not in method_names()]
    if invalid:
        raise SystemExit(
            f"error: unknown methods: {', '.join(invalid)}; valid: {', '.join(method_names())}"
        )
    seed = _seed_from(cfg)
    jobs = cfg["jobs"] if cfg["jobs"] is not None else (os.cpu_count() or 1)
    thresholds = Thresholds(translation_metric=cfg["trans_metric"])
    run_config = embeddable({**cfg, "seed": seed})
    run_config.pop("jobs", None)  # parallelism never affects results

    report = run_benchmark(cfg["scenario"], methods, cfg["n"], seed, jobs=jobs, thresholds=thresholds)

    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "report.json", report_to_dict(report, run_config))
    (out_dir / "report.csv").write_text("\n".join(report_csv_lines(report, run_config)) + "\n")
    (out_dir / "summary.txt").write_text(report_summary_text(report))
    timing_lines = ["method/instance,runtime_ms"] + [
        f"{key},{ms:.3f}" for key, ms in sorted(report.runtimes_ms.items())
    ]
    (out_dir / "timing.csv").write_text("\n".join(timing_lines) + "\n")
    print(report_summary_text(report))
    return 0


# ---------------------------------------------------------------------------
# svd-probe
# ---------------------------------------------------------------------------

SVD_PROBE_DEFAULTS = {"gaps": "1e-1,1e-2,1e-3,1e-4", "out": None, "seed": None}


def cmd_svd_probe(ns: argparse.Namespace) -> int:
    cfg = _resolve(ns, SVD_PROBE_DEFAULTS)
    gaps = [float(g) for g in cfg["gaps"].split(",") if g.strip()]
    if any(g < 0 for g in gaps):
        raise SystemExit("error: gaps must be >= 0")

    rows = []
    for gap in gaps:
        report = svd_gradient_probe(gap_probe_matrix(gap))
        rows.append(
            {
                "gap": gap,
                "singular_values": report.singular_values.tolist(),
                "analytic_norm": report.analytic_gradient_norm,
                "finite_difference_norm": report.finite_difference_norm,
                "unbounded": report.unbounded,
            }
        )

    print(f"{'gap':>10}  {'analytic':>14}  {'finite-diff':>14}  unbounded")
    for row in rows:
        print(
            f"{row['gap']:>10.3g}  {row['analytic_norm']:>14.6g}  "
            f"{row['finite_difference_norm']:>14.6g}  {row['unbounded']}"
        )
    slope = None
    finite = [(r["gap"], r["analytic_norm"]) for r in rows if np.isfinite(r["analytic_norm"]) and r["gap"] > 0]
    if len(finite) >= 2:
        slope = fit_loglog_slope([g for g, _ in finite], [n for _, n in finite])
        print(f"log-log slope: {slope:.4f}")

    if cfg["out"]:
        _write_json(
            Path(cfg["out"]),
            {
                "version": __version__,
                "run_config": {"gaps": cfg["gaps"]},
                "rows": rows,
                "slope": slope,
            },
        )
    return 0


# ---------------------------------------------------------------------------
# train-toy
# ---------------------------------------------------------------------------

TRAIN_DEFAULTS = {
    "data_dir": None,
    "pairs": 20,
    "points": 64,
    "epochs": 50,
    "lr": 2.0,
    "embed_dim": 8,
    "sinkhorn_iters": 15,
    "epsilon": 0.05,
    "bin_score": 0.0,
    "seed": None,
    "out": "toy_encoder.json",
    "loss_csv": None,
    "resume": None,
}


def _synthetic_training_pairs(n_pairs: int, n_points: int, seed: int):
    """Easy full-overlap pairs: mild rotations of blob surface samples."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x70F]))
    ranges = EulerRanges(((0.0, 30.0),) * 3, ((-0.3, 0.3),) * 3)
    pairs = []
    for _ in range(n_pairs):
        mesh = make_blob(rng)
        source, target, gt = make_synthetic_pair(mesh, ranges, n_points, n_points, rng)
        pairs.append((source.without_normals(), target.without_normals(), gt))
    return pairs


def _load_training_pairs(data_dir: Path):
    pairs = []
    for sub in sorted(p for p in data_dir.iterdir() if p.is_dir()):
        src, tgt, gt = sub / "source.ply", sub / "target.ply", sub / "gt.json"
        if src.exists() and tgt.exists() and gt.exists():
            pairs.append(
                (
                    read_pointcloud(src).without_normals(),
                    read_pointcloud(tgt).without_normals(),
                    pose_from_dict(json.loads(gt.read_text())),
                )
            )
    if not pairs:
        raise SystemExit(f"error: no source.ply/target.ply/gt.json triples under {data_dir}")
    return pairs


def cmd_train_toy(ns: argparse.Namespace) -> int:
    cfg = _resolve(ns, TRAIN_DEFAULTS)
    seed = _seed_from(cfg)
    run_config = embeddable({**cfg, "seed": seed})

    if cfg["data_dir"]:
        pairs = _load_training_pairs(Path(cfg["data_dir"]))
    else:
        pairs = _synthetic_training_pairs(cfg["pairs"], cfg["points"], seed)

    encoder = load_encoder(cfg["resume"]) if cfg["resume"] else None
    config = (
        encoder.config
        if encoder is not None
        else ToyEncoderConfig(
            embed_dim=cfg["embed_dim"],
            learning_rate=cfg["lr"],
            epochs=cfg["epochs"],
            sinkhorn_iters=cfg["sinkhorn_iters"],
            epsilon=cfg["epsilon"],
            bin_score=cfg["bin_score"],
            seed=seed,
        )
    )
    if encoder is not None:
        config = replace(config, epochs=cfg["epochs"])

    def write_loss_csv(history):
        if cfg["loss_csv"]:
            lines = [f"# regkit {__version__} config={json.dumps(run_config, sort_keys=True)}"]
            lines.append("epoch,loss")
            lines += [f"{i},{loss!r}" for i, loss in enumerate(history)]
            Path(cfg["loss_csv"]).write_text("\n".join(lines) + "\n")

    try:
        encoder = train_toy_encoder(pairs, config, encoder=encoder)
    except TrainingDivergedError as exc:
        write_loss_csv(exc.history)
        print(f"training diverged; last finite loss {exc.last_loss}", file=sys.stderr)
        return 3

    save_encoder(encoder, cfg["out"])
    write_loss_csv(encoder.loss_history)
    first = encoder.loss_history[0] if encoder.loss_history else float("nan")
    last = encoder.loss_history[-1] if encoder.loss_history else float("nan")
    print(f"trained {encoder.epoch} epochs: loss {first:.4f} -> {last:.4f}; wrote {cfg['out']}")
    return 0


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

SYNTH_DEFAULTS = {
    "mesh": "builtin:blob",
    "rotation": "rot45",
    "translation": 0.5,
    "n_sample": 1024,
    "n_keep": 768,
    "seed": None,
    "out_dir": "synth_pair",
}


def cmd_synth(ns: argparse.Namespace) -> int:
    cfg = _resolve(ns, SYNTH_DEFAULTS)
    seed = _seed_from(cfg)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x517]))

    name = cfg["mesh"]
    if name == "builtin:blob":
        mesh = make_blob(rng)
    elif name == "builtin:box":
        mesh = make_box()
    elif name == "builtin:icosphere":
        mesh = make_icosphere()
    elif Path(name).exists():
        mesh = load_mesh(name)
    else:
        raise SystemExit(f"error: unknown mesh '{name}' (builtin:blob|box|icosphere or a file)")

    if cfg["rotation"] == "rot45":
        ranges = EulerRanges.rot45(cfg["translation"])
    elif cfg["rotation"] == "full":
        ranges = EulerRanges.full_rotation(cfg["translation"])
    else:
        raise SystemExit("error: --rotation must be rot45 or full")

    source, target, gt = make_synthetic_pair(mesh, ranges, cfg["n_sample"], cfg["n_keep"], rng)
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    write_pointcloud(source, out_dir / "source.ply")
    write_pointcloud(target, out_dir / "target.ply")
    _write_json(out_dir / "gt.json", pose_to_dict(gt))
    _write_json(
        out_dir / "meta.json",
        {"version": __version__, "run_config": embeddable({**cfg, "seed": seed})},
    )
    print(f"wrote pair to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=_UNSET, help="RNG seed (fallback: REGKIT_SEED env, then 0)")
    p.add_argument("--config", default=_UNSET, help="JSON file with defaults for any flag")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regkit", description="Rigid point-cloud registration toolkit")
    parser.add_argument("--version", action="version", version=f"regkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", help="register a source mesh/cloud to a target cloud or depth image")
    p.add_argument("--source", default=_UNSET)
    p.add_argument("--target", default=_UNSET, help=".ply cloud or 16-bit depth .png with JSON sidecar")
    p.add_argument("--intrinsics", default=_UNSET, help="intrinsics JSON (default: <target>.json)")
    p.add_argument("--mask", default=_UNSET, help="PNG mask; nonzero pixels are kept")
    p.add_argument("--out", default=_UNSET)
    p.add_argument("--aligned-out", dest="aligned_out", default=_UNSET)
    p.add_argument("--gt", default=_UNSET, help="ground-truth pose JSON to report errors against")
    p.add_argument("--no-normalize", dest="no_normalize", action="store_true", default=_UNSET)
    p.add_argument("--no-voxel", dest="no_voxel", action="store_true", default=_UNSET)
    p.add_argument("--no-icp", dest="no_icp", action="store_true", default=_UNSET)
    p.add_argument("--voxel-size", dest="voxel_size", type=float, default=_UNSET)
    p.add_argument("--target-ratio", dest="target_ratio", type=float, default=_UNSET)
    p.add_argument("--normal-k", dest="normal_k", type=int, default=_UNSET)
    p.add_argument("--fpfh-radius", dest="fpfh_radius", type=float, default=_UNSET)
    p.add_argument("--matcher", choices=("sinkhorn", "softmax"), default=_UNSET)
    p.add_argument("--selection", choices=("hard", "weighted"), default=_UNSET)
    p.add_argument("--bin-score", dest="bin_score", type=float, default=_UNSET)
    p.add_argument("--sinkhorn-iters", dest="sinkhorn_iters", type=int, default=_UNSET)
    p.add_argument("--epsilon", type=float, default=_UNSET)
    p.add_argument("--temperature", type=float, default=_UNSET)
    p.add_argument("--threshold", type=float, default=_UNSET)
    p.add_argument("--n-sample", dest="n_sample", type=int, default=_UNSET)
    p.add_argument("--target-is-scan", dest="target_is_scan", action="store_true", default=_UNSET)
    _add_common(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("benchmark", help="run synthetic benchmark scenarios")
    p.add_argument("--scenario", default=_UNSET, help=f"one of: {', '.join(sorted(SCENARIOS))}")
    p.add_argument("--methods", default=_UNSET, help="comma-separated method names")
    p.add_argument("--n", type=int, default=_UNSET, help="instances per method")
    p.add_argument("--jobs", type=int, default=_UNSET, help="parallel workers (default: cpu count)")
    p.add_argument("--out-dir", dest="out_dir", default=_UNSET)
    p.add_argument("--trans-metric", dest="trans_metric", choices=("mse", "norm"), default=_UNSET)
    _add_common(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("svd-probe", help="demonstrate SVD derivative explosion vs singular-value gap")
    p.add_argument("--gaps", default=_UNSET, help="comma-separated singular-value gaps")
    p.add_argument("--out", default=_UNSET, help="optional JSON output")
    _add_common(p)
    p.set_defaults(func=cmd_svd_probe)

    p = sub.add_parser("train-toy", help="train the toy linear encoder on synthetic or on-disk pairs")
    p.add_argument("--data-dir", dest="data_dir", default=_UNSET, help="directory of synth-format pair subdirs")
    p.add_argument("--pairs", type=int, default=_UNSET)
    p.add_argument("--points", type=int, default=_UNSET)
    p.add_argument("--epochs", type=int, default=_UNSET)
    p.add_argument("--lr", type=float, default=_UNSET)
    p.add_argument("--embed-dim", dest="embed_dim", type=int, default=_UNSET)
    p.add_argument("--sinkhorn-iters", dest="sinkhorn_iters", type=int, default=_UNSET)
    p.add_argument("--epsilon", type=float, default=_UNSET)
    p.add_argument("--bin-score", dest="bin_score", type=float, default=_UNSET)
    p.add_argument("--out", default=_UNSET)
    p.add_argument("--loss-csv", dest="loss_csv", default=_UNSET)
    p.add_argument("--resume", default=_UNSET, help="checkpoint to continue from")
    _add_common(p)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("synth", help="emit a synthetic registration pair to disk")
    p.add_argument("--mesh", default=_UNSET, help="builtin:blob|box|icosphere or a mesh file")
    p.add_argument("--rotation", default=_UNSET, choices=("rot45", "full"))
    p.add_argument("--translation", type=float, default=_UNSET)
    p.add_argument("--n-sample", dest="n_sample", type=int, default=_UNSET)
    p.add_argument("--n-keep", dest="n_keep", type=int, default=_UNSET)
    p.add_argument("--out-dir", dest="out_dir", default=_UNSET)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        return ns.func(ns)
    except SystemExit:
        raise
    except RegkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
