"""Command line entry points for every pipeline stage and experiment.

Each subcommand prints a single-line JSON summary on success. Exit codes:
0 success, 1 usage error, 2 runtime error; errors go to stderr as one JSON
line. All randomized subcommands require an explicit --seed so any output
file is byte-stable for fixed flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (
    DatasetManifest,
    generate_synthetic,
    load_distribution,
    load_ground_truth,
    load_manifest,
    read_features,
    save_manifest,
    split_into_videos,
    thumos_like_distribution,
    write_features,
    write_labels,
)
from .effortsim import (
    EffortCurve,
    auto_drill,
    compare_curves,
    linear_baseline_curve,
    load_curve,
    save_curve,
    simulate_hierarchical,
    simulate_plan,
)
from .embed import embed, landmark_similarities_to_joint
from .hierarchy import (
    build_hierarchy,
    load_hierarchy,
    save_hierarchy,
    uniform_landmark_hierarchy,
    uniform_preset_sizes,
)
from .session import EXPORT_FORMATS, havana_export, rows_to_segments, via3_export

STRATEGIES = ("linear", "hsne-agglo", "uniform-agglo", "kmeans-drill")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse variant that reports flag problems as exit-code-1 usage errors."""

    def error(self, message):
        raise UsageError(message)


def _rel_to(path: Path, base: Path) -> str:
    """Store dataset-internal paths relative to the manifest when possible."""
    try:
        return os.path.relpath(path.resolve(), base.resolve())
    except ValueError:  # different drive on some platforms
        return str(path.resolve())


def cmd_synth(args) -> dict:
    dist = (
        load_distribution(args.dist)
        if args.dist
        else thumos_like_distribution(args.classes)
    )
    tensor, truth = generate_synthetic(
        dist, args.n, args.classes, args.sigma, args.seed,
        mean_segment_rows=args.segment_rows,
    )
    write_features(tensor, args.out_features)
    write_labels(truth.labels, args.out_labels)
    manifest_dir = Path(args.out_manifest).parent
    manifest = DatasetManifest(
        feature_file=Path(_rel_to(Path(args.out_features), manifest_dir)),
        dim=args.classes,
        videos=split_into_videos(
            args.n, rows_per_video=args.rows_per_video,
            stride_sec=args.stride_sec, fps=args.fps,
        ),
        label_names=truth.names,
        labels_file=Path(_rel_to(Path(args.out_labels), manifest_dir)),
    )
    save_manifest(manifest, args.out_manifest)
    return {
        "n_points": args.n,
        "dim": args.classes,
        "n_videos": len(manifest.videos),
        "out_features": args.out_features,
        "out_manifest": args.out_manifest,
        "out_labels": args.out_labels,
    }


def _parse_sizes(text: str) -> list[int]:
    try:
        sizes = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"--sizes must be comma-separated integers, got {text!r}") from None
    if not sizes or any(s < 2 for s in sizes):
        raise UsageError(f"--sizes entries must be >= 2, got {text!r}")
    return sizes


def cmd_hierarchy(args) -> dict:
    manifest = load_manifest(args.manifest)
    features = read_features(manifest.feature_file)
    if args.uniform:
        sizes = _parse_sizes(args.sizes) if args.sizes else uniform_preset_sizes(manifest.n_points)
        hierarchy = uniform_landmark_hierarchy(
            features, sizes, k=args.k, perplexity=args.perplexity,
            beta_aoi=args.beta_aoi, max_steps=args.max_steps,
            seed=args.seed, n_workers=args.workers,
        )
    else:
        if args.sizes:
            raise UsageError("--sizes only applies with --uniform")
        hierarchy = build_hierarchy(
            features, n_scales=args.scales, k=args.k, perplexity=args.perplexity,
            beta_walks=args.beta_walks, walk_length=args.walk_length,
            threshold_factor=args.threshold_factor, beta_aoi=args.beta_aoi,
            max_steps=args.max_steps, seed=args.seed, n_workers=args.workers,
        )
    save_hierarchy(hierarchy, args.out)
    return {
        "out": args.out,
        "method": hierarchy.method,
        "scale_sizes": [sc.n_landmarks for sc in hierarchy.scales],
    }


def cmd_embed(args) -> dict:
    hierarchy = load_hierarchy(args.hierarchy)
    if not 0 <= args.scale < hierarchy.n_scales:
        raise UsageError(
            f"--scale must be in [0, {hierarchy.n_scales - 1}], got {args.scale}"
        )
    scale = hierarchy.scales[args.scale]
    matrix = scale.similarities if scale.similarities is not None else scale.transition
    result = embed(
        landmark_similarities_to_joint(matrix),
        n_iters=args.iters, theta=args.theta, seed=args.seed,
    )
    lines = ["x,y"] + [f"{x:.6f},{y:.6f}" for x, y in result.coords]
    Path(args.out_csv).write_text("\n".join(lines) + "\n")
    out = {"out_csv": args.out_csv, "scale": args.scale, "n_points": len(result.coords)}
    if result.kl_trace:
        out["final_kl"] = round(result.kl_trace[-1][1], 6)
    return out


def _truncate(curve: EffortCurve, max_clicks: int) -> EffortCurve:
    out = EffortCurve()
    for c, cov, acc in zip(curve.clicks, curve.coverage, curve.accuracy):
        if c > max_clicks:
            break
        out.point(c, cov, acc)
    return out


def cmd_simulate(args) -> dict:
    manifest = load_manifest(args.manifest)
    if args.labels:
        manifest = dataclasses.replace(manifest, labels_file=Path(args.labels))
    truth = load_ground_truth(manifest)
    extra: dict = {}
    if args.strategy == "linear":
        curve = _truncate(linear_baseline_curve(truth, manifest), args.max_clicks)
    else:
        if not args.hierarchy:
            raise UsageError(f"--hierarchy is required for strategy {args.strategy}")
        hierarchy = load_hierarchy(args.hierarchy)
        features = read_features(manifest.feature_file)
        if args.strategy in ("hsne-agglo", "uniform-agglo"):
            want = "hsne" if args.strategy == "hsne-agglo" else "uniform"
            if hierarchy.method != want:
                raise UsageError(
                    f"strategy {args.strategy} expects a {want} hierarchy, "
                    f"file has method {hierarchy.method!r}"
                )
            result = simulate_hierarchical(
                hierarchy, truth, features, clusterer="single_linkage",
                seed=args.seed, max_clicks=args.max_clicks,
            )
            curve = result.curve
            extra = {"n_drills": result.n_drills, "n_labels": result.n_labels}
        else:
            n_clusters = args.clusters or len(np.unique(truth.labels))
            plan = auto_drill(hierarchy, features, n_clusters, seed=args.seed)
            result = simulate_plan(hierarchy, truth, plan, max_label_clicks=args.max_clicks)
            curve = result.curve
            extra = {"mean_displayed": round(result.mean_displayed, 6)}
    save_curve(curve, args.out_curve)
    return {
        "strategy": args.strategy,
        "out_curve": args.out_curve,
        "clicks": curve.clicks[-1] if curve.clicks else 0,
        "coverage": round(curve.final_coverage(), 6),
        "accuracy": round(curve.accuracy[-1], 6) if curve.accuracy else None,
        **extra,
    }


def _finite(value: float | None) -> float | None:
    if value is None or not math.isfinite(value):
        return None
    return round(float(value), 6)


def cmd_compare(args) -> dict:
    report = compare_curves(
        load_curve(args.curve_a), load_curve(args.curve_b), args.coverage
    )
    return {
        "strategy_a": args.label_a or Path(args.curve_a).stem,
        "strategy_b": args.label_b or Path(args.curve_b).stem,
        "coverage_target": args.coverage,
        "clicks_a": _finite(report["clicks_a"]),
        "clicks_b": _finite(report["clicks_b"]),
        "factor": _finite(report["ratio"]),
    }


def cmd_export(args) -> dict:
    dump = json.loads(Path(args.session_dump).read_text())
    if "labels" not in dump:
        raise ValueError("session dump has no 'labels' array")
    labels = np.asarray(dump["labels"], dtype=np.int64)
    manifest = load_manifest(args.manifest)
    segments = rows_to_segments(labels, manifest, dump.get("label_names"))
    doc = havana_export(segments) if args.format == "havana" else via3_export(segments, manifest)
    Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return {"out": args.out, "format": args.format, "n_segments": len(segments)}


def cmd_serve(args) -> None:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(data_root=args.data_root), host=args.host, port=args.port)
    return None


def build_parser() -> Parser:
    parser = Parser(prog="annoscale", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth", help="generate a synthetic labelled dataset")
    p.add_argument("--dist", help="class-distribution JSON (default: background-heavy preset)")
    p.add_argument("--n", type=int, required=True, help="number of feature rows")
    p.add_argument("--classes", type=int, required=True, help="number of classes incl. background")
    p.add_argument("--sigma", type=float, required=True, help="per-coordinate noise stddev")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-features", required=True)
    p.add_argument("--out-manifest", required=True)
    p.add_argument("--out-labels", required=True)
    p.add_argument("--rows-per-video", type=int, default=1000)
    p.add_argument("--stride-sec", type=float, default=0.1333)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--segment-rows", type=int, default=None, help="mean truth segment length in rows")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("hierarchy", help="build and cache a landmark hierarchy")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scales", type=int, default=3, help="total scale count incl. the data scale")
    p.add_argument("--k", type=int, default=30)
    p.add_argument("--perplexity", type=float, default=10.0)
    p.add_argument("--beta-walks", type=int, default=100)
    p.add_argument("--walk-length", type=int, default=15)
    p.add_argument("--threshold-factor", type=float, default=1.5)
    p.add_argument("--beta-aoi", type=int, default=50)
    p.add_argument("--max-steps", type=int, default=100)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--uniform", action="store_true", help="uniform-sampling baseline landmarks")
    p.add_argument("--sizes", help="comma-separated landmark counts per scale (with --uniform)")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_hierarchy)

    p = sub.add_parser("embed", help="embed one scale of a hierarchy to 2-D")
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--scale", type=int, required=True)
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-csv", required=True)
    p.set_defaults(handler=cmd_embed)

    p = sub.add_parser("simulate", help="run one annotation-effort strategy")
    p.add_argument("--hierarchy", help="hierarchy cache (all strategies except linear)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels", help="truth labels CSV (default: the manifest's labels_file)")
    p.add_argument("--strategy", required=True, choices=STRATEGIES)
    p.add_argument("--max-clicks", type=int, default=1_000_000)
    p.add_argument("--clusters", type=int, help="drill groups for kmeans-drill (default: #labels)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-curve", required=True)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("compare", help="click-effort ratio of two curves at a coverage target")
    p.add_argument("--curve-a", required=True)
    p.add_argument("--curve-b", required=True)
    p.add_argument("--coverage", type=float, default=0.95)
    p.add_argument("--label-a")
    p.add_argument("--label-b")
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("export", help="convert a session dump into an annotation file")
    p.add_argument("--session-dump", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--format", required=True, choices=list(EXPORT_FORMATS))
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_export)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--data-root", help="base directory for relative manifest paths")
    p.set_defaults(handler=cmd_serve)

    return parser


def _print_error(code: str, message: str) -> None:
    line = json.dumps({"code": code, "message": " ".join(str(message).split())}, sort_keys=True)
    print(line, file=sys.stderr)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required (see --help)")
        result = args.handler(args)
    except UsageError as exc:
        _print_error("usage_error", str(exc))
        return 1
    except Exception as exc:
        _print_error("runtime_error", f"{type(exc).__name__}: {exc}")
        return 2
    if result is not None:
        print(json.dumps(result, sort_keys=True))
    return 0


def main() -> int:
    return run()


if __name__ == "__main__":
    raise SystemExit(main())
