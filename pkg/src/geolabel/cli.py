"""Command-line entry point: ``geolabel <subcommand> ...``.

Failures exit nonzero and print one JSON line ``{"error": ..., "message": ...}``
to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import PipelineConfig

logger = logging.getLogger("geolabel")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="pipeline config file (sectioned key = value)")
    p.add_argument("--workers", type=int, help="thread count for per-frame work")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _render_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("rendering")
    g.add_argument("--modality", choices=["rgb", "thermal"], help="preset for kernel sizes and radii")
    g.add_argument("--tau", type=float, help="occlusion depth margin in metres")
    g.add_argument("--kernel", type=int, help="occlusion window size (odd)")
    g.add_argument("--splat-radius", type=int, help="splat disc radius in pixels")
    g.add_argument("--k1", type=int, help="neighbours for the depth-guided fill")
    g.add_argument("--k2", type=int, help="neighbours for the smoothing pass")
    g.add_argument("--no-occlusion", action="store_true", help="ablation A: skip occlusion filtering")
    g.add_argument("--no-splat", action="store_true", help="ablation B: skip splatting")
    g.add_argument("--no-depth-fill", action="store_true", help="ablation C: skip the kNN fill")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="geolabel", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic scene with analytic ground truth")
    _common(p)
    p.add_argument("--preset", choices=["plane-boxes", "occluder", "two-plane"], default="plane-boxes")
    p.add_argument("--num-points", type=int, help="surface samples (default depends on the preset)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--observations", action="store_true", help="record 2D observations in images.txt")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("select-views", help="pick one annotation view per ground-grid cell")
    _common(p)
    p.add_argument("--model", type=Path, required=True, help="SfM text model directory")
    p.add_argument("--cell-size", type=float)
    p.add_argument("--out", type=Path, help="write the list here instead of stdout")

    p = sub.add_parser("lift", help="lift annotated label maps onto the model's points")
    _common(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True, help="directory of <stem>.label.png annotations")
    p.add_argument("--views", type=Path, help="view list from select-views")
    p.add_argument("--cloud", type=Path, help="denser cloud to label instead of the model's points")
    p.add_argument("--encoding", choices=["binary_le", "ascii"], default="binary_le")
    p.add_argument("--out", type=Path, required=True, help="output PLY")

    p = sub.add_parser("render", help="render dense label maps for every frame")
    _common(p)
    _render_flags(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--cloud", type=Path, required=True, help="labeled PLY")
    p.add_argument("--frames", nargs="*", help="image names or stems to render (default: all)")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("register", help="align a thermal cloud to the RGB cloud")
    _common(p)
    p.add_argument("--source", type=Path, required=True, help="thermal cloud PLY")
    p.add_argument("--target", type=Path, required=True, help="RGB cloud PLY")
    p.add_argument("--thermal-model", type=Path, help="thermal SfM model whose poses to register")
    p.add_argument("--registered-model", type=Path, help="output directory for the registered model")
    p.add_argument("--out", type=Path, required=True, help="4x4 transform sidecar")

    p = sub.add_parser("transfer", help="resample RGB rasters into registered thermal views")
    _common(p)
    p.add_argument("--rgb-model", type=Path, required=True)
    p.add_argument("--thermal-model", type=Path, required=True, help="registered thermal model")
    p.add_argument("--cloud", type=Path, required=True, help="RGB cloud PLY used for the support box")
    p.add_argument("--images", type=Path, required=True, help="directory of RGB rasters")
    p.add_argument("--suffix", default=".png", help="raster file suffix, e.g. .label.png")
    p.add_argument("--sampling", choices=["bilinear", "nearest"], default="bilinear")
    p.add_argument("--pairs", type=Path, help="file of 'rgb_name thermal_name' lines")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="score predicted label maps against ground truth")
    _common(p)
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--include-unlabeled", action="store_true", help="count pixels unlabeled in gt")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", type=Path, required=True)
    return parser


def load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    render = {}
    for key in ("tau", "kernel", "splat_radius", "k1", "k2"):
        render[key] = getattr(args, key, None)
    return cfg.with_overrides(
        modality=getattr(args, "modality", None),
        workers=args.workers,
        no_occlusion=getattr(args, "no_occlusion", False),
        no_splat=getattr(args, "no_splat", False),
        no_depth_fill=getattr(args, "no_depth_fill", False),
        **render,
    )


def _read_list(path: Path) -> list[str]:
    lines = path.read_text(encoding="utf-8").splitlines()
    return [ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]


# ---------------------------------------------------------------- commands

def cmd_synth(args, cfg):
    from . import synth
    from .io import write_label_png, write_ply, write_sfm_text
    from .pipeline import label_path, write_manifest

    kw = {"seed": args.seed, "observations": args.observations}
    if args.num_points:
        kw["num_points"] = args.num_points
    scene, gt = synth.PRESETS[args.preset](**kw)
    n = len(scene.cloud)
    out = args.out
    (out / "gt").mkdir(parents=True, exist_ok=True)
    write_sfm_text(scene, out / "model")
    write_ply(scene.cloud, out / "cloud.ply")
    written = [out / "cloud.ply"] + [out / "model" / f for f in ("cameras.txt", "images.txt", "points3D.txt")]
    for f in scene.frames:
        p = label_path(out / "gt", f.stem)
        write_label_png(gt[f.name][0], p)
        written.append(p)
    # class names for later --config use
    names = "".join(f"{c} = {name}\n" for c, name in enumerate(scene.catalog.names, start=1))
    (out / "scene.ini").write_text("[classes]\n" + names, encoding="utf-8")
    written.append(out / "scene.ini")
    write_manifest(out, "synth", cfg, {"preset": args.preset, "num_points": n, "seed": args.seed,
                                       "observations": args.observations}, written)
    print(json.dumps({"points": len(scene.cloud), "frames": len(scene.frames), "out": str(out)}))


def cmd_select_views(args, cfg):
    from .io import ingest_sfm_text
    from .pipeline import choose_views

    scene = ingest_sfm_text(args.model)
    idx, cov = choose_views(scene, args.cell_size or cfg.lift.cell_size)
    header = f"# coverage = {cov:.6f}, selected = {len(idx)}/{len(scene.frames)}"
    lines = [header] + [scene.frames[i].name for i in idx]
    text = "\n".join(lines) + "\n"
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_lift(args, cfg):
    from .io import ingest_sfm_text, read_ply, write_ply
    from .pipeline import label_dense_cloud, lift_scene, load_label_maps, write_manifest

    scene = ingest_sfm_text(args.model)
    names = _read_list(args.views) if args.views else None
    maps = load_label_maps(scene, args.labels, cfg, names)
    lifted = lift_scene(scene, maps, cfg)
    if args.cloud:
        lifted = label_dense_cloud(lifted, read_ply(args.cloud), cfg)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_ply(lifted, args.out, args.encoding)
    write_manifest(args.out.parent, "lift", cfg, {"model": args.model, "labels": args.labels,
                                                  "views": args.views, "cloud": args.cloud},
                   [args.out], name=f"{args.out.name}.manifest.json")
    print(json.dumps({"points": len(lifted), "annotated_views": len(maps),
                      "unlabeled_fraction": lifted.unlabeled_fraction}))


def cmd_render(args, cfg):
    from .io import ingest_sfm_text, read_ply
    from .pipeline import render_frames, write_label_maps, write_manifest

    scene = ingest_sfm_text(args.model)
    cloud = read_ply(args.cloud)
    frames = None
    if args.frames:
        by_stem = scene.frame_by_stem()
        missing = [n for n in args.frames if Path(n).stem not in by_stem]
        if missing:
            from .errors import EmptyInput

            raise EmptyInput(f"frames not in the model: {missing}")
        frames = [by_stem[Path(n).stem] for n in args.frames]
    results = render_frames(cloud, scene, cfg, frames)
    paths = write_label_maps(args.out, results)
    write_manifest(args.out, "render", cfg, {"model": args.model, "cloud": args.cloud}, paths)
    unl = sum(int((s.labels == 0).sum()) for _, s in results)
    print(json.dumps({"frames": len(results), "unlabeled_pixels": unl, "out": str(args.out)}))


def cmd_register(args, cfg):
    from .io import ingest_sfm_text, read_ply, write_sfm_text, write_transform
    from .pipeline import register_clouds, registered_scene, write_manifest

    res = register_clouds(read_ply(args.source), read_ply(args.target), cfg)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_transform(res.transform, args.out)
    outputs = [args.out]
    if args.thermal_model:
        if not args.registered_model:
            raise UsageError("--thermal-model needs --registered-model")
        reg = registered_scene(ingest_sfm_text(args.thermal_model), res.transform)
        write_sfm_text(reg, args.registered_model)
        logger.info("registered model written to %s", args.registered_model)
    write_manifest(args.out.parent, "register", cfg, {"source": args.source, "target": args.target,
                                                      "thermal_model": args.thermal_model},
                   outputs, name=f"{args.out.name}.manifest.json")
    print(json.dumps({"rmse": res.rmse, "iterations": res.iterations, "inlier_fraction": res.inlier_fraction}))


def cmd_transfer(args, cfg):
    from .io import ingest_sfm_text, read_ply
    from .pipeline import transfer_pairs, write_manifest

    pairs = None
    if args.pairs:
        pairs = []
        for line in _read_list(args.pairs):
            tok = line.split()
            if len(tok) != 2:
                raise UsageError(f"pairs line must hold two names: {line!r}")
            pairs.append((tok[0], tok[1]))
    paths = transfer_pairs(
        ingest_sfm_text(args.rgb_model), ingest_sfm_text(args.thermal_model), read_ply(args.cloud),
        args.images, args.out, cfg, args.suffix, args.sampling, pairs,
    )
    write_manifest(args.out, "transfer", cfg, {"rgb_model": args.rgb_model, "thermal_model": args.thermal_model,
                                               "cloud": args.cloud, "images": args.images,
                                               "sampling": args.sampling}, paths)
    print(json.dumps({"pairs": len(paths) // 2, "out": str(args.out)}))


def cmd_eval(args, cfg):
    from .metrics import text_report, write_metrics_csv
    from .pipeline import evaluate_dirs, write_manifest

    rows, total = evaluate_dirs(args.pred, args.gt, cfg, not args.include_unlabeled)
    args.out.mkdir(parents=True, exist_ok=True)
    names = list(cfg.class_names) or None
    report = text_report(total, names, title=f"{args.pred} vs {args.gt}")
    paths = [args.out / "metrics.csv", args.out / "report.txt"]
    write_metrics_csv(rows, paths[0])
    paths[1].write_text(report, encoding="utf-8")
    if not args.no_figures:
        from .plotting import plot_class_iou, plot_confusion

        paths.append(plot_confusion(total, args.out / "confusion.png", names))
        paths.append(plot_class_iou(total, args.out / "class_iou.png", names))
    write_manifest(args.out, "eval", cfg, {"pred": args.pred, "gt": args.gt,
                                           "include_unlabeled": args.include_unlabeled}, paths)
    sys.stdout.write(report)


COMMANDS = {
    "synth": cmd_synth,
    "select-views": cmd_select_views,
    "lift": cmd_lift,
    "render": cmd_render,
    "register": cmd_register,
    "transfer": cmd_transfer,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        COMMANDS[args.command](args, load_config(args))
    except UsageError as exc:
        _emit_error("UsageError", str(exc))
        return 2
    except Exception as exc:  # noqa: BLE001 - every failure becomes one diagnostic line
        _emit_error(type(exc).__name__, str(exc))
        return 1
    return 0


def _emit_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": " ".join(message.split())}) + "\n")


if __name__ == "__main__":
    sys.exit(main())
