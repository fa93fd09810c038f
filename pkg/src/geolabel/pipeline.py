"""End-to-end orchestration over scene models and output directories.

Per-frame work runs on a thread pool. Results are collected in frame order
and each worker computes a pure function of its inputs, so the worker count
changes wall time only.
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .config import PipelineConfig
from .errors import EmptyInput, ResolutionMismatch
from .io import read_image, read_label_png, write_image, write_label_png
from .lift import (
    ClassCatalog,
    SemanticPointCloud,
    complete_idw_knn,
    coverage,
    denoise_knn,
    lift_cloud,
    select_views,
)
from .metrics import ConfusionMatrix, accumulate, fw_miou, pct, pixel_accuracy
from .register import IcpResult, compute_support_bbox, distortion_transfer, icp_align, register_poses
from .render import FrameLabelState, render_view
from .scene import Frame, SceneModel

logger = logging.getLogger(__name__)

LABEL_SUFFIX = ".label.png"
MASK_SUFFIX = ".mask.png"


def parallel_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """``[fn(x) for x in items]`` on up to ``workers`` threads, order preserved."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def label_path(directory, stem: str) -> Path:
    return Path(directory) / f"{stem}{LABEL_SUFFIX}"


def versions() -> dict:
    import PIL
    import scipy

    return {
        "geolabel": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pillow": PIL.__version__,
        "python": platform.python_version(),
    }


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, command: str, cfg: PipelineConfig, inputs: dict, outputs: Iterable,
                   name: str = "manifest.json") -> Path:
    """Write ``manifest.json`` beside the outputs.

    The manifest holds the config, its hash, library versions, the input
    arguments and a digest per output file. It has no timestamps or worker
    count, so it is byte-identical across reruns.
    """
    out_dir = Path(out_dir)
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "versions": versions(),
        "inputs": {k: str(v) for k, v in sorted(inputs.items())},
        "outputs": {str(Path(p).relative_to(out_dir)): file_digest(p) for p in sorted(outputs)},
    }
    path = out_dir / name
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------- 2D -> 3D

def choose_views(scene: SceneModel, cell_size: float) -> tuple[list[int], float]:
    """Grid-based view subset and the fraction of points it observes."""
    if not scene.frames:
        raise EmptyInput("scene has no frames")
    idx = select_views(scene.camera_centers()[:, :2], cell_size)
    return idx, coverage(len(scene.cloud), scene.correspondences(), idx)


def load_label_maps(scene: SceneModel, label_dir, cfg: PipelineConfig, names: Iterable[str] = None) -> dict:
    """Annotated label maps keyed by frame index.

    Frames without a ``<stem>.label.png`` in ``label_dir`` are skipped, as are
    frames not listed in ``names`` when that is given.
    """
    wanted = None if names is None else {Path(n).stem for n in names}
    maps = {}
    for n, f in enumerate(scene.frames):
        if wanted is not None and f.stem not in wanted:
            continue
        p = label_path(label_dir, f.stem)
        if not p.is_file():
            continue
        lab = cfg.apply_remap(read_label_png(p))
        if lab.shape != scene.camera_of(f).shape:
            raise ResolutionMismatch(f"{p}: {lab.shape} does not match camera {scene.camera_of(f).shape}")
        maps[n] = lab
    if not maps:
        raise EmptyInput(f"no annotated label maps found in {label_dir}")
    return maps


def build_catalog(label_maps: dict, cfg: PipelineConfig) -> ClassCatalog:
    top = max(int(m.max(initial=0)) for m in label_maps.values())
    n = max(len(cfg.class_names), top)
    names = list(cfg.class_names) + [f"class_{c}" for c in range(len(cfg.class_names) + 1, n + 1)]
    return ClassCatalog.from_label_maps(label_maps.values(), names, n)


def lift_scene(scene: SceneModel, label_maps: dict, cfg: PipelineConfig) -> SemanticPointCloud:
    catalog = build_catalog(label_maps, cfg)
    return lift_cloud(
        scene.cloud,
        scene.correspondences(),
        label_maps,
        catalog,
        k_complete=cfg.lift.k_complete,
        k_denoise=cfg.lift.k_denoise,
        tie_break=cfg.lift.tie_break,
        image_shapes=scene.image_shapes(),
    )


def label_dense_cloud(sparse: SemanticPointCloud, dense: SemanticPointCloud,
                      cfg: PipelineConfig) -> SemanticPointCloud:
    """Carry labels from a lifted sparse cloud to a denser one by the IDW vote, then denoise."""
    points = np.vstack([sparse.points, dense.points])
    labels = np.concatenate([sparse.labels, np.zeros(len(dense), dtype=np.uint8)])
    out = complete_idw_knn(points, labels, cfg.lift.k_complete)[len(sparse):]
    out = denoise_knn(dense.points, out, cfg.lift.k_denoise)
    return SemanticPointCloud(dense.points, out, dense.colors)


# ---------------------------------------------------------------- 3D -> 2D

def render_frames(cloud: SemanticPointCloud, scene: SceneModel, cfg: PipelineConfig,
                  frames: Sequence[Frame] = None) -> list[tuple[str, FrameLabelState]]:
    frames = list(scene.frames if frames is None else frames)
    rcfg = cfg.render_config()

    def one(f: Frame):
        return f.stem, render_view(cloud, f.pose, scene.camera_of(f), rcfg)

    return parallel_map(one, frames, cfg.workers)


def write_label_maps(out_dir, results: Sequence[tuple[str, FrameLabelState]]) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for stem, state in results:
        p = label_path(out_dir, stem)
        write_label_png(state.labels, p)
        paths.append(p)
    return paths


# ---------------------------------------------------------------- RGB-T

def register_clouds(thermal: SemanticPointCloud, rgb: SemanticPointCloud, cfg: PipelineConfig) -> IcpResult:
    res = icp_align(thermal.points, rgb.points, cfg.icp)
    logger.info("ICP: rmse %.4f m after %d iterations, inliers %.3f", res.rmse, res.iterations,
                res.inlier_fraction)
    return res


def registered_scene(thermal: SceneModel, t_reg) -> SceneModel:
    """Copy of ``thermal`` whose frame poses are expressed against the RGB world."""
    poses = register_poses(t_reg, [f.pose for f in thermal.frames])
    frames = [replace(f, pose=p) for f, p in zip(thermal.frames, poses)]
    cloud = SemanticPointCloud(t_reg.apply(thermal.cloud.points), thermal.cloud.labels, thermal.cloud.colors)
    return SceneModel(thermal.cameras, frames, cloud, thermal.point_ids, thermal.point_errors, thermal.catalog)


def pair_frames(rgb: SceneModel, thermal: SceneModel, pairs: Sequence[tuple[str, str]] = None):
    """Match RGB and thermal frames by identical stem, or by an explicit pair list."""
    by_rgb, by_th = rgb.frame_by_stem(), thermal.frame_by_stem()
    if pairs is None:
        pairs = [(s, s) for s in sorted(set(by_rgb) & set(by_th))]
    out = []
    for a, b in pairs:
        a, b = Path(a).stem, Path(b).stem
        if a not in by_rgb or b not in by_th:
            raise EmptyInput(f"pair ({a}, {b}) does not name frames of both models")
        out.append((by_rgb[a], by_th[b]))
    if not out:
        raise EmptyInput("no RGB/thermal frame pairs")
    return out


def transfer_pairs(rgb: SceneModel, thermal_registered: SceneModel, cloud: SemanticPointCloud,
                   image_dir, out_dir, cfg: PipelineConfig, suffix: str = ".png",
                   sampling: str = "bilinear", pairs=None) -> list[Path]:
    """Resample each RGB raster into its thermal partner's image space.

    Writes ``<thermal stem><suffix>`` and ``<thermal stem>.mask.png``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    matched = pair_frames(rgb, thermal_registered, pairs)

    def one(pair):
        fr, ft = pair
        rgb_cam, th_cam = rgb.camera_of(fr), thermal_registered.camera_of(ft)
        bbox = compute_support_bbox(cloud.points, ft.pose, th_cam, fr.pose, rgb_cam)
        image = read_image(Path(image_dir) / f"{fr.stem}{suffix}")
        return ft.stem, distortion_transfer(image, rgb_cam, th_cam, bbox, sampling)

    written = []
    for stem, (image, mask) in parallel_map(one, matched, cfg.workers):
        img_path, mask_path = out_dir / f"{stem}{suffix}", out_dir / f"{stem}{MASK_SUFFIX}"
        write_image(image, img_path)
        write_label_png(mask, mask_path)
        written += [img_path, mask_path]
    return written


# ---------------------------------------------------------------- evaluation

def evaluate_dirs(pred_dir, gt_dir, cfg: PipelineConfig, ignore_unlabeled_gt: bool = True):
    """Score every ``*.label.png`` present in both directories.

    Returns ``(rows, total)`` with one CSV row per frame plus a final ``ALL`` row.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    stems = sorted(p.name[: -len(LABEL_SUFFIX)] for p in gt_dir.glob(f"*{LABEL_SUFFIX}"))
    stems = [s for s in stems if label_path(pred_dir, s).is_file()]
    if not stems:
        raise EmptyInput(f"no label maps shared by {pred_dir} and {gt_dir}")

    def one(stem):
        pred = cfg.apply_remap(read_label_png(label_path(pred_dir, stem)))
        gt = cfg.apply_remap(read_label_png(label_path(gt_dir, stem)))
        return accumulate(pred, gt, ignore_unlabeled_gt, num_classes=255)

    mats = parallel_map(one, stems, cfg.workers)
    total = ConfusionMatrix.zeros(255)
    rows = []
    for stem, cm in zip(stems, mats):
        total = total + cm
        rows.append(_row(stem, cm))
    total = trim(total)
    rows.append(_row("ALL", total))
    return rows, total


def trim(cm: ConfusionMatrix) -> ConfusionMatrix:
    """Drop trailing classes that never occur in either axis."""
    used = np.nonzero(cm.counts.sum(axis=0) + cm.counts.sum(axis=1))[0]
    n = int(used.max(initial=0))
    return ConfusionMatrix(cm.counts[: n + 1, : n + 1].copy())


def _row(name: str, cm: ConfusionMatrix) -> dict:
    if cm.total == 0:
        return {"frame": name, "pixels": 0, "accuracy": "", "fw_miou": "", "unlabeled_pred": ""}
    return {
        "frame": name,
        "pixels": cm.total,
        "accuracy": pct(pixel_accuracy(cm)),
        "fw_miou": pct(fw_miou(cm)),
        "unlabeled_pred": pct(cm.counts[:, 0].sum() / cm.total),
    }
