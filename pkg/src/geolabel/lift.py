"""2D-to-3D label lifting: view selection, voting, completion and denoising."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInput, NoLabeledPoints, ResolutionMismatch

logger = logging.getLogger(__name__)

UNLABELED = 0
IDW_EPS = 1e-9


@dataclass
class SemanticPointCloud:
    points: np.ndarray
    labels: np.ndarray = None
    colors: Optional[np.ndarray] = None
    vote_tallies: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if self.labels is None:
            self.labels = np.zeros(len(self.points), dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
        if len(self.labels) != len(self.points):
            raise ValueError(f"{len(self.points)} points but {len(self.labels)} labels")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(self.colors) != len(self.points):
                raise ValueError("colors must have one row per point")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def unlabeled_fraction(self) -> float:
        return float(np.mean(self.labels == UNLABELED)) if len(self) else 0.0


@dataclass
class CorrespondenceSet:
    """Per-image 2D-3D correspondences.

    ``pixels[n]`` is a (K, 2) array of subpixel coordinates in image ``n`` and
    ``point_ids[n]`` the matching indices into the point cloud.
    """

    num_points: int
    pixels: list = field(default_factory=list)
    point_ids: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.pixels) != len(self.point_ids):
            raise ValueError("pixels and point_ids must have one entry per image")
        for n, (uv, pid) in enumerate(zip(self.pixels, self.point_ids)):
            uv = np.asarray(uv, dtype=float).reshape(-1, 2)
            pid = np.asarray(pid, dtype=np.int64).reshape(-1)
            if len(uv) != len(pid):
                raise ValueError(f"image {n}: {len(uv)} pixels but {len(pid)} point ids")
            if len(pid) and (pid.min() < 0 or pid.max() >= self.num_points):
                raise ValueError(f"image {n}: point index out of range")
            if not np.all(np.isfinite(uv)):
                raise ValueError(f"image {n}: non-finite pixel coordinates")
            self.pixels[n] = uv
            self.point_ids[n] = pid

    def __len__(self) -> int:
        return len(self.pixels)

    def __getitem__(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        return self.pixels[n], self.point_ids[n]


@dataclass
class ClassCatalog:
    """Semantic classes ``1..C``; ``priors[c - 1]`` is the frequency of class ``c``."""

    names: list
    priors: np.ndarray = None

    def __post_init__(self):
        if self.priors is None:
            self.priors = np.full(len(self.names), 1.0 / max(len(self.names), 1))
        self.priors = np.asarray(self.priors, dtype=float).reshape(-1)
        if len(self.priors) != len(self.names):
            raise ValueError("one prior per class required")
        if np.any(self.priors < 0) or self.priors.sum() > 1.0 + 1e-9:
            raise ValueError("priors must be non-negative and sum to at most 1")

    @property
    def num_classes(self) -> int:
        return len(self.names)

    @classmethod
    def from_label_maps(cls, label_maps: Iterable[np.ndarray], names: Sequence[str] = None,
                        num_classes: int = None) -> "ClassCatalog":
        """Estimate priors as pixel frequencies over labeled pixels."""
        counts = np.zeros(256, dtype=np.int64)
        for m in label_maps:
            counts += np.bincount(np.asarray(m, dtype=np.uint8).ravel(), minlength=256)
        if num_classes is None:
            num_classes = len(names) if names is not None else int(np.nonzero(counts)[0].max(initial=0))
        if names is None:
            names = [f"class_{c}" for c in range(1, num_classes + 1)]
        labeled = counts[1 : num_classes + 1]
        total = labeled.sum()
        priors = labeled / total if total else None
        return cls(list(names), priors)


def camera_ground_positions(centers: np.ndarray) -> np.ndarray:
    return np.asarray(centers, dtype=float)[:, :2]


def select_views(camera_positions: np.ndarray, cell_size: float = 25.0) -> list[int]:
    """Pick the image nearest each occupied ground-grid cell centre.

    Cells are ``floor(position / cell_size)``; a position exactly on a cell
    boundary belongs to the cell whose lower edge it sits on. Distance ties go
    to the lowest image index. Returns sorted indices.
    """
    pos = np.asarray(camera_positions, dtype=float).reshape(-1, 2)
    if len(pos) == 0:
        raise EmptyInput("no camera positions")
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    cells = np.floor(pos / cell_size).astype(np.int64)
    centers = (cells + 0.5) * cell_size
    dist = np.linalg.norm(pos - centers, axis=1)
    idx = np.arange(len(pos))
    order = np.lexsort((idx, dist, cells[:, 1], cells[:, 0]))
    sorted_cells = cells[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = np.any(sorted_cells[1:] != sorted_cells[:-1], axis=1)
    return sorted(int(i) for i in order[first])


def coverage(num_points: int, corrs: CorrespondenceSet, subset: Iterable[int]) -> float:
    """Fraction of cloud points observed by at least one image in ``subset``."""
    if num_points == 0:
        return 0.0
    seen = np.zeros(num_points, dtype=bool)
    for n in subset:
        if not 0 <= n < len(corrs):
            raise IndexError(f"image index {n} out of range")
        seen[corrs.point_ids[n]] = True
    return float(seen.mean())


def sample_labels(label_map: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Label at the nearest integer pixel of each subpixel coordinate, clamped."""
    h, w = label_map.shape
    u = np.clip(np.rint(uv[:, 0]).astype(np.int64), 0, w - 1)
    v = np.clip(np.rint(uv[:, 1]).astype(np.int64), 0, h - 1)
    return label_map[v, u]


def lift_labels(
    corrs: CorrespondenceSet,
    label_maps: Mapping[int, np.ndarray],
    num_classes: int,
    image_shapes: Mapping[int, tuple[int, int]] = None,
) -> np.ndarray:
    """Accumulate per-point class votes from annotated label maps.

    Args:
        corrs: correspondences for every image.
        label_maps: image index -> (H, W) class-id raster, only for annotated images.
        num_classes: C; the returned tally has C + 1 columns (column 0 unused).
        image_shapes: optional image index -> (H, W) the label maps must match.

    Returns:
        (M, C + 1) int32 vote counts.
    """
    width = num_classes + 1
    counts = np.zeros(corrs.num_points * width, dtype=np.int64)
    for n, lm in label_maps.items():
        lm = np.asarray(lm)
        if image_shapes is not None and tuple(lm.shape) != tuple(image_shapes[n]):
            raise ResolutionMismatch(
                f"label map for image {n} is {lm.shape}, camera is {tuple(image_shapes[n])}"
            )
        uv, pid = corrs[n]
        if not len(pid):
            continue
        lab = sample_labels(lm, uv).astype(np.int64)
        if lab.max(initial=0) > num_classes:
            raise ValueError(f"label map for image {n} contains class ids above {num_classes}")
        keep = lab != UNLABELED
        counts += np.bincount(pid[keep] * width + lab[keep], minlength=len(counts))
    return counts.reshape(corrs.num_points, width).astype(np.int32)


def _class_preference(catalog: ClassCatalog, tie_break: str) -> np.ndarray:
    """Rank per class id (index 0 unused); lower rank wins majority ties."""
    if tie_break not in ("rare", "common"):
        raise ValueError(f"tie_break must be 'rare' or 'common', got {tie_break!r}")
    ids = np.arange(1, catalog.num_classes + 1)
    prior = catalog.priors if tie_break == "rare" else -catalog.priors
    order = np.lexsort((ids, prior))
    rank = np.empty(catalog.num_classes + 1, dtype=np.int64)
    rank[0] = np.iinfo(np.int64).max
    rank[ids[order]] = np.arange(len(ids))
    return rank


def fuse_votes(tallies: np.ndarray, catalog: ClassCatalog, tie_break: str = "rare") -> np.ndarray:
    """Unweighted majority per point; ties resolved by class-frequency prior.

    With ``tie_break="rare"`` the tied class with the lowest prior wins,
    ``"common"`` picks the highest. Points without votes stay unlabeled.
    """
    tallies = np.asarray(tallies)
    if tallies.ndim != 2 or tallies.shape[1] != catalog.num_classes + 1:
        raise ValueError(f"tallies must be (M, {catalog.num_classes + 1})")
    votes = tallies[:, 1:]
    best = votes.max(axis=1, initial=0)
    rank = _class_preference(catalog, tie_break)[1:]
    tied = (votes == best[:, None]) & (best[:, None] > 0)
    key = np.where(tied, rank[None, :], np.iinfo(np.int64).max)
    labels = (np.argmin(key, axis=1) + 1).astype(np.uint8)
    labels[best == 0] = UNLABELED
    return labels


def _tree(points: np.ndarray) -> cKDTree:
    return cKDTree(points, balanced_tree=False, compact_nodes=False)


def complete_idw_knn(points: np.ndarray, labels: np.ndarray, k: int = 10) -> np.ndarray:
    """Fill unlabeled points by an inverse-distance-weighted vote of labeled neighbours.

    Weights are ``1 / (d + 1e-9)``; weight ties go to the lower class id.
    Labeled points are never changed.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    points = np.asarray(points, dtype=float)
    labels = np.asarray(labels, dtype=np.uint8)
    labeled = np.nonzero(labels != UNLABELED)[0]
    if len(labeled) == 0:
        raise NoLabeledPoints("cannot complete a cloud without labeled points")
    todo = np.nonzero(labels == UNLABELED)[0]
    out = labels.copy()
    if len(todo) == 0:
        return out
    k_eff = min(k, len(labeled))
    dist, nn = _tree(points[labeled]).query(points[todo], k=k_eff)
    dist = dist.reshape(len(todo), k_eff)
    nn_labels = labels[labeled][nn.reshape(len(todo), k_eff)].astype(np.int64)
    weights = 1.0 / (dist + IDW_EPS)
    ncls = int(labels.max()) + 1
    rows = np.repeat(np.arange(len(todo)), k_eff)
    score = np.bincount(rows * ncls + nn_labels.ravel(), weights=weights.ravel(),
                        minlength=len(todo) * ncls).reshape(len(todo), ncls)
    out[todo] = np.argmax(score, axis=1).astype(np.uint8)
    logger.debug("completed %d unlabeled points with k=%d", len(todo), k_eff)
    return out


def majority_keep_current(neighbor_labels: np.ndarray, current: np.ndarray, ncls: int) -> np.ndarray:
    """Row-wise majority over neighbour labels; ties keep ``current`` if it is tied.

    Ties not involving the current label go to the lowest class id. Label 0
    never votes.
    """
    n, k = neighbor_labels.shape
    rows = np.repeat(np.arange(n), k)
    counts = np.bincount(rows * ncls + neighbor_labels.ravel().astype(np.int64),
                         minlength=n * ncls).reshape(n, ncls)
    counts[:, UNLABELED] = 0
    best = counts.max(axis=1)
    winner = np.argmax(counts, axis=1)
    cur_count = counts[np.arange(n), current.astype(np.int64)]
    keep = (cur_count == best) | (best == 0)
    return np.where(keep, current, winner).astype(current.dtype)


def denoise_knn(points: np.ndarray, labels: np.ndarray, k: int = 10) -> np.ndarray:
    """Relabel each point to the majority of its k nearest neighbours (self included)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    points = np.asarray(points, dtype=float)
    labels = np.asarray(labels, dtype=np.uint8)
    if len(points) == 0:
        return labels.copy()
    k_eff = min(k, len(points))
    _, nn = _tree(points).query(points, k=k_eff)
    nn = nn.reshape(len(points), k_eff)
    return majority_keep_current(labels[nn], labels, int(labels.max()) + 1)


def lift_cloud(
    cloud: SemanticPointCloud,
    corrs: CorrespondenceSet,
    label_maps: Mapping[int, np.ndarray],
    catalog: ClassCatalog,
    *,
    k_complete: int = 10,
    k_denoise: int = 10,
    tie_break: str = "rare",
    image_shapes: Mapping[int, tuple[int, int]] = None,
) -> SemanticPointCloud:
    """Full 2D-to-3D stage: lift, fuse, complete and denoise."""
    tallies = lift_labels(corrs, label_maps, catalog.num_classes, image_shapes)
    labels = fuse_votes(tallies, catalog, tie_break)
    logger.info(
        "fused votes: %d/%d points labeled", int(np.count_nonzero(labels)), len(labels)
    )
    labels = complete_idw_knn(cloud.points, labels, k_complete)
    labels = denoise_knn(cloud.points, labels, k_denoise)
    return SemanticPointCloud(cloud.points, labels, cloud.colors, tallies)
