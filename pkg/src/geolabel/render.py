"""Point-based semantic rendering of a labeled cloud into a camera.

Four stages run in sequence: Z-buffered projection, depth-aware occlusion
filtering, back-to-front splatting, and a two-pass pixel kNN fill. Every
stage reads a snapshot of its input and breaks ties by index order, so the
output is bit-identical regardless of scheduling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.spatial import cKDTree

from .errors import NoLabeledPixels, NonConvergence
from .geometry import CameraModel, PoseSE3, project_points, undistort_normalized
from .lift import UNLABELED, SemanticPointCloud

logger = logging.getLogger(__name__)

STAGES = ("proj", "filt", "dense", "final")


@dataclass
class FrameLabelState:
    """Per-view label raster with its depth buffer.

    ``depths`` is ``inf`` wherever ``labels`` is 0.
    """

    labels: np.ndarray
    depths: np.ndarray
    stage: str = "proj"

    def __post_init__(self):
        if self.labels.shape != self.depths.shape:
            raise ValueError("labels and depths must share a shape")
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")

    @classmethod
    def empty(cls, cam: CameraModel, stage: str = "proj") -> "FrameLabelState":
        return cls(np.zeros(cam.shape, np.uint8), np.full(cam.shape, np.inf), stage)

    @property
    def labeled(self) -> np.ndarray:
        return self.labels != UNLABELED

    def with_stage(self, stage: str) -> "FrameLabelState":
        return FrameLabelState(self.labels, self.depths, stage)


@dataclass(frozen=True)
class RenderConfig:
    occlusion_tau: float = 0.2
    occlusion_kernel: int = 9
    splat_radius: int = 3
    knn_pass1_k: int = 5
    knn_pass2_k: int = 15
    enable_occlusion: bool = True
    enable_splat: bool = True
    enable_depth_guided: bool = True

    def __post_init__(self):
        if not self.occlusion_tau > 0:
            raise ValueError("occlusion_tau must be positive")
        if self.occlusion_kernel < 3 or self.occlusion_kernel % 2 == 0:
            raise ValueError("occlusion_kernel must be odd and >= 3")
        if self.splat_radius < 0:
            raise ValueError("splat_radius must be >= 0")
        if self.knn_pass1_k < 1 or self.knn_pass2_k < 1:
            raise ValueError("kNN neighbourhood sizes must be >= 1")

    @classmethod
    def for_modality(cls, modality: str, **overrides) -> "RenderConfig":
        try:
            base = MODALITY_PRESETS[modality]
        except KeyError:
            raise ValueError(f"unknown modality {modality!r}; expected one of {sorted(MODALITY_PRESETS)}")
        return replace(base, **overrides)

    def ablation(self, variant: str) -> "RenderConfig":
        """Stage toggles: A drops occlusion filtering, B splatting, C the kNN fill, D keeps all."""
        toggles = {
            "A": dict(enable_occlusion=False, enable_splat=True, enable_depth_guided=True),
            "B": dict(enable_occlusion=True, enable_splat=False, enable_depth_guided=True),
            "C": dict(enable_occlusion=True, enable_splat=True, enable_depth_guided=False),
            "D": dict(enable_occlusion=True, enable_splat=True, enable_depth_guided=True),
        }
        return replace(self, **toggles[variant.upper()])


MODALITY_PRESETS = {
    "rgb": RenderConfig(occlusion_tau=0.2, occlusion_kernel=9, splat_radius=3, knn_pass1_k=5, knn_pass2_k=15),
    "thermal": RenderConfig(occlusion_tau=0.2, occlusion_kernel=5, splat_radius=1, knn_pass1_k=5, knn_pass2_k=14),
}


def valid_radius(cam: CameraModel) -> float:
    """Largest undistorted normalized radius for which projection is trusted.

    Without this guard a polynomial distortion model folds far out-of-view
    points back into the frame.
    """
    return _valid_radius(cam)


@lru_cache(maxsize=64)
def _valid_radius(cam: CameraModel) -> float:
    if cam.distortion.is_zero:
        return np.inf
    w, h = cam.width, cam.height
    t = np.linspace(0.0, 1.0, 64)
    border = np.concatenate(
        [
            np.stack([t * (w - 1), np.zeros_like(t)], 1),
            np.stack([t * (w - 1), np.full_like(t, h - 1)], 1),
            np.stack([np.zeros_like(t), t * (h - 1)], 1),
            np.stack([np.full_like(t, w - 1), t * (h - 1)], 1),
        ]
    )
    # one pixel beyond the frame on every side
    border = border + np.sign(border - [cam.cx, cam.cy]) * 1.0
    fold = _fold_radius(cam.distortion)
    try:
        xy = undistort_normalized(cam.pixel_to_normalized(border), cam.distortion)
    except NonConvergence:
        # the border lies beyond the fold, so the fold itself bounds the valid disc
        return fold
    return float(min(np.linalg.norm(xy, axis=1).max() * 1.05, fold))


def _fold_radius(d) -> float:
    """First radius where the radial map ``r * (1 + k1 r^2 + k2 r^4 + k3 r^6)`` stops increasing."""
    r = np.linspace(0.0, 20.0, 200_001)
    r2 = r * r
    slope = 1 + 3 * d.k1 * r2 + 5 * d.k2 * r2**2 + 7 * d.k3 * r2**3
    bad = np.nonzero(slope <= 0)[0]
    return float(r[bad[0]]) if len(bad) else np.inf


def pixel_indices(uv: np.ndarray, depth: np.ndarray, valid: np.ndarray, cam: CameraModel):
    """Integer pixel ``(row, col)`` of each projection that lands inside the frame.

    Returns ``(index_of_point, row, col)`` for the accepted points.
    """
    idx = np.nonzero(valid)[0]
    u = np.rint(uv[idx, 0])
    v = np.rint(uv[idx, 1])
    ok = (u >= 0) & (u <= cam.width - 1) & (v >= 0) & (v <= cam.height - 1)
    return idx[ok], v[ok].astype(np.int64), u[ok].astype(np.int64)


def project_zbuffer(cloud: SemanticPointCloud, pose: PoseSE3, cam: CameraModel) -> FrameLabelState:
    """Project every point with distortion and keep the nearest per pixel.

    Depth ties go to the lower point index.
    """
    state = FrameLabelState.empty(cam, "proj")
    if len(cloud) == 0:
        return state
    uv, depth, valid = project_points(cloud.points, pose, cam, apply_distortion=True)
    rmax = valid_radius(cam)
    if np.isfinite(rmax):
        xc = pose.apply(cloud.points)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.hypot(xc[:, 0], xc[:, 1]) / xc[:, 2]
        valid &= r <= rmax
    idx, row, col = pixel_indices(uv, depth, valid, cam)
    if len(idx) == 0:
        return state
    lin = row * cam.width + col
    order = np.lexsort((idx, depth[idx], lin))
    lin_sorted = lin[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = lin_sorted[1:] != lin_sorted[:-1]
    winners = idx[order[first]]
    pix = lin_sorted[first]
    state.labels.ravel()[pix] = cloud.labels[winners]
    state.depths.ravel()[pix] = depth[winners]
    # an unlabeled cloud point occupies no pixel
    state.depths[state.labels == UNLABELED] = np.inf
    return state


def _shift_slices(dy: int, dx: int, h: int, w: int):
    """Slices ``(center, neighbour)`` such that ``neighbour = center + (dy, dx)``, clipped."""
    cy = slice(max(0, -dy), h - max(0, dy))
    cx = slice(max(0, -dx), w - max(0, dx))
    ny = slice(max(0, dy), h - max(0, -dy))
    nx = slice(max(0, dx), w - max(0, -dx))
    return (cy, cx), (ny, nx)


def occlusion_filter(state: FrameLabelState, tau: float = 0.2, kernel: int = 9) -> FrameLabelState:
    """Zero labels that a nearer, differently-labeled neighbour in a kernel x kernel window
    undercuts by more than ``tau`` metres. Decisions read the input only; borders are clipped.
    """
    L, D = state.labels, state.depths
    h, w = L.shape
    half = kernel // 2
    remove = np.zeros(L.shape, dtype=bool)
    threshold = D - tau
    for dy in range(-half, half + 1):
        for dx in range(-half, half + 1):
            if dy == 0 and dx == 0:
                continue
            c, n = _shift_slices(dy, dx, h, w)
            Ln = L[n]
            remove[c] |= (Ln != UNLABELED) & (Ln != L[c]) & (D[n] < threshold[c])
    remove &= L != UNLABELED
    labels = np.where(remove, np.uint8(UNLABELED), L)
    depths = np.where(remove, np.inf, D)
    return FrameLabelState(labels, depths, "filt")


def disc_offsets(radius: int) -> list[tuple[int, int]]:
    r = int(radius)
    return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dy * dy + dx * dx <= r * r]


def splat_densify(state: FrameLabelState, radius: int = 3) -> FrameLabelState:
    """Paint each labeled pixel onto a disc, far to near, nearer splats overwriting.

    Paint order is decreasing depth, ties in scanline order; each output pixel
    takes label and depth from the last splat that covers it.
    """
    L, D = state.labels, state.depths
    h, w = L.shape
    lin = np.flatnonzero(L != UNLABELED)
    if radius == 0 or len(lin) == 0:
        return FrameLabelState(L.copy(), D.copy(), "dense")
    paint = lin[np.lexsort((lin, -D.ravel()[lin]))]
    rank = np.full(h * w, -1, dtype=np.int64)
    rank[paint] = np.arange(len(paint))
    rank = rank.reshape(h, w)
    last = np.full((h, w), -1, dtype=np.int64)
    for dy, dx in disc_offsets(radius):
        # pixel p is covered by the source at p - (dy, dx)
        c, n = _shift_slices(-dy, -dx, h, w)
        np.maximum(last[c], rank[n], out=last[c])
    covered = last >= 0
    src = paint[last[covered]]
    labels = np.zeros_like(L)
    depths = np.full(D.shape, np.inf)
    labels[covered] = L.ravel()[src]
    depths[covered] = D.ravel()[src]
    return FrameLabelState(labels, depths, "dense")


def _k_nearest_pixels(lab_lin: np.ndarray, query_lin: np.ndarray, w: int, npix: int, k: int) -> np.ndarray:
    """Exact k nearest labeled pixels per query, ordered by (distance, scanline index).

    Returns (Q, k) indices into ``lab_lin``.
    """
    lab_xy = np.stack([lab_lin % w, lab_lin // w], axis=1)
    q_xy = np.stack([query_lin % w, query_lin // w], axis=1)
    tree = cKDTree(lab_xy)
    n_lab = len(lab_lin)
    k = min(k, n_lab)
    kq = min(k + 8, n_lab)
    _, cand = tree.query(q_xy, k=kq)
    cand = cand.reshape(len(query_lin), kq)

    def ordered(cand_idx, q):
        d2 = ((lab_xy[cand_idx] - q_xy[q][..., None, :]) ** 2).sum(-1)
        key = d2 * np.int64(npix) + lab_lin[cand_idx]
        order = np.argsort(key, axis=-1, kind="stable")
        return np.take_along_axis(cand_idx, order, -1), np.take_along_axis(d2, order, -1)

    cand, d2 = ordered(cand, np.arange(len(query_lin)))
    out = cand[:, :k].copy()
    if kq < n_lab:
        # tie group at the k-th distance may continue past the retrieved set
        incomplete = np.nonzero(d2[:, k - 1] == d2[:, kq - 1])[0]
        if len(incomplete):
            radii = np.sqrt(d2[incomplete, k - 1]) + 1e-6
            balls = tree.query_ball_point(q_xy[incomplete], radii)
            for row, q, ball in zip(range(len(incomplete)), incomplete, balls):
                ball = np.asarray(ball, dtype=np.int64)
                c, _ = ordered(ball[None], np.array([q]))
                out[q] = c[0, :k]
    return out


def depth_guided_fill(state: FrameLabelState, k: int = 5) -> FrameLabelState:
    """Give every unlabeled pixel the label and depth of the nearest-to-camera
    pixel among its k nearest labeled pixels (image-space distance)."""
    L, D = state.labels, state.depths
    h, w = L.shape
    lab_lin = np.flatnonzero(L != UNLABELED)
    if len(lab_lin) == 0:
        raise NoLabeledPixels("depth-guided fill needs at least one labeled pixel")
    holes = np.flatnonzero(L == UNLABELED)
    labels, depths = L.copy(), D.copy()
    if len(holes):
        nn = _k_nearest_pixels(lab_lin, holes, w, h * w, k)
        nn_depth = D.ravel()[lab_lin[nn]]
        pick = lab_lin[nn[np.arange(len(holes)), np.argmin(nn_depth, axis=1)]]
        labels.ravel()[holes] = L.ravel()[pick]
        depths.ravel()[holes] = D.ravel()[pick]
    return FrameLabelState(labels, depths, "dense")


@lru_cache(maxsize=32)
def _stencil(radius: int) -> np.ndarray:
    r = radius
    offs = [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dy * dy + dx * dx <= r * r]
    # nearest first; equal distance in scanline order of the neighbour
    offs.sort(key=lambda o: (o[0] * o[0] + o[1] * o[1], o[0], o[1]))
    return np.array(offs, dtype=np.int64)


def _stencil_radius(k: int) -> int:
    """Smallest radius whose quarter disc (a corner pixel's view) holds k pixels."""
    r = 0
    while True:
        quarter = sum(1 for dy in range(r + 1) for dx in range(r + 1) if dy * dy + dx * dx <= r * r)
        if quarter >= k:
            return r
        r += 1


def knn_smooth(state: FrameLabelState, k: int = 15) -> FrameLabelState:
    """Majority of the k nearest pixels (self included) for every pixel.

    Requires a fully labeled map. Majority ties keep the current label.
    """
    L = state.labels
    h, w = L.shape
    if np.any(L == UNLABELED):
        raise ValueError("knn_smooth expects a fully labeled map")
    k = min(k, h * w)
    radius = _stencil_radius(k)
    while True:
        nb = np.zeros((h, w, k), dtype=L.dtype)
        taken = np.zeros((h, w), dtype=np.int64)
        for dy, dx in _stencil(radius):
            c, n = _shift_slices(int(dy), int(dx), h, w)
            t = taken[c]
            m = t < k
            if not m.any():
                continue
            ys, xs = np.nonzero(m)
            ys = ys + c[0].start
            xs = xs + c[1].start
            nb[ys, xs, t[m]] = L[n][m]
            taken[ys, xs] += 1
        if taken.min() >= k:
            break
        radius += 1
    classes = np.unique(L)
    best = np.zeros((h, w), dtype=np.int64)
    winner = np.zeros((h, w), dtype=L.dtype)
    for c in classes:
        cnt = np.count_nonzero(nb == c, axis=2)
        better = cnt > best
        winner[better] = c
        best[better] = cnt[better]
    cur_count = np.count_nonzero(nb == L[..., None], axis=2)
    labels = np.where(cur_count == best, L, winner)
    return FrameLabelState(labels, state.depths.copy(), "final")


def render_view(cloud: SemanticPointCloud, pose: PoseSE3, cam: CameraModel,
                cfg: RenderConfig = None) -> FrameLabelState:
    """Render a dense label map for one camera, honouring the stage toggles."""
    cfg = cfg or RenderConfig()
    state = project_zbuffer(cloud, pose, cam)
    if cfg.enable_occlusion:
        state = occlusion_filter(state, cfg.occlusion_tau, cfg.occlusion_kernel)
    if cfg.enable_splat:
        state = splat_densify(state, cfg.splat_radius)
    if cfg.enable_depth_guided and state.labeled.any():
        state = depth_guided_fill(state, cfg.knn_pass1_k)
        state = knn_smooth(state, cfg.knn_pass2_k)
    return state.with_stage("final")
