"""RGB-thermal registration through 3D alignment and lens-distortion transfer.

``T_reg`` always maps thermal-world coordinates into RGB-world coordinates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateBBox, DegenerateGeometry, EmptyInput, NoCorrespondences, NoVisiblePoints
from .geometry import CameraModel, PoseSE3, distort_normalized, project_points, undistort_normalized

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 100
    convergence_tol: float = 1e-6
    max_correspondence_dist: float = 2.0
    subsample_voxel: float = 0.5
    initial_guess: PoseSE3 = field(default_factory=PoseSE3.identity)

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be positive")
        if not self.max_correspondence_dist > 0:
            raise ValueError("max_correspondence_dist must be positive")
        if self.subsample_voxel < 0:
            raise ValueError("subsample_voxel must be >= 0")


@dataclass(frozen=True)
class IcpResult:
    transform: PoseSE3
    rmse: float
    iterations: int
    inlier_fraction: float
    rmse_history: tuple = ()


@dataclass(frozen=True)
class SupportBBox:
    min_x: float
    min_y: float
    max_x: float
    max_y: float

    def __post_init__(self):
        if not (self.min_x < self.max_x and self.min_y < self.max_y):
            raise DegenerateBBox(f"bounding box has no area: {self}")

    @property
    def corners(self) -> np.ndarray:
        return np.array(
            [[self.min_x, self.min_y], [self.max_x, self.min_y], [self.max_x, self.max_y], [self.min_x, self.max_y]]
        )


def voxel_subsample(points: np.ndarray, voxel: float) -> np.ndarray:
    """Keep the lowest-index point of every occupied voxel (order preserved)."""
    if voxel <= 0 or len(points) == 0:
        return points
    keys = np.floor(points / voxel).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return points[np.sort(first)]


def _check_spread(points: np.ndarray, what: str) -> None:
    if len(points) < 3:
        raise DegenerateGeometry(f"{what}: need at least 3 points, got {len(points)}")
    s = np.linalg.svd(points - points.mean(axis=0), compute_uv=False)
    if s[0] == 0 or s[1] <= 1e-9 * s[0]:
        raise DegenerateGeometry(f"{what}: points are coincident or collinear")


def rigid_fit(src: np.ndarray, dst: np.ndarray) -> PoseSE3:
    """Least-squares rotation and translation with ``dst ~ R @ src + t`` (no scale)."""
    _check_spread(src, "rigid fit")
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    # re-orthonormalize against round-off before validation
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    return PoseSE3(R, cd - R @ cs)


def icp_align(source: np.ndarray, target: np.ndarray, params: IcpParams = None) -> IcpResult:
    """Point-to-point ICP; the returned transform maps ``source`` onto ``target``.

    Each iteration matches every source point to its nearest target point
    within ``max_correspondence_dist`` and refits the rigid transform in closed
    form. Iteration stops when the relative RMSE change drops below
    ``convergence_tol``, when RMSE would increase (that step is rejected), or
    after ``max_iterations``.
    """
    params = params or IcpParams()
    source = np.asarray(source, dtype=float).reshape(-1, 3)
    target = np.asarray(target, dtype=float).reshape(-1, 3)
    if len(source) == 0 or len(target) == 0:
        raise EmptyInput("ICP needs non-empty source and target clouds")
    src = voxel_subsample(source, params.subsample_voxel)
    _check_spread(src, "ICP source")
    tree = cKDTree(target)
    gate = params.max_correspondence_dist

    def match(T: PoseSE3):
        d, j = tree.query(T.apply(src), distance_upper_bound=gate)
        return d, j, np.isfinite(d)

    T = params.initial_guess
    d, j, inl = match(T)
    if not inl.any():
        raise NoCorrespondences(f"no source point within {gate} m of the target")
    rmse = float(np.sqrt(np.mean(d[inl] ** 2)))
    history = [rmse]
    iterations = 0
    for iterations in range(1, params.max_iterations + 1):
        if rmse < 1e-12:
            break
        try:
            T_new = rigid_fit(src[inl], target[j[inl]])
        except DegenerateGeometry:
            break
        d_new, j_new, inl_new = match(T_new)
        if not inl_new.any():
            break
        rmse_new = float(np.sqrt(np.mean(d_new[inl_new] ** 2)))
        if rmse_new > rmse:
            break
        change = (rmse - rmse_new) / rmse
        T, d, j, inl, rmse = T_new, d_new, j_new, inl_new, rmse_new
        history.append(rmse)
        if change < params.convergence_tol:
            break
    logger.debug("ICP stopped after %d iterations, rmse %.4g m", iterations, rmse)
    return IcpResult(T, rmse, iterations, float(inl.mean()), tuple(history))


def register_poses(t_reg: PoseSE3, thermal_poses: Sequence[PoseSE3]) -> list[PoseSE3]:
    """World-to-camera thermal poses expressed against the RGB world.

    A point in RGB-world coordinates is first carried back into the thermal
    world by ``t_reg^-1`` and then through the refined thermal pose.
    """
    back = t_reg.inverse()
    return [pose @ back for pose in thermal_poses]


def project_undistorted(points: np.ndarray, pose: PoseSE3, cam: CameraModel):
    """Pinhole projection ignoring lens distortion (the common undistorted domain)."""
    return project_points(points, pose, cam, apply_distortion=False)


def visible_points(points: np.ndarray, pose: PoseSE3, cam: CameraModel) -> np.ndarray:
    """Indices of points whose undistorted projection lies in ``[0, W) x [0, H)`` in front
    of the camera. No occlusion test."""
    uv, depth, valid = project_undistorted(points, pose, cam)
    with np.errstate(invalid="ignore"):
        inside = valid & (uv[:, 0] >= 0) & (uv[:, 0] < cam.width) & (uv[:, 1] >= 0) & (uv[:, 1] < cam.height)
    return np.nonzero(inside)[0]


def compute_support_bbox(
    points: np.ndarray,
    thermal_pose_reg: PoseSE3,
    thermal_cam: CameraModel,
    rgb_pose: PoseSE3,
    rgb_cam: CameraModel,
) -> SupportBBox:
    """Extent, in undistorted RGB pixels, of the points the registered thermal camera sees.

    A zero-extent side is widened by one pixel in each direction.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    idx = visible_points(points, thermal_pose_reg, thermal_cam)
    if len(idx) == 0:
        raise NoVisiblePoints("no cloud point is visible in the thermal camera")
    uv, _, valid = project_undistorted(points[idx], rgb_pose, rgb_cam)
    uv = uv[valid]
    if len(uv) == 0:
        raise NoVisiblePoints("thermal-visible points all lie behind the RGB camera")
    lo, hi = uv.min(axis=0), uv.max(axis=0)
    for a in range(2):
        if hi[a] - lo[a] <= 0:
            lo[a] -= 1.0
            hi[a] += 1.0
    return SupportBBox(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def _thermal_warp(uv_rgb_undist: np.ndarray, rgb_cam: CameraModel, thermal_cam: CameraModel) -> np.ndarray:
    n = rgb_cam.pixel_to_normalized(uv_rgb_undist)
    return thermal_cam.normalized_to_pixel(distort_normalized(n, thermal_cam.distortion))


def transfer_source_coords(rgb_cam: CameraModel, thermal_cam: CameraModel, bbox: SupportBBox) -> np.ndarray:
    """Source pixel in the distorted RGB image for every thermal output pixel, (H, W, 2)."""
    hull = _thermal_warp(bbox.corners, rgb_cam, thermal_cam)
    (hx0, hy0), (hx1, hy1) = hull.min(axis=0), hull.max(axis=0)
    if not (np.isfinite(hull).all() and hx1 > hx0 and hy1 > hy0):
        raise DegenerateBBox("warped support box has no area")
    w, h = thermal_cam.width, thermal_cam.height
    xs = hx0 + np.arange(w) * ((hx1 - hx0) / w)
    ys = hy0 + np.arange(h) * ((hy1 - hy0) / h)
    q = np.stack(np.meshgrid(xs, ys), axis=-1)
    n = undistort_normalized(thermal_cam.pixel_to_normalized(q), thermal_cam.distortion)
    return rgb_cam.normalized_to_pixel(distort_normalized(n, rgb_cam.distortion))


def sample_image(image: np.ndarray, src: np.ndarray, sampling: str = "bilinear"):
    """Sample ``image`` at subpixel ``src`` (…, 2); returns (values, valid mask).

    A sample is valid when it falls inside ``[-0.5, W - 0.5) x [-0.5, H - 0.5)``.
    Invalid samples are zero.
    """
    if sampling not in ("bilinear", "nearest"):
        raise ValueError(f"sampling must be 'bilinear' or 'nearest', got {sampling!r}")
    image = np.asarray(image)
    h, w = image.shape[:2]
    x, y = src[..., 0], src[..., 1]
    valid = np.isfinite(x) & np.isfinite(y) & (x >= -0.5) & (x < w - 0.5) & (y >= -0.5) & (y < h - 0.5)
    xc = np.where(valid, x, 0.0)
    yc = np.where(valid, y, 0.0)
    extra = image.shape[2:]
    if sampling == "nearest":
        xi = np.clip(np.rint(xc).astype(np.int64), 0, w - 1)
        yi = np.clip(np.rint(yc).astype(np.int64), 0, h - 1)
        out = image[yi, xi]
    else:
        x0 = np.floor(xc)
        y0 = np.floor(yc)
        fx = (xc - x0).reshape(xc.shape + (1,) * len(extra))
        fy = (yc - y0).reshape(yc.shape + (1,) * len(extra))
        x0 = x0.astype(np.int64)
        y0 = y0.astype(np.int64)
        xa, xb = np.clip(x0, 0, w - 1), np.clip(x0 + 1, 0, w - 1)
        ya, yb = np.clip(y0, 0, h - 1), np.clip(y0 + 1, 0, h - 1)
        img = image.astype(float)
        top = img[ya, xa] * (1 - fx) + img[ya, xb] * fx
        bot = img[yb, xa] * (1 - fx) + img[yb, xb] * fx
        out = top * (1 - fy) + bot * fy
        if np.issubdtype(image.dtype, np.integer):
            info = np.iinfo(image.dtype)
            out = np.clip(np.rint(out), info.min, info.max)
        out = out.astype(image.dtype)
    out = np.where(valid.reshape(valid.shape + (1,) * len(extra)), out, 0).astype(image.dtype)
    return out, valid


def distortion_transfer(
    rgb_image: np.ndarray,
    rgb_cam: CameraModel,
    thermal_cam: CameraModel,
    bbox: SupportBBox,
    sampling: str = "bilinear",
):
    """Resample an RGB raster into the thermal camera's distorted image space.

    Returns the registered raster at thermal resolution and an 8-bit validity
    mask (255 where the source sample lies inside the RGB frame).
    """
    rgb_image = np.asarray(rgb_image)
    if rgb_image.shape[:2] != rgb_cam.shape:
        raise ValueError(f"image shape {rgb_image.shape[:2]} does not match RGB camera {rgb_cam.shape}")
    src = transfer_source_coords(rgb_cam, thermal_cam, bbox)
    out, valid = sample_image(rgb_image, src, sampling)
    return out, np.where(valid, 255, 0).astype(np.uint8)
