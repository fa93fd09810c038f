"""Camera models, rigid transforms and projection math.

Pixel convention: pixel ``(i, j)`` is centred on the integer coordinate
``u = i, v = j``; a projected point belongs to pixel ``rint(u), rint(v)``.
Depth is always the camera-frame z coordinate, never the ray length.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import NonConvergence, ZeroQuaternion

ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class DistortionCoeffs:
    """Brown-Conrady radial (k1, k2, k3) and tangential (p1, p2) terms."""

    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError(f"distortion coefficients must be finite: {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.k1, self.k2, self.k3, self.p1, self.p2], dtype=float)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.as_array())


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    distortion: DistortionCoeffs = field(default_factory=DistortionCoeffs)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be at least 1x1, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} frame"
            )

    @property
    def shape(self) -> tuple[int, int]:
        """Raster shape ``(height, width)``."""
        return (self.height, self.width)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def pixel_to_normalized(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        return np.stack([(uv[..., 0] - self.cx) / self.fx, (uv[..., 1] - self.cy) / self.fy], axis=-1)

    def normalized_to_pixel(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return np.stack([xy[..., 0] * self.fx + self.cx, xy[..., 1] * self.fy + self.cy], axis=-1)

    def with_distortion(self, distortion: DistortionCoeffs) -> "CameraModel":
        return CameraModel(self.fx, self.fy, self.cx, self.cy, self.width, self.height, distortion)


@dataclass(frozen=True, eq=False)
class PoseSE3:
    """World-to-camera rigid transform ``x_cam = R @ x_world + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("pose must be finite")
        if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation is not a proper orthonormal matrix")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "PoseSE3":
        m = np.asarray(matrix, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got shape {m.shape}")
        if np.abs(m[3] - [0, 0, 0, 1]).max() > ORTHO_TOL:
            raise ValueError("last row of a rigid transform must be [0, 0, 0, 1]")
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.rotation.T @ self.translation

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def inverse(self) -> "PoseSE3":
        Rt = self.rotation.T
        return PoseSE3(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "PoseSE3") -> "PoseSE3":
        # (self @ other).apply(x) == self.apply(other.apply(x))
        return PoseSE3(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def allclose(self, other: "PoseSE3", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.matrix, other.matrix, rtol=0.0, atol=atol))

    def __repr__(self) -> str:
        return f"PoseSE3(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


class PixelDepth(NamedTuple):
    u: float
    v: float
    depth: float


def compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """Apply ``b`` first, then ``a``."""
    return a @ b


def invert(a: PoseSE3) -> PoseSE3:
    return a.inverse()


def rotation_about_axis(axis, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation matrix."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    skew = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    return np.eye(3) + np.sin(angle_rad) * skew + (1 - np.cos(angle_rad)) * skew @ skew


def rotation_angle_deg(R: np.ndarray) -> float:
    """Angle of a rotation matrix in degrees."""
    c = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))


def quaternion_to_rotation(qw: float, qx: float, qy: float, qz: float) -> np.ndarray:
    """Convert a (w, x, y, z) quaternion to a rotation matrix, normalizing first."""
    q = np.array([qw, qx, qy, qz], dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise ZeroQuaternion(f"cannot convert quaternion with norm {n}")
    w, x, y, z = q / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_to_quaternion(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`quaternion_to_rotation`, returns (w, x, y, z) with w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def look_at(center, target, up=(0.0, 0.0, 1.0)) -> PoseSE3:
    """World-to-camera pose for a camera at ``center`` looking at ``target``.

    Camera axes follow the usual vision convention: x right, y down, z forward.
    """
    center = np.asarray(center, dtype=float)
    forward = np.asarray(target, dtype=float) - center
    forward /= np.linalg.norm(forward)
    up = np.asarray(up, dtype=float)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        # looking straight along the up vector; pick world +y as the image-up hint
        right = np.cross(forward, [0.0, 1.0, 0.0])
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    return PoseSE3(R, -R @ center)


def distort_normalized(p: np.ndarray, d: DistortionCoeffs) -> np.ndarray:
    """Forward Brown-Conrady model on normalized image coordinates, shape (..., 2)."""
    p = np.asarray(p, dtype=float)
    if d.is_zero:
        return p.copy()
    x, y = p[..., 0], p[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3))
    xy = x * y
    xd = x * radial + 2.0 * d.p1 * xy + d.p2 * (r2 + 2.0 * x * x)
    yd = y * radial + d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * xy
    return np.stack([xd, yd], axis=-1)


def _distortion_jacobian(q: np.ndarray, d: DistortionCoeffs) -> np.ndarray:
    x, y = q[..., 0], q[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3))
    dradial = d.k1 + r2 * (2.0 * d.k2 + 3.0 * d.k3 * r2)
    j = np.empty(q.shape + (2,))
    j[..., 0, 0] = radial + 2.0 * x * x * dradial + 2.0 * d.p1 * y + 6.0 * d.p2 * x
    j[..., 0, 1] = 2.0 * x * y * dradial + 2.0 * d.p1 * x + 2.0 * d.p2 * y
    j[..., 1, 0] = 2.0 * x * y * dradial + 2.0 * d.p1 * x + 2.0 * d.p2 * y
    j[..., 1, 1] = radial + 2.0 * y * y * dradial + 6.0 * d.p1 * y + 2.0 * d.p2 * x
    return j


def undistort_normalized(
    p: np.ndarray, d: DistortionCoeffs, tol: float = 1e-10, max_iter: int = 50
) -> np.ndarray:
    """Invert :func:`distort_normalized` by damped Newton fixed-point iteration.

    Raises:
        NonConvergence: if any point's residual stays above ``tol``.
    """
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol must be positive and max_iter at least 1")
    p = np.asarray(p, dtype=float)
    if d.is_zero:
        return p.copy()
    flat = p.reshape(-1, 2)
    q = flat.copy()
    resid = distort_normalized(q, d) - flat
    err = np.linalg.norm(resid, axis=-1)
    for _ in range(max_iter):
        active = err > tol
        if not active.any():
            break
        qa = q[active]
        J = _distortion_jacobian(qa, d)
        step = np.linalg.solve(J, resid[active][..., None])[..., 0]
        step[~np.isfinite(step).all(axis=-1)] = resid[active][~np.isfinite(step).all(axis=-1)]
        # backtrack where the full Newton step does not reduce the residual
        scale = np.ones(len(qa))
        for _ in range(8):
            cand = qa - scale[:, None] * step
            cand_resid = distort_normalized(cand, d) - flat[active]
            cand_err = np.linalg.norm(cand_resid, axis=-1)
            worse = cand_err > err[active]
            if not worse.any():
                break
            scale[worse] *= 0.5
        q[active] = cand
        resid[active] = cand_resid
        err[active] = cand_err
    if np.any(err > tol) or not np.all(np.isfinite(err)):
        raise NonConvergence(
            f"undistortion residual {np.nanmax(err):.3g} exceeds tol {tol:g} after {max_iter} iterations"
        )
    return q.reshape(p.shape)


def project_points(
    points: np.ndarray, pose: PoseSE3, cam: CameraModel, apply_distortion: bool = True
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized projection.

    Returns:
        ``(uv, depth, valid)`` where ``uv`` is (N, 2) subpixel coordinates,
        ``depth`` the camera-frame z and ``valid`` marks ``depth > 0``.
        Entries of ``uv`` for invalid points are NaN.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    xc = pose.apply(points)
    depth = xc[:, 2]
    valid = depth > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        xy = xc[:, :2] / np.where(valid, depth, np.nan)[:, None]
    if apply_distortion:
        xy = distort_normalized(xy, cam.distortion)
    uv = cam.normalized_to_pixel(xy)
    return uv, depth, valid


def project(
    x, pose: PoseSE3, cam: CameraModel, apply_distortion: bool = True
) -> Optional[PixelDepth]:
    """Project a single world point; ``None`` when it lies behind the camera."""
    uv, depth, valid = project_points(np.asarray(x, dtype=float)[None], pose, cam, apply_distortion)
    if not valid[0]:
        return None
    return PixelDepth(float(uv[0, 0]), float(uv[0, 1]), float(depth[0]))


def pixel_rays(cam: CameraModel, pose: PoseSE3, uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """World-space rays through distorted pixel coordinates.

    Returns the camera centre and (N, 3) directions scaled so that the
    camera-frame z component is 1 (so ray parameter == depth).
    """
    xy = undistort_normalized(cam.pixel_to_normalized(uv).reshape(-1, 2), cam.distortion)
    dirs_cam = np.concatenate([xy, np.ones((len(xy), 1))], axis=1)
    return pose.center, dirs_cam @ pose.rotation
