"""Synthetic scenes with exact ray-cast ground truth.

Scenes are built from planar rectangles and axis-aligned boxes. Points are
sampled uniformly on the surfaces; per-view ground truth comes from casting
the ray of every pixel centre against the primitives.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import EmptySpec
from .geometry import CameraModel, DistortionCoeffs, PoseSE3, look_at, pixel_rays, project_points
from .lift import ClassCatalog, SemanticPointCloud, UNLABELED
from .render import pixel_indices, valid_radius
from .scene import Frame, SceneModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Rect:
    """Parallelogram ``origin + a * edge_u + b * edge_v`` for ``a, b`` in [0, 1]."""

    origin: tuple
    edge_u: tuple
    edge_v: tuple
    label: int
    density: float = 1.0  # relative sampling density
    name: str = ""

    def faces(self):
        return [(np.asarray(self.origin, float), np.asarray(self.edge_u, float), np.asarray(self.edge_v, float))]


@dataclass(frozen=True)
class Box:
    """Axis-aligned solid box; the bottom face is not sampled unless ``closed``."""

    lo: tuple
    hi: tuple
    label: int
    density: float = 1.0
    closed: bool = False
    name: str = ""

    def faces(self):
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        dx, dy, dz = hi - lo
        ex, ey, ez = np.array([dx, 0, 0]), np.array([0, dy, 0]), np.array([0, 0, dz])
        faces = [
            (np.array([lo[0], lo[1], hi[2]]), ex, ey),  # top
            (lo.copy(), ex, ez),
            (np.array([lo[0], hi[1], lo[2]]), ex, ez),
            (lo.copy(), ey, ez),
            (np.array([hi[0], lo[1], lo[2]]), ey, ez),
        ]
        if self.closed:
            faces.append((lo.copy(), ex, ey))
        return faces

    def contains(self, p: np.ndarray) -> np.ndarray:
        """Strict interior in x/y; z from the floor (inclusive) to the roof (exclusive)."""
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        eps = 1e-9
        return (
            (p[:, 0] > lo[0] + eps) & (p[:, 0] < hi[0] - eps)
            & (p[:, 1] > lo[1] + eps) & (p[:, 1] < hi[1] - eps)
            & (p[:, 2] >= lo[2] - eps) & (p[:, 2] < hi[2] - eps)
        )


Primitive = Union[Rect, Box]


@dataclass
class CameraRig:
    camera: CameraModel
    poses: list
    names: Optional[list] = None

    def __post_init__(self):
        if self.names is None:
            self.names = [f"view_{i:03d}.png" for i in range(len(self.poses))]


def _area(eu: np.ndarray, ev: np.ndarray) -> float:
    return float(np.linalg.norm(np.cross(eu, ev)))


def sample_surfaces(primitives: Sequence[Primitive], num_points: int, rng: np.random.Generator):
    """Uniform surface samples, returning exactly ``num_points`` points and labels."""
    faces = []
    for k, prim in enumerate(primitives):
        for o, eu, ev in prim.faces():
            faces.append((k, o, eu, ev, _area(eu, ev) * prim.density))
    weights = np.array([f[4] for f in faces])
    if weights.sum() <= 0:
        raise EmptySpec("primitives have zero sampling area")
    quota = np.floor(num_points * weights / weights.sum()).astype(np.int64)
    quota[np.argsort(-weights, kind="stable")[: num_points - quota.sum()]] += 1
    boxes = [(k, p) for k, p in enumerate(primitives) if isinstance(p, Box)]
    pts, labs = [], []
    for (k, o, eu, ev, _), n in zip(faces, quota):
        got = []
        need = int(n)
        for _ in range(50):
            if need <= 0:
                break
            ab = rng.random((max(need * 2, 16), 2))
            cand = o + ab[:, :1] * eu + ab[:, 1:] * ev
            keep = np.ones(len(cand), dtype=bool)
            for kb, box in boxes:
                if kb != k:
                    keep &= ~box.contains(cand)
            cand = cand[keep][:need]
            got.append(cand)
            need -= len(cand)
        if need > 0:
            raise EmptySpec(f"face of primitive {k} is almost entirely enclosed by a box")
        face_pts = np.concatenate(got) if got else np.zeros((0, 3))
        pts.append(face_pts)
        labs.append(np.full(len(face_pts), primitives[k].label, dtype=np.uint8))
    return np.concatenate(pts), np.concatenate(labs)


def _intersect(prim: Primitive, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Ray parameter of the first hit per ray (inf where missed); rays are ``origin + t * dirs``."""
    t_best = np.full(len(dirs), np.inf)
    if isinstance(prim, Box):
        lo, hi = np.asarray(prim.lo, float), np.asarray(prim.hi, float)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t1 = (lo - origin) * inv
            t2 = (hi - origin) * inv
        tmin = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
        tmax = np.where(np.isnan(t1), np.inf, np.maximum(t1, t2))
        t_near = tmin.max(axis=1)
        t_far = tmax.min(axis=1)
        hit = (t_near <= t_far) & (t_near > 0)
        t_best[hit] = t_near[hit]
        return t_best
    o, eu, ev = prim.faces()[0]
    n = np.cross(eu, ev)
    denom = dirs @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((o - origin) @ n) / denom
    p = origin + t[:, None] * dirs - o
    gram = np.array([[eu @ eu, eu @ ev], [eu @ ev, ev @ ev]])
    ab = np.linalg.solve(gram, np.stack([p @ eu, p @ ev]))
    hit = (np.abs(denom) > 1e-15) & (t > 0) & (ab[0] >= 0) & (ab[0] <= 1) & (ab[1] >= 0) & (ab[1] <= 1)
    t_best[hit] = t[hit]
    return t_best


def raycast(primitives: Sequence[Primitive], origin: np.ndarray, dirs: np.ndarray):
    """Nearest-hit label and ray parameter per ray."""
    labels = np.zeros(len(dirs), dtype=np.uint8)
    t_best = np.full(len(dirs), np.inf)
    for prim in primitives:
        t = _intersect(prim, origin, dirs)
        closer = t < t_best
        t_best[closer] = t[closer]
        labels[closer] = prim.label
    return labels, t_best


def ground_truth_view(primitives: Sequence[Primitive], pose: PoseSE3, cam: CameraModel):
    """Analytic label and depth maps by casting every pixel-centre ray."""
    v, u = np.mgrid[0 : cam.height, 0 : cam.width]
    uv = np.stack([u.ravel(), v.ravel()], axis=1).astype(float)
    origin, dirs = pixel_rays(cam, pose, uv)
    labels, depth = raycast(primitives, origin, dirs)
    return labels.reshape(cam.shape), depth.reshape(cam.shape)


def observe(points: np.ndarray, primitives, pose: PoseSE3, cam: CameraModel, chunk: int = 500_000):
    """Points that are unoccluded and inside the frame, with their distorted pixel coordinates."""
    uv, depth, valid = project_points(points, pose, cam, apply_distortion=True)
    rmax = valid_radius(cam)
    if np.isfinite(rmax):
        xc = pose.apply(points)
        with np.errstate(divide="ignore", invalid="ignore"):
            valid &= np.hypot(xc[:, 0], xc[:, 1]) / xc[:, 2] <= rmax
    idx, _, _ = pixel_indices(uv, depth, valid, cam)
    center = pose.center
    seen = np.zeros(len(idx), dtype=bool)
    for s in range(0, len(idx), chunk):
        sl = idx[s : s + chunk]
        dirs = points[sl] - center  # t == 1 at the point itself
        blocked = np.zeros(len(sl), dtype=bool)
        for prim in primitives:
            blocked |= _intersect(prim, center, dirs) < 1.0 - 1e-7
        seen[s : s + chunk] = ~blocked
    idx = idx[seen]
    return idx, uv[idx]


def synth_scene(
    primitives: Sequence[Primitive],
    rig: CameraRig,
    num_points: int,
    seed: int = 0,
    class_names: Sequence[str] = None,
    observations: bool = True,
):
    """Build a scene model plus per-view ground truth.

    Returns:
        ``(scene, gt)`` where ``gt`` maps image name to ``(labels, depth)``.
    """
    if not primitives:
        raise EmptySpec("scene needs at least one primitive")
    rng = np.random.default_rng(seed)
    points, labels = sample_surfaces(primitives, num_points, rng)
    num_classes = int(max(p.label for p in primitives))
    if class_names is None:
        names = {p.label: (p.name or f"class_{p.label}") for p in primitives}
        class_names = [names.get(c, f"class_{c}") for c in range(1, num_classes + 1)]
    cloud = SemanticPointCloud(points, labels)
    frames, gt = [], {}
    for i, (pose, name) in enumerate(zip(rig.poses, rig.names)):
        if observations:
            idx, uv = observe(points, primitives, pose, rig.camera)
        else:
            idx, uv = np.zeros(0, dtype=np.int64), np.zeros((0, 2))
        frames.append(Frame(i + 1, name, 1, pose, uv, idx))
        gt[name] = ground_truth_view(primitives, pose, rig.camera)
    label_counts = np.bincount(labels, minlength=num_classes + 1)[1:]
    catalog = ClassCatalog(list(class_names), label_counts / max(label_counts.sum(), 1))
    scene = SceneModel({1: rig.camera}, frames, cloud, catalog=catalog)
    logger.info("synthesized %d points, %d views", len(points), len(frames))
    return scene, gt


def boundary_band(labels: np.ndarray, width: int = 2) -> np.ndarray:
    """Pixels within ``width`` pixels (Chebyshev) of a change in label."""
    h, w = labels.shape
    band = np.zeros(labels.shape, dtype=bool)
    for dy in range(-width, width + 1):
        for dx in range(-width, width + 1):
            ys = slice(max(0, -dy), h - max(0, dy))
            xs = slice(max(0, -dx), w - max(0, dx))
            yn = slice(max(0, dy), h - max(0, -dy))
            xn = slice(max(0, dx), w - max(0, -dx))
            band[ys, xs] |= labels[ys, xs] != labels[yn, xn]
    return band


# ---------------------------------------------------------------- presets

def default_camera(width: int = 640, height: int = 480, focal: float = 500.0,
                   distortion: DistortionCoeffs = None) -> CameraModel:
    return CameraModel(focal, focal, width / 2.0, height / 2.0, width, height,
                       distortion or DistortionCoeffs(k1=-0.05, k2=0.01, p1=1e-4, p2=-1e-4))


def ring_rig(camera: CameraModel, n: int, altitudes: Sequence[float], radius: float,
             target=(0.0, 0.0, 0.0), phase: float = 0.3) -> CameraRig:
    poses = []
    for i in range(n):
        a = phase + 2 * np.pi * i / n
        alt = altitudes[i % len(altitudes)]
        center = (target[0] + radius * np.cos(a), target[1] + radius * np.sin(a), alt)
        poses.append(look_at(center, target))
    return CameraRig(camera, poses)


def plane_boxes_primitives():
    return [
        Rect((-60, -60, 0), (120, 0, 0), (0, 120, 0), 1, name="ground"),
        Box((-14, -8, 0), (-4, 6, 12), 2, name="building"),
        Box((5, 4, 0), (13, 12, 6), 3, name="shed"),
        Box((2, -16, 0), (22, -10, 9), 4, name="hall"),
    ]


def plane_boxes_scene(num_points: int = 2_000_000, seed: int = 0, observations: bool = False):
    """Ground plane plus three boxes seen by five oblique cameras at 30-50 m."""
    rig = ring_rig(default_camera(), 5, altitudes=(30.0, 35.0, 40.0, 45.0, 50.0), radius=18.0)
    return synth_scene(plane_boxes_primitives(), rig, num_points, seed, observations=observations)


def occluder_primitives(slab_density: float = 0.35):
    # an elevated canopy-like slab, sampled sparsely, above a densely sampled ground
    return [
        Rect((-40, -40, 0), (80, 0, 0), (0, 80, 0), 1, name="ground"),
        Rect((-8, -8, 10), (16, 0, 0), (0, 16, 0), 2, density=slab_density, name="canopy"),
        Box((9, -3, 0), (14, 3, 4), 3, name="kiosk"),
    ]


def occluder_scene(num_points: int = 1_000_000, seed: int = 0, observations: bool = False):
    rig = ring_rig(default_camera(), 3, altitudes=(30.0, 35.0, 40.0), radius=10.0)
    return synth_scene(occluder_primitives(), rig, num_points, seed, observations=observations)


def two_plane_primitives():
    return [
        Rect((-40, -40, 0), (80, 0, 0), (0, 80, 0), 1, name="far"),
        Rect((-6, -6, 8), (12, 0, 0), (0, 12, 0), 2, name="near"),
    ]


def two_plane_scene(num_points: int = 600_000, seed: int = 0, observations: bool = False):
    rig = ring_rig(default_camera(), 2, altitudes=(30.0, 36.0), radius=8.0)
    return synth_scene(two_plane_primitives(), rig, num_points, seed, observations=observations)


PRESETS = {
    "plane-boxes": plane_boxes_scene,
    "occluder": occluder_scene,
    "two-plane": two_plane_scene,
}
