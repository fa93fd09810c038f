import numpy as np
import pytest

from geolabel.errors import EmptySpec
from geolabel.geometry import CameraModel, DistortionCoeffs, look_at, pixel_rays
from geolabel.synth import (
    Box,
    CameraRig,
    Rect,
    boundary_band,
    ground_truth_view,
    observe,
    sample_surfaces,
    synth_scene,
)

GROUND = Rect((-100, -100, 0), (200, 0, 0), (0, 200, 0), 1)
SMALL = CameraModel(80.0, 80.0, 40.0, 30.0, 80, 60, DistortionCoeffs(k1=-0.05, p2=1e-3))


def slab_hit(origin, d, lo, hi):
    """Entry distance of a ray into an axis-aligned box, or inf."""
    t0, t1 = -np.inf, np.inf
    for a in range(3):
        if d[a] == 0:
            if not lo[a] <= origin[a] <= hi[a]:
                return np.inf
            continue
        ta, tb = sorted(((lo[a] - origin[a]) / d[a], (hi[a] - origin[a]) / d[a]))
        t0, t1 = max(t0, ta), min(t1, tb)
    return t0 if t0 <= t1 and t0 > 0 else np.inf


def test_nadir_plane_all_ground():
    labels, depth = ground_truth_view([GROUND], look_at([0, 0, 40], [0, 0, 0]), SMALL)
    assert np.all(labels == 1)
    assert depth[30, 40] == pytest.approx(40.0)


def test_plane_box_matches_intersection_oracle():
    box = Box((-4, -3, 0), (5, 4, 6), 2)
    pose = look_at([12, -7, 30], [0, 0, 0])
    labels, _ = ground_truth_view([GROUND, box], pose, SMALL)
    v, u = np.mgrid[0:60, 0:80]
    origin, dirs = pixel_rays(SMALL, pose, np.column_stack([u.ravel(), v.ravel()]).astype(float))
    expected = np.zeros(60 * 80, np.uint8)
    for i, d in enumerate(dirs):
        t_plane = -origin[2] / d[2] if d[2] < 0 else np.inf
        hit_xy = origin[:2] + t_plane * d[:2]
        if not np.all(np.abs(hit_xy) <= 100):
            t_plane = np.inf
        t_box = slab_hit(origin, d, np.array(box.lo, float), np.array(box.hi, float))
        if np.isfinite(min(t_plane, t_box)):
            expected[i] = 2 if t_box <= t_plane else 1
    assert np.array_equal(labels.ravel(), expected)
    assert (labels == 2).sum() > 100


def test_same_seed_bit_identical():
    rig = CameraRig(SMALL, [look_at([3, 2, 30], [0, 0, 0])])
    prims = [GROUND, Box((-4, -3, 0), (5, 4, 6), 2)]
    a, ga = synth_scene(prims, rig, 20000, seed=4)
    b, gb = synth_scene(prims, rig, 20000, seed=4)
    assert np.array_equal(a.cloud.points, b.cloud.points) and np.array_equal(a.cloud.labels, b.cloud.labels)
    assert np.array_equal(a.frames[0].uv, b.frames[0].uv)
    assert all(np.array_equal(ga[k][0], gb[k][0]) for k in ga)
    c, _ = synth_scene(prims, rig, 20000, seed=5)
    assert not np.array_equal(a.cloud.points, c.cloud.points)


def test_empty_primitives():
    with pytest.raises(EmptySpec):
        synth_scene([], CameraRig(SMALL, [look_at([0, 0, 30], [0, 0, 0])]), 10)


def test_surface_samples():
    box = Box((-4, -3, 0), (5, 4, 6), 2)
    pts, lab = sample_surfaces([GROUND, box], 50000, np.random.default_rng(0))
    assert len(pts) == 50000
    ground = lab == 1
    assert np.all(pts[ground, 2] == 0)
    # no ground sample is hidden under the box footprint
    under = (pts[:, 0] > -4) & (pts[:, 0] < 5) & (pts[:, 1] > -3) & (pts[:, 1] < 4)
    assert not np.any(ground & under)
    on_face = np.isclose(pts[~ground], box.lo).any(axis=1) | np.isclose(pts[~ground], box.hi).any(axis=1)
    assert np.all(on_face)


def test_observe_excludes_occluded():
    box = Box((-2, -2, 0), (2, 2, 5), 2)
    pose = look_at([0, 0, 30], [0, 0, 0])
    pts = np.array([[0.0, 0.0, 5.0], [0.0, 0.0, 0.0], [8.0, 8.0, 0.0]])
    idx, uv = observe(pts, [GROUND, box], pose, SMALL)
    assert list(idx) == [0, 2] and uv.shape == (2, 2)


def test_boundary_band():
    lab = np.ones((5, 10), np.uint8)
    lab[:, 5:] = 2
    band = boundary_band(lab, width=2)
    assert np.array_equal(np.nonzero(band[0])[0], [3, 4, 5, 6])
    assert not boundary_band(np.ones((4, 4), np.uint8)).any()
