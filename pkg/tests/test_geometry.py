import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geolabel.errors import NonConvergence, ZeroQuaternion
from geolabel.geometry import (
    CameraModel,
    DistortionCoeffs,
    PoseSE3,
    _distortion_jacobian,
    compose,
    distort_normalized,
    invert,
    look_at,
    pixel_rays,
    project,
    project_points,
    quaternion_to_rotation,
    rotation_about_axis,
    rotation_to_quaternion,
    undistort_normalized,
)

ZERO = DistortionCoeffs()


@pytest.fixture
def cam():
    return CameraModel(100.0, 100.0, 320.0, 240.0, 640, 480)


def rz(deg):
    return rotation_about_axis([0, 0, 1], np.radians(deg))


def random_coeffs(rng):
    return DistortionCoeffs(
        k1=rng.uniform(-0.2, 0.2), k2=rng.uniform(-0.05, 0.05), k3=0.0,
        p1=rng.uniform(-0.01, 0.01), p2=rng.uniform(-0.01, 0.01),
    )


def unit_disc(rng, n):
    r = np.sqrt(rng.random(n))
    a = rng.uniform(0, 2 * np.pi, n)
    return np.stack([r * np.cos(a), r * np.sin(a)], axis=1)


class TestDistortion:
    def test_zero_coeffs_identity(self):
        assert np.array_equal(distort_normalized([0.5, 0.0], ZERO), [0.5, 0.0])

    def test_optical_axis_fixed(self):
        d = DistortionCoeffs(0.3, -0.1, 0.02, 0.01, -0.02)
        assert np.array_equal(distort_normalized([0.0, 0.0], d), [0.0, 0.0])

    def test_radial_k1(self):
        # 0.5 * (1 + 0.1 * 0.25)
        assert np.allclose(distort_normalized([0.5, 0.0], DistortionCoeffs(k1=0.1)), [0.5125, 0.0], atol=1e-15)

    def test_tangential_terms_by_hand(self):
        d = DistortionCoeffs(p1=0.01, p2=0.02)
        x, y = 0.3, -0.2
        r2 = x * x + y * y
        expected = [x + 2 * 0.01 * x * y + 0.02 * (r2 + 2 * x * x), y + 0.01 * (r2 + 2 * y * y) + 2 * 0.02 * x * y]
        assert np.allclose(distort_normalized([x, y], d), expected, atol=1e-15)

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        d = DistortionCoeffs(0.15, -0.04, 0.01, 0.008, -0.006)
        for p in unit_disc(rng, 20):
            J = _distortion_jacobian(p[None], d)[0]
            h = 1e-6
            num = np.stack(
                [(distort_normalized(p + h * e, d) - distort_normalized(p - h * e, d)) / (2 * h) for e in np.eye(2)],
                axis=1,
            )
            assert np.allclose(J, num, atol=1e-8)

    def test_undistort_identity_zero(self):
        assert np.array_equal(undistort_normalized([0.5, 0.0], ZERO), [0.5, 0.0])

    def test_undistort_inverts_forward_example(self):
        q = undistort_normalized([0.5125, 0.0], DistortionCoeffs(k1=0.1))
        assert np.allclose(q, [0.5, 0.0], atol=1e-8)

    def test_distort_of_undistort_roundtrip(self):
        rng = np.random.default_rng(0)
        d = DistortionCoeffs(k1=0.1, k2=0.02, p1=0.005, p2=-0.003)
        p = unit_disc(rng, 1000)
        q = undistort_normalized(p, d, tol=1e-10)
        assert np.abs(distort_normalized(q, d) - p).max() <= 1e-10

    def test_nonconvergence(self):
        # strongly negative k1 folds the model; points beyond the fold have no inverse
        with pytest.raises(NonConvergence):
            undistort_normalized([2.0, 0.0], DistortionCoeffs(k1=-0.5), max_iter=5)

    def test_bad_params(self):
        with pytest.raises(ValueError):
            undistort_normalized([0.1, 0.1], ZERO, tol=0.0)
        with pytest.raises(ValueError):
            DistortionCoeffs(k1=np.nan)


@settings(max_examples=200, deadline=None)
@given(
    st.floats(-1, 1), st.floats(-1, 1),
    st.floats(-0.2, 0.2), st.floats(-0.05, 0.05), st.floats(-0.01, 0.01), st.floats(-0.01, 0.01),
)
def test_undistort_distort_property(x, y, k1, k2, p1, p2):
    if x * x + y * y > 1:
        return
    d = DistortionCoeffs(k1=k1, k2=k2, p1=p1, p2=p2)
    q = undistort_normalized(distort_normalized([x, y], d), d)
    assert np.allclose(q, [x, y], atol=1e-8, rtol=0)


class TestProjection:
    def test_optical_axis(self, cam):
        assert project([0, 0, 5], PoseSE3.identity(), cam) == (320.0, 240.0, 5.0)

    def test_offset(self, cam):
        px = project([1, 0, 5], PoseSE3.identity(), cam)
        assert px.u == pytest.approx(340.0) and px.v == pytest.approx(240.0) and px.depth == 5.0

    def test_behind(self, cam):
        assert project([0, 0, -1], PoseSE3.identity(), cam) is None

    def test_distortion_applied(self):
        c = CameraModel(100.0, 100.0, 320.0, 240.0, 640, 480, DistortionCoeffs(k1=0.1))
        px = project([2.5, 0, 5], PoseSE3.identity(), c)
        assert px.u == pytest.approx(320 + 100 * 0.5125)
        px = project([2.5, 0, 5], PoseSE3.identity(), c, apply_distortion=False)
        assert px.u == pytest.approx(370.0)

    def test_scaled_point_same_ray(self, cam):
        pose = PoseSE3(rz(20), [1.0, -2.0, 3.0])
        x = np.array([2.0, 1.0, 9.0])
        # homogeneous ray through the camera centre: centre + s * (x - centre)
        c = pose.center
        a = project(x, pose, cam)
        b = project(c + 2.0 * (x - c), pose, cam)
        assert a.u == pytest.approx(b.u) and a.v == pytest.approx(b.v)
        assert b.depth == pytest.approx(2 * a.depth)

    def test_composed_pose_same_pixel(self, cam):
        rng = np.random.default_rng(1)
        world_to_a = PoseSE3(rotation_about_axis(rng.normal(size=3), 0.4), rng.normal(size=3))
        cam_pose = PoseSE3(rotation_about_axis(rng.normal(size=3), 0.2), [0.0, 0.0, 20.0])
        pts = rng.normal(size=(50, 3))
        direct, _, _ = project_points(world_to_a.apply(pts), cam_pose, cam)
        composed, _, _ = project_points(pts, compose(cam_pose, world_to_a), cam)
        assert np.abs(direct - composed).max() < 1e-9

    def test_pixel_rays_hit_projected_point(self):
        c = CameraModel(300.0, 310.0, 160.0, 120.0, 320, 240, DistortionCoeffs(-0.05, 0.01, 0, 1e-3, -1e-3))
        pose = look_at([3, 4, 30], [0, 0, 0])
        pts = np.array([[1.0, 2.0, 0.0], [-4.0, 1.5, 2.0]])
        uv, depth, _ = project_points(pts, pose, c)
        origin, dirs = pixel_rays(c, pose, uv)
        assert np.allclose(origin + depth[:, None] * dirs, pts, atol=1e-7)


class TestPoses:
    def test_identity_compose(self):
        assert compose(PoseSE3.identity(), PoseSE3.identity()).allclose(PoseSE3.identity())

    def test_group_inverse(self):
        a = PoseSE3(rz(90), [1.0, 0.0, 0.0])
        assert compose(a, invert(a)).allclose(PoseSE3.identity(), atol=1e-12)
        assert compose(invert(a), a).allclose(PoseSE3.identity(), atol=1e-12)

    def test_rotations_add(self):
        c = compose(PoseSE3(rz(30), np.zeros(3)), PoseSE3(rz(60), np.zeros(3)))
        assert np.allclose(c.rotation, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-12)

    def test_rejects_non_rotation(self):
        with pytest.raises(ValueError):
            PoseSE3(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
        with pytest.raises(ValueError):
            PoseSE3(2 * np.eye(3), np.zeros(3))

    def test_matrix_roundtrip(self):
        a = PoseSE3(rz(33), [1, 2, 3])
        assert PoseSE3.from_matrix(a.matrix).allclose(a, atol=0)

    def test_look_at_nadir(self):
        p = look_at([0, 0, 40], [0, 0, 0])
        assert np.allclose(p.apply([0, 0, 0]), [0, 0, 40])
        assert np.allclose(p.center, [0, 0, 40])


class TestQuaternion:
    def test_identity(self):
        assert np.array_equal(quaternion_to_rotation(1, 0, 0, 0), np.eye(3))

    def test_half_turn_z(self):
        assert np.allclose(quaternion_to_rotation(0, 0, 0, 1), np.diag([-1.0, -1.0, 1.0]))

    def test_quarter_turn_z(self):
        assert np.allclose(quaternion_to_rotation(0.7071, 0, 0, 0.7071), rz(90), atol=1e-6)

    def test_zero(self):
        with pytest.raises(ZeroQuaternion):
            quaternion_to_rotation(0, 0, 0, 0)

    def test_random_orthonormal(self):
        rng = np.random.default_rng(7)
        for q in rng.normal(size=(10_000, 4)):
            R = quaternion_to_rotation(*q)
            assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9
            assert abs(np.linalg.det(R) - 1) < 1e-9

    def test_rotation_to_quaternion_roundtrip(self):
        rng = np.random.default_rng(8)
        for q in rng.normal(size=(200, 4)):
            R = quaternion_to_rotation(*q)
            assert np.allclose(quaternion_to_rotation(*rotation_to_quaternion(R)), R, atol=1e-12)


class TestCameraModel:
    def test_invariants(self):
        with pytest.raises(ValueError):
            CameraModel(0.0, 1.0, 1, 1, 10, 10)
        with pytest.raises(ValueError):
            CameraModel(1.0, 1.0, 10.0, 1, 10, 10)
        with pytest.raises(ValueError):
            CameraModel(1.0, 1.0, 1, 1, 0, 10)
