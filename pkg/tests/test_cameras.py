import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from vibsplat.cameras import (CameraExtrinsics, CameraFrame, CameraIntrinsics,
                              build_covariance, pixel_rays, project_covariance,
                              project_point, project_points,
                              projection_jacobian, quat_to_rotation,
                              world_to_camera)
from vibsplat.errors import BadPose, BehindCamera

INTR = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 100, 100)


def random_extrinsics(rng):
    R = Rotation.random(random_state=rng.integers(2 ** 31)).as_matrix()
    return CameraExtrinsics(R, rng.normal(size=3))


class TestWorldToCamera:
    def test_identity(self):
        ext = CameraExtrinsics.identity()
        x = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(world_to_camera(x, ext), x)

    def test_pure_translation(self):
        ext = CameraExtrinsics(np.eye(3), np.array([0.0, 0.0, 5.0]))
        np.testing.assert_array_equal(world_to_camera(np.zeros(3), ext), [0, 0, 5])

    def test_roundtrip_with_inverse(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            ext = random_extrinsics(rng)
            x = rng.normal(size=3)
            back = world_to_camera(world_to_camera(x, ext), ext.inverse())
            np.testing.assert_allclose(back, x, atol=1e-9)

    def test_camera_center_maps_to_origin(self):
        rng = np.random.default_rng(1)
        ext = random_extrinsics(rng)
        np.testing.assert_allclose(world_to_camera(ext.camera_center, ext),
                                   np.zeros(3), atol=1e-12)


class TestProjectPoint:
    def test_optical_axis(self):
        px, z = project_point([0.0, 0.0, 1.0], INTR)
        np.testing.assert_array_equal(px, [50.0, 50.0])
        assert z == 1.0

    def test_linear_in_x_over_z(self):
        px, _ = project_point([0.1, 0.0, 1.0], INTR)
        np.testing.assert_allclose(px, [60.0, 50.0], rtol=1e-12)

    def test_behind_camera_raises(self):
        with pytest.raises(BehindCamera):
            project_point([0.0, 0.0, 0.0], INTR)
        with pytest.raises(BehindCamera):
            project_point([0.0, 0.0, 0.15], INTR)  # inside default near clip

    def test_vectorized_agrees_with_scalar(self):
        rng = np.random.default_rng(2)
        pts = np.column_stack([rng.normal(size=10), rng.normal(size=10),
                               rng.uniform(0.5, 5.0, 10)])
        px, z, valid = project_points(pts, INTR)
        assert valid.all()
        for i in range(10):
            pxi, zi = project_point(pts[i], INTR)
            np.testing.assert_allclose(px[i], pxi, rtol=1e-12)
            assert z[i] == zi


class TestCovariance:
    def test_identity_rotation_diag(self):
        cov = build_covariance([1.0, 2.0, 3.0], [1.0, 0.0, 0.0, 0.0])
        np.testing.assert_allclose(cov, np.diag([1.0, 4.0, 9.0]), atol=1e-12)

    def test_isotropic_invariant_under_rotation(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            q = rng.normal(size=4)
            cov = build_covariance([0.7, 0.7, 0.7], q)
            np.testing.assert_allclose(cov, 0.49 * np.eye(3), atol=1e-12)

    def test_eigenvalue_oracle(self):
        # Eigenvalues of R diag(s^2) R^T are exactly s^2.
        rng = np.random.default_rng(4)
        for _ in range(50):
            s = rng.uniform(0.1, 3.0, 3)
            q = rng.normal(size=4)
            cov = build_covariance(s, q)
            np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(cov)),
                                       np.sort(s ** 2), rtol=1e-9)

    def test_quaternion_convention_matches_scipy(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            ours = quat_to_rotation(q)
            ref = Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()
            np.testing.assert_allclose(ours, ref, atol=1e-12)


class TestProjectCovariance:
    def test_isotropic_on_axis(self):
        sigma2 = 0.09
        cov = sigma2 * np.eye(3)
        out = project_covariance(cov, [0.0, 0.0, 1.0], INTR, CameraExtrinsics.identity())
        want = np.diag([INTR.fx ** 2 * sigma2, INTR.fy ** 2 * sigma2]) + 0.3 * np.eye(2)
        np.testing.assert_allclose(out, want, rtol=1e-12)

    def test_doubling_depth_quarters(self):
        cov = 0.04 * np.eye(3)
        ext = CameraExtrinsics.identity()
        near = project_covariance(cov, [0.0, 0.0, 1.0], INTR, ext, low_pass=0.0)
        far = project_covariance(cov, [0.0, 0.0, 2.0], INTR, ext, low_pass=0.0)
        np.testing.assert_allclose(far, near / 4.0, rtol=1e-12)

    def test_zero_covariance_becomes_floor(self):
        out = project_covariance(np.zeros((3, 3)), [0.2, -0.1, 2.0], INTR,
                                 CameraExtrinsics.identity())
        np.testing.assert_allclose(out, 0.3 * np.eye(2), atol=1e-12)

    def test_behind_camera_raises(self):
        with pytest.raises(BehindCamera):
            project_covariance(np.eye(3), [0.0, 0.0, 0.1], INTR,
                               CameraExtrinsics.identity())

    def test_symmetric_positive_definite_after_floor(self):
        rng = np.random.default_rng(6)
        n = 100_000
        s = rng.uniform(0.01, 2.0, (n, 3))
        q = rng.normal(size=(n, 4))
        cov3 = build_covariance(s, q)
        x = np.column_stack([rng.normal(size=n), rng.normal(size=n),
                             rng.uniform(0.5, 20.0, n)])
        from vibsplat.cameras import project_covariances
        cov2 = project_covariances(cov3, x, INTR, CameraExtrinsics.identity())
        np.testing.assert_allclose(cov2[:, 0, 1], cov2[:, 1, 0], rtol=1e-9)
        det = cov2[:, 0, 0] * cov2[:, 1, 1] - cov2[:, 0, 1] ** 2
        assert np.all(cov2[:, 0, 0] > 0) and np.all(det > 0)

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            x = np.array([rng.normal(), rng.normal(), rng.uniform(1.0, 10.0)])
            J = projection_jacobian(x[None], INTR)[0]
            h = 1e-6
            for k in range(3):
                dx = np.zeros(3)
                dx[k] = h
                hi, _ = project_point(x + dx, INTR)
                lo, _ = project_point(x - dx, INTR)
                fd = (hi - lo) / (2 * h)
                np.testing.assert_allclose(J[:, k], fd, rtol=1e-5, atol=1e-7)


class TestValidation:
    def test_bad_rotation_rejected(self):
        with pytest.raises(BadPose):
            CameraExtrinsics(np.eye(3) * 1.1, np.zeros(3))
        with pytest.raises(BadPose):
            CameraExtrinsics(np.diag([1.0, 1.0, -1.0]), np.zeros(3))  # det -1

    def test_intrinsics_bounds(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(0.0, 1.0, 5.0, 5.0, 10, 10)
        with pytest.raises(ValueError):
            CameraIntrinsics(10.0, 10.0, 20.0, 5.0, 10, 10)  # cx outside

    def test_frame_shape_checks(self):
        intr = CameraIntrinsics(10.0, 10.0, 4.0, 4.0, 8, 8)
        with pytest.raises(ValueError):
            CameraFrame(intr, CameraExtrinsics.identity(), 0.0,
                        image=np.zeros((4, 4, 3)))

    def test_downsample_halves_dims(self):
        intr = CameraIntrinsics(20.0, 20.0, 8.0, 6.0, 16, 12)
        frame = CameraFrame(intr, CameraExtrinsics.identity(), 0.0,
                            image=np.full((12, 16, 3), 0.25),
                            sparse_inv_depth=np.zeros((12, 16)),
                            sky_mask=np.zeros((12, 16), dtype=bool))
        small = frame.downsample(2)
        assert small.intrinsics.width == 8 and small.intrinsics.height == 6
        np.testing.assert_allclose(small.image, 0.25, atol=1e-7)
        assert small.intrinsics.fx == pytest.approx(10.0)

    def test_pixel_rays_unit_and_centered(self):
        ext = CameraExtrinsics.identity()
        rays = pixel_rays(INTR, ext)
        np.testing.assert_allclose(np.linalg.norm(rays, axis=-1), 1.0, rtol=1e-12)
        # center pixel of a centered camera looks straight down +z
        c = rays[49, 49]
        assert c[2] > 0.999
