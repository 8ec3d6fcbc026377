import numpy as np
import pytest

from veinmosaic.core import (
    CameraIntrinsics,
    ForceSample,
    Image,
    MaterialParams,
    Pose,
    back_project,
    check_nonnegative_forces,
    project_homogeneous,
)
from veinmosaic.exceptions import DegenerateDepthError


class TestImage:
    def test_dimensions(self):
        img = Image(np.zeros((4, 6), dtype=np.uint8))
        assert img.width == 6 and img.height == 4

    def test_mask_shape_must_match(self):
        with pytest.raises(ValueError):
            Image(np.zeros((4, 6), dtype=np.uint8), np.ones((4, 5), dtype=bool))

    def test_immutable(self):
        img = Image(np.zeros((4, 6), dtype=np.uint8))
        with pytest.raises(ValueError):
            img.data[0, 0] = 1


class TestDomainTypes:
    def test_material_validation(self):
        with pytest.raises(ValueError):
            MaterialParams(-1.0, 0.5, 18.0, 0.0048, 53.0, 53.0)
        with pytest.raises(ValueError):
            MaterialParams(16100.0, 0.7, 18.0, 0.0048, 53.0, 53.0)

    def test_force_sample_finite(self):
        with pytest.raises(ValueError):
            ForceSample(1, float("nan"), 0.0, 0.0, 0.0)

    def test_nonnegative_check_flags_pulls(self):
        check_nonnegative_forces(ForceSample(1, 0.0, 1.0, 2.0, 3.0))
        with pytest.raises(ValueError):
            check_nonnegative_forces(ForceSample(1, -0.5, 1.0, 2.0, 3.0))

    def test_pose_orthonormality_enforced(self):
        with pytest.raises(ValueError):
            Pose(np.eye(3) * 1.01, np.zeros(3))
        bad = np.eye(3)
        bad = bad[:, [1, 0, 2]]  # det = -1
        with pytest.raises(ValueError):
            Pose(bad, np.zeros(3))

    def test_intrinsics_matrix(self):
        ci = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 0.05)
        K = ci.matrix
        assert K[0, 0] == 500.0 and K[0, 2] == 320.0 and K[2, 2] == 1.0
        assert ci.plane_depth == 500.0 * 0.05


class TestProjectHomogeneous:
    def test_origin_maps_to_principal_point(self):
        ci = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 0.05)
        px = project_homogeneous(np.zeros(3), Pose.identity(), ci)
        assert np.allclose(px, [320.0, 240.0])

    def test_pinhole_similarity_triangle(self):
        # oracle: the lateral offset scales like fx * X / Z
        ci = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 0.05)
        pose = Pose(np.eye(3), np.array([0.0, 0.0, 100.0]))
        expected_dx = 500.0 * 10.0 / 100.0
        px = project_homogeneous(np.array([10.0, 0.0, 0.0]), pose, ci)
        assert np.allclose(px, [320.0 + expected_dx, 240.0])

    def test_translation_equivalence(self):
        # shifting the camera +5 in x equals shifting the point -5 in x
        ci = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 0.05)
        moved_cam = Pose(np.eye(3), np.array([5.0, 0.0, 50.0]))
        still_cam = Pose(np.eye(3), np.array([0.0, 0.0, 50.0]))
        for point in np.random.default_rng(0).uniform(-5, 5, size=(10, 2)):
            p3 = np.array([point[0], point[1], 0.0])
            a = project_homogeneous(p3, moved_cam, ci)
            b = project_homogeneous(p3 + (5.0, 0.0, 0.0), still_cam, ci)
            assert np.allclose(a, b, atol=1e-9)

    def test_degenerate_depth_raises_off_axis(self):
        ci = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 0.05)
        with pytest.raises(DegenerateDepthError):
            project_homogeneous(np.array([1.0, 0.0, 0.0]), Pose.identity(), ci)

    def test_back_projection_round_trip(self):
        ci = CameraIntrinsics(500.0, 480.0, 320.0, 240.0, 0.05)
        rng = np.random.default_rng(7)
        for _ in range(25):
            angle = rng.uniform(-0.3, 0.3)
            c, s = np.cos(angle), np.sin(angle)
            R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
            pose = Pose(R, rng.uniform(-5, 5, size=3) + (0, 0, 60.0))
            point = np.append(rng.uniform(-10, 10, size=2), 0.0)
            px = project_homogeneous(point, pose, ci)
            depth = pose.apply(point)[2]
            recovered = back_project(px, depth, pose, ci)
            assert np.linalg.norm(recovered - point) < 1e-9 * max(
                1.0, np.linalg.norm(point)
            )


class TestPoseAlgebra:
    def test_composition_associative(self):
        rng = np.random.default_rng(3)

        def random_pose():
            A = rng.standard_normal((3, 3))
            Q, _ = np.linalg.qr(A)
            if np.linalg.det(Q) < 0:
                Q[:, 0] = -Q[:, 0]
            return Pose(Q, rng.uniform(-10, 10, size=3))

        for _ in range(20):
            a, b, c = random_pose(), random_pose(), random_pose()
            left = a.compose(b).compose(c)
            right = a.compose(b.compose(c))
            assert np.allclose(left.R, right.R, atol=1e-9)
            assert np.allclose(left.T, right.T, atol=1e-9)

    def test_inverse(self):
        rng = np.random.default_rng(4)
        A = rng.standard_normal((3, 3))
        Q, _ = np.linalg.qr(A)
        if np.linalg.det(Q) < 0:
            Q[:, 0] = -Q[:, 0]
        p = Pose(Q, rng.uniform(-5, 5, size=3))
        ident = p.compose(p.inverse())
        assert np.allclose(ident.R, np.eye(3), atol=1e-12)
        assert np.allclose(ident.T, 0.0, atol=1e-12)
