import math

import numpy as np
import pytest

from veinmosaic.core import ForceSample, Image
from veinmosaic.exceptions import FoldOverError, GrazingTiltError, SensorDomainError
from veinmosaic.force import (
    LoadField,
    correction_factors,
    depth_deviation_field,
    lateral_strain,
    load_field,
    radial_source_scale,
    rectify_image,
    tilt_angles,
    tilt_normal,
    tilt_state,
    total_force,
)


def fs(f1, f2, f3, f4, frame_id=1):
    return ForceSample(frame_id, f1, f2, f3, f4)


class TestTotalForce:
    @pytest.mark.parametrize(
        "forces,expected",
        [((1, 2, 3, 4), 10.0), ((5, 5, 5, 5), 20.0), ((0, 0, 0, 0), 0.0)],
    )
    def test_sum(self, forces, expected):
        assert total_force(fs(*forces)) == expected


class TestTiltAngles:
    def test_symmetric_forces_level(self, material):
        assert tilt_angles(fs(3, 3, 7, 7), material) == (0.0, pytest.approx(0.0))

    def test_closed_form_value(self, material):
        # independent evaluation: asin(190.8 / (2 * 18 * 53)) = asin(0.1)
        sample = fs(0.0, 190.8, 0.0, 0.0)
        tx, _ = tilt_angles(sample, material)
        assert tx == pytest.approx(math.asin(0.1), abs=1e-12)
        assert math.degrees(tx) == pytest.approx(5.739, abs=1e-3)

    def test_out_of_domain(self, material):
        huge = 2 * material.hooke_constant * material.sensor_sep_x + 1.0
        with pytest.raises(SensorDomainError):
            tilt_angles(fs(0.0, huge, 0.0, 0.0), material)

    def test_antisymmetry(self, material):
        rng = np.random.default_rng(0)
        for _ in range(50):
            f = rng.uniform(0, 40, size=4)
            tx, ty = tilt_angles(fs(*f), material)
            sx, sy = tilt_angles(fs(f[1], f[0], f[2], f[3]), material)
            assert sx == -tx and sy == ty
            ux, uy = tilt_angles(fs(f[0], f[1], f[3], f[2]), material)
            assert uy == -ty and ux == tx


class TestTiltNormal:
    def test_identity(self):
        assert np.allclose(tilt_normal(0.0, 0.0), [0.0, 0.0, 1.0])

    def test_matrix_evaluation_x(self):
        # oracle: Rx(30 deg) @ (0, 0, 1) = (0, -sin 30, cos 30)
        u = tilt_normal(math.radians(30.0), 0.0)
        assert np.allclose(u, [0.0, -0.5, math.sqrt(3) / 2], atol=1e-12)

    def test_matrix_evaluation_y(self):
        u = tilt_normal(0.0, math.radians(30.0))
        assert np.allclose(u, [0.5, 0.0, math.sqrt(3) / 2], atol=1e-12)

    def test_unit_norm(self):
        rng = np.random.default_rng(1)
        for tx, ty in rng.uniform(-1.2, 1.2, size=(50, 2)):
            assert abs(np.linalg.norm(tilt_normal(tx, ty)) - 1.0) < 1e-12

    def test_state_invariants(self, material):
        state = tilt_state(fs(2, 2, 2, 2), material)
        assert state.total_force == 8.0
        assert np.allclose(state.tilt_normal, [0, 0, 1])


class TestDepthDeviation:
    def test_no_tilt_zero_field(self):
        dev = depth_deviation_field(np.array([0.0, 0.0, 1.0]), 64, 48, 0.05)
        assert dev.shape == (48, 64)
        assert np.all(dev == 0.0)

    def test_plane_equation_value(self):
        # oracle: at (X=0, Y=10mm), Z = -(-0.5 * 10) / 0.866 = +5.7735
        u = tilt_normal(math.radians(30.0), 0.0)
        pitch = 1.0
        dev = depth_deviation_field(u, 21, 41, pitch)
        # row 30 is Y = +10 mm from the centre (row 20)
        assert dev[30, 10] == pytest.approx(10.0 * 0.5 / (math.sqrt(3) / 2), abs=1e-9)

    def test_antisymmetric(self):
        u = tilt_normal(0.3, -0.2)
        dev = depth_deviation_field(u, 33, 27, 0.1)
        assert np.allclose(dev, -dev[::-1, ::-1], atol=1e-12)

    def test_grazing_tilt(self):
        with pytest.raises(GrazingTiltError):
            depth_deviation_field(np.array([0.9995, 0.0, 0.03]), 10, 10, 0.1)


class TestLoadField:
    def test_zero_tilt_constant(self):
        lf = load_field(10.0, np.zeros((5, 7)), 18.0)
        assert np.all(lf.load == 10.0)
        assert (lf.height, lf.width) == (5, 7)

    def test_linear_evaluation(self):
        dev = np.full((3, 3), 0.5)
        assert load_field(10.0, dev, 18.0).load[0, 0] == pytest.approx(19.0)

    def test_clamped_at_zero(self):
        dev = np.full((3, 3), -1.0)
        assert np.all(load_field(10.0, dev, 18.0).load == 0.0)


class TestLateralStrain:
    def test_zero_stress(self, material):
        assert lateral_strain(0.0, material) == 0.0

    def test_scalar_evaluation(self, material):
        sigma = 10.0 / material.scanner_area
        eps = lateral_strain(sigma, material)
        assert eps == pytest.approx(-0.5 * sigma / 16100.0, rel=1e-12)
        assert eps == pytest.approx(-0.064700, abs=5e-5)

    def test_compression_gives_negative_strain(self, material):
        assert lateral_strain(100.0, material) < 0.0


def checkerboard(w=96, h=80, block=8):
    ys, xs = np.mgrid[0:h, 0:w]
    data = (((xs // block) + (ys // block)) % 2 * 155 + 50).astype(np.uint8)
    return Image(data)


class TestRectifyImage:
    def test_identity_at_rest_bit_exact(self, material, intrinsics):
        img = checkerboard()
        lf = LoadField(np.zeros(img.shape))
        out_nn = rectify_image(img, lf, material, intrinsics, interpolation="nearest")
        assert np.array_equal(out_nn.data, img.data)
        out_bl = rectify_image(img, lf, material, intrinsics)
        err = np.abs(out_bl.data.astype(float) - img.data.astype(float)).mean()
        assert err <= 1e-6

    def test_uniform_load_scalar_value(self, material, intrinsics):
        # oracle: r = r' (1 - 0.5 * 10 / (16100 * 0.0048)) = 0.935300 r'
        factor = 1.0 - 0.5 * 10.0 / (16100.0 * 0.0048)
        assert 100.0 * factor == pytest.approx(93.53, abs=5e-3)
        lf = load_field(10.0, np.zeros((480, 640)), material.hooke_constant)
        g = correction_factors(lf, material)
        assert np.allclose(g, factor, atol=1e-12)

    def test_consistency_with_lateral_strain(self, material):
        # uniform load: per-pixel scale equals 1 + strain at sigma = F/A
        for fz in (2.0, 10.0, 17.5):
            lf = load_field(fz, np.zeros((8, 8)), material.hooke_constant)
            g = correction_factors(lf, material)
            eps = lateral_strain(fz / material.scanner_area, material)
            assert np.allclose(g, 1.0 + eps, atol=1e-12)

    def test_fold_over_detected(self, material, intrinsics):
        img = checkerboard()
        limit = material.youngs_modulus * material.scanner_area / material.poisson_ratio
        lf = LoadField(np.full(img.shape, limit + 1.0))
        with pytest.raises(FoldOverError):
            rectify_image(img, lf, material, intrinsics)

    def test_dimension_mismatch(self, material, intrinsics):
        with pytest.raises(ValueError):
            rectify_image(checkerboard(), LoadField(np.zeros((3, 3))), material, intrinsics)

    def test_radial_monotonicity_and_center_fixed_point(self, material, intrinsics):
        # uniform load below fold-over: r(r') strictly increasing, centre fixed
        lf = load_field(12.0, np.zeros((480, 640)), material.hooke_constant)
        s = radial_source_scale(lf, material, intrinsics)
        xs = np.arange(0, 320, 7, dtype=float)
        r_out = xs  # radii along the +x ray from the principal point
        iy = int(round(intrinsics.cy))
        src_r = s[iy, (intrinsics.cx + xs).astype(int)] * r_out
        assert np.all(np.diff(src_r) > 0)
        centre = s[iy, int(round(intrinsics.cx))] * 0.0
        assert centre == 0.0

    def test_solver_matches_bisection_oracle(self, material, intrinsics):
        # independent oracle: solve r' g(r') = r by bisection along rays
        rng = np.random.default_rng(42)
        u = tilt_normal(math.radians(6.0), math.radians(-4.0))
        dev = depth_deviation_field(u, 640, 480, intrinsics.pixel_pitch)
        lf = load_field(12.0, dev, material.hooke_constant)
        g = correction_factors(lf, material)
        s = radial_source_scale(lf, material, intrinsics)

        def g_at(x, y):
            xi = np.clip(x, 0, 639)
            yi = np.clip(y, 0, 479)
            x0, y0 = int(xi), int(yi)
            x1, y1 = min(x0 + 1, 639), min(y0 + 1, 479)
            fx, fy = xi - x0, yi - y0
            return (
                g[y0, x0] * (1 - fx) * (1 - fy)
                + g[y0, x1] * fx * (1 - fy)
                + g[y1, x0] * (1 - fx) * fy
                + g[y1, x1] * fx * fy
            )

        for _ in range(60):
            px = float(rng.integers(40, 600))
            py = float(rng.integers(40, 440))
            r = math.hypot(px - intrinsics.cx, py - intrinsics.cy)
            if r < 1.0:
                continue
            dx = (px - intrinsics.cx) / r
            dy = (py - intrinsics.cy) / r

            def fwd(rp):
                return rp * g_at(intrinsics.cx + rp * dx, intrinsics.cy + rp * dy)

            lo, hi = 0.0, 2.0 * r + 10.0
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if fwd(mid) < r:
                    lo = mid
                else:
                    hi = mid
            r_prime_oracle = 0.5 * (lo + hi)
            r_prime_module = s[int(py), int(px)] * r
            assert abs(r_prime_module - r_prime_oracle) < 2e-3
