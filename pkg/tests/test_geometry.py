import numpy as np
import pytest
from scipy import stats

from cryoabi import geometry as geo
from cryoabi.errors import DegenerateInput, EmptyInput, OutOfHemisphere


class TestS2S2:
    def test_orthonormal_input_is_fixed_point(self):
        r = geo.rotation_from_s2s2([1, 0, 0, 0, 1, 0])
        np.testing.assert_allclose(r, np.eye(3), atol=1e-12)

    def test_scale_is_removed(self):
        r = geo.rotation_from_s2s2([2, 0, 0, 0, 3, 0])
        np.testing.assert_allclose(r, np.eye(3), atol=1e-12)

    def test_oblique_second_half(self):
        r = geo.rotation_from_s2s2([1, 0, 0, 1, 1, 0])
        np.testing.assert_allclose(r[:, 0], [1, 0, 0], atol=1e-12)
        np.testing.assert_allclose(r[:, 2], [0, 0, 1], atol=1e-12)

    def test_positive_scaling_invariance(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            p = rng.normal(size=6)
            r = geo.rotation_from_s2s2(p)
            q = p.copy()
            q[:3] *= rng.uniform(0.1, 10)
            q[3:] *= rng.uniform(0.1, 10)
            np.testing.assert_allclose(geo.rotation_from_s2s2(q), r, atol=1e-12)

    def test_output_always_rotation(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            r = geo.rotation_from_s2s2(rng.normal(size=6))
            assert geo.is_rotation(r, tol=1e-9)

    @pytest.mark.parametrize("p", [
        [0, 0, 0, 0, 1, 0],
        [1, 0, 0, 0, 0, 0],
        [1, 0, 0, 2, 0, 0],
        [1, 0, 0, -3, 0, 0],
    ])
    def test_degenerate_inputs(self, p):
        with pytest.raises(DegenerateInput):
            geo.rotation_from_s2s2(p)

    def test_vjp_matches_finite_differences(self):
        rng = np.random.default_rng(23)
        h = 1e-6
        for _ in range(25):
            p = rng.normal(size=6)
            up = rng.normal(size=(3, 3))
            g = geo.rotation_from_s2s2_vjp(p, up)
            fd = np.empty(6)
            for j in range(6):
                dp = np.zeros(6)
                dp[j] = h
                fp = np.sum(up * geo.rotation_from_s2s2(p + dp))
                fm = np.sum(up * geo.rotation_from_s2s2(p - dp))
                fd[j] = (fp - fm) / (2 * h)
            np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


class TestAxisAngle:
    def test_zero_gives_identity(self):
        np.testing.assert_allclose(geo.rotation_from_axis_angle([0, 0, 0]), np.eye(3))

    def test_quarter_turn_about_z(self):
        r = geo.rotation_from_axis_angle([0, 0, np.pi / 2])
        np.testing.assert_allclose(r @ [1, 0, 0], [0, 1, 0], atol=1e-12)

    def test_angle_recovery(self):
        w = np.array([0.1, 0.2, 0.3])
        r = geo.rotation_from_axis_angle(w)
        assert geo.geodesic_degrees(r, np.eye(3)) == pytest.approx(
            np.degrees(np.linalg.norm(w)), abs=1e-9)

    def test_negation_is_transpose(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            w = rng.normal(size=3)
            w *= rng.uniform(0, 3.1) / np.linalg.norm(w)
            a = geo.rotation_from_axis_angle(-w)
            b = geo.rotation_from_axis_angle(w).T
            np.testing.assert_allclose(a, b, atol=1e-9)

    def test_series_branch_continuity(self):
        for eps in (0.99e-4, 1.01e-4):
            w = np.array([eps, 0, 0])
            r = geo.rotation_from_axis_angle(w)
            assert geo.is_rotation(r, tol=1e-12)


class TestAxisAngleJacobian:
    @staticmethod
    def _fd_blocks(w, h=1e-6):
        fd = np.empty((3, 3, 3))
        for j in range(3):
            dw = np.zeros(3)
            dw[j] = h
            diff = (geo.rotation_from_axis_angle(w + dw)
                    - geo.rotation_from_axis_angle(w - dw)) / (2 * h)
            for i in range(3):
                fd[i, :, j] = diff[:, i]
        return fd

    def test_zero_angle_limit(self):
        blocks = geo.axis_angle_jacobian(np.zeros(3))
        for i, e in enumerate(np.eye(3)):
            np.testing.assert_allclose(blocks[i], -geo.skew(e), atol=1e-15)

    def test_against_finite_differences_across_scales(self):
        rng = np.random.default_rng(7)
        for scale in (1e-9, 1e-5, 0.1, 1.0, 3.0):
            for _ in range(200):
                v = rng.normal(size=3)
                w = v / np.linalg.norm(v) * scale * rng.uniform(0.3, 1.0)
                ana = geo.axis_angle_jacobian(w)
                fd = self._fd_blocks(w)
                np.testing.assert_allclose(ana, fd, atol=1e-5, rtol=1e-5)

    def test_near_zero_is_finite(self):
        blocks = geo.axis_angle_jacobian([1e-8, 0, 0])
        assert np.all(np.isfinite(blocks))
        np.testing.assert_allclose(blocks, self._fd_blocks(np.array([1e-8, 0, 0])),
                                   atol=1e-5)


class TestGeodesic:
    def test_identity(self):
        assert geo.geodesic_degrees(np.eye(3), np.eye(3)) == 0.0

    def test_half_turn(self):
        r = geo.rotation_from_axis_angle([0, 0, np.pi - 1e-12])
        assert geo.geodesic_degrees(np.eye(3), r) == pytest.approx(180.0, abs=1e-4)

    def test_inplane_composition(self):
        a = geo.rotation_about_z(np.radians(30))
        b = geo.rotation_about_z(np.radians(70))
        assert geo.geodesic_degrees(a, b) == pytest.approx(40.0, abs=1e-9)

    def test_symmetry_and_bi_invariance(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            a = geo.sample_uniform_rotation(rng)
            b = geo.sample_uniform_rotation(rng)
            q = geo.sample_uniform_rotation(rng)
            d = geo.geodesic_degrees(a, b)
            assert geo.geodesic_degrees(b, a) == pytest.approx(d, abs=1e-9)
            assert geo.geodesic_degrees(q @ a, q @ b) == pytest.approx(d, abs=1e-9)
            assert geo.geodesic_degrees(a @ q, b @ q) == pytest.approx(d, abs=1e-9)


class TestHaarSampling:
    def test_determinism(self):
        a = [geo.sample_uniform_rotation(np.random.default_rng(42)) for _ in range(3)]
        b = [geo.sample_uniform_rotation(np.random.default_rng(42)) for _ in range(3)]
        np.testing.assert_array_equal(np.array(a), np.array(b))

    def test_mean_trace(self):
        # Haar expectation of the trace is 0: E[R] vanishes by invariance.
        rng = np.random.default_rng(123)
        total = 0.0
        n = 10**5
        for _ in range(n):
            total += np.trace(geo.sample_uniform_rotation(rng))
        assert abs(total / n) < 0.02

    def test_third_column_uniform_on_sphere(self):
        rng = np.random.default_rng(321)
        n = 10**5
        dirs = np.empty((n, 3))
        for i in range(n):
            dirs[i] = geo.sample_uniform_rotation(rng)[:, 2]
        grid = geo.sphere_grid(2)
        counts = np.bincount(grid.lookup(dirs), minlength=grid.n_cells)
        chi2 = np.sum((counts - n / grid.n_cells) ** 2 / (n / grid.n_cells))
        p = stats.chi2.sf(chi2, df=grid.n_cells - 1)
        assert p > 0.01


class TestSphereGrid:
    def test_level1_twelve_cells(self):
        grid = geo.sphere_grid(1)
        assert grid.n_cells == 12
        assert grid.cell_area == pytest.approx(np.pi / 3, rel=1e-12)

    def test_total_area(self):
        for level in (1, 2, 3):
            grid = geo.sphere_grid(level)
            assert grid.n_cells * grid.cell_area == pytest.approx(4 * np.pi, abs=1e-9)

    def test_centers_unit_norm(self):
        grid = geo.sphere_grid(3)
        np.testing.assert_allclose(np.linalg.norm(grid.centers, axis=1), 1.0, atol=1e-12)

    @pytest.mark.parametrize("level", [1, 2, 3, 4])
    def test_lookup_fixed_point(self, level):
        grid = geo.sphere_grid(level)
        np.testing.assert_array_equal(grid.lookup(grid.centers), np.arange(grid.n_cells))

    def test_occupancy_uniformity(self):
        rng = np.random.default_rng(17)
        v = rng.normal(size=(10**6, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        grid = geo.sphere_grid(3)
        counts = np.bincount(grid.lookup(v), minlength=grid.n_cells)
        assert counts.min() > 0
        assert counts.max() / counts.min() <= 1.2


class TestGnomonic:
    def test_center_maps_to_origin(self):
        c = np.array([0.0, 0.0, 1.0])
        np.testing.assert_allclose(geo.gnomonic_project(c, c), [0, 0], atol=1e-12)

    def test_45_degrees_radius_one(self):
        c = np.array([0.0, 0.0, 1.0])
        d = np.array([np.sin(np.pi / 4), 0.0, np.cos(np.pi / 4)])
        xy = geo.gnomonic_project(d, c)
        assert np.linalg.norm(xy) == pytest.approx(1.0, abs=1e-12)

    def test_antipodal_raises(self):
        c = np.array([0.0, 0.0, 1.0])
        with pytest.raises(OutOfHemisphere):
            geo.gnomonic_project(-c, c)


class TestAlignRotations:
    @staticmethod
    def _random_set(rng, n):
        return np.stack([geo.sample_uniform_rotation(rng) for _ in range(n)])

    def test_identical_sets(self):
        rng = np.random.default_rng(1)
        gt = self._random_set(rng, 40)
        rep = geo.align_rotations(gt, gt)
        assert not rep.flipped
        # arccos conditioning floors the per-pair angle at ~1e-6 deg
        assert rep.errors_deg.max() < 1e-4
        np.testing.assert_allclose(rep.rotation, np.eye(3), atol=1e-6)

    def test_left_planted_rotation(self):
        rng = np.random.default_rng(2)
        gt = self._random_set(rng, 60)
        q = geo.sample_uniform_rotation(rng)
        pred = np.einsum("ab,nbc->nac", q, gt)
        rep = geo.align_rotations(pred, gt)
        assert not rep.flipped
        assert rep.errors_deg.max() < 0.5

    def test_right_planted_rotation(self):
        rng = np.random.default_rng(3)
        gt = self._random_set(rng, 60)
        q = geo.sample_uniform_rotation(rng)
        pred = np.einsum("nab,bc->nac", gt, q)
        rep = geo.align_rotations(pred, gt)
        assert not rep.flipped
        assert rep.side == "right"
        assert rep.errors_deg.max() < 0.5

    def test_planted_mirror(self):
        rng = np.random.default_rng(4)
        gt = self._random_set(rng, 60)
        q = geo.sample_uniform_rotation(rng)
        m = geo.MIRROR
        pred = np.einsum("ab,nbc,cd,de->nae", m, gt, m, q)
        rep = geo.align_rotations(pred, gt)
        assert rep.flipped
        assert rep.errors_deg.max() < 0.5

    def test_gauge_invariance_of_errors(self):
        # Within each search branch the aligned error statistics are exactly
        # invariant under a common rotation applied on that branch's side.
        rng = np.random.default_rng(5)
        gt = self._random_set(rng, 30)
        noise = [geo.rotation_from_axis_angle(rng.normal(scale=0.01, size=3)) for _ in range(30)]
        pred = np.stack([n @ g for n, g in zip(noise, gt)])
        base = geo.align_rotations(pred, gt).branch_stats
        q = geo.sample_uniform_rotation(rng)

        moved_left = np.einsum("ab,nbc->nac", q, pred)
        left = geo.align_rotations(moved_left, gt).branch_stats
        assert left["unflipped_left"]["mean_deg"] == pytest.approx(
            base["unflipped_left"]["mean_deg"], abs=1e-6)

        moved_right = np.einsum("nab,bc->nac", pred, q)
        right = geo.align_rotations(moved_right, gt).branch_stats
        assert right["unflipped_right"]["mean_deg"] == pytest.approx(
            base["unflipped_right"]["mean_deg"], abs=1e-6)

    def test_winner_invariance_for_pure_gauge_sets(self):
        rng = np.random.default_rng(6)
        gt = self._random_set(rng, 30)
        q = geo.sample_uniform_rotation(rng)
        for moved in (np.einsum("ab,nbc->nac", q, gt), np.einsum("nab,bc->nac", gt, q)):
            rep = geo.align_rotations(moved, gt)
            assert rep.errors_deg.max() < 1e-4

    def test_empty_raises(self):
        with pytest.raises(EmptyInput):
            geo.align_rotations(np.empty((0, 3, 3)), np.empty((0, 3, 3)))


class TestFrames:
    def test_direction_frame_is_rotation(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            d = rng.normal(size=3)
            f = geo.direction_frame(d)
            assert geo.is_rotation(f, tol=1e-9)
            np.testing.assert_allclose(f[:, 2], d / np.linalg.norm(d), atol=1e-12)

    def test_rotation_with_view_round_trip(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            r = geo.rotation_with_view(d, rng.uniform(0, 2 * np.pi))
            assert geo.is_rotation(r, tol=1e-9)
            np.testing.assert_allclose(geo.viewing_direction(r), d, atol=1e-9)

    def test_reorthonormalize_fixes_drift(self):
        rng = np.random.default_rng(10)
        r = geo.sample_uniform_rotation(rng)
        drifted = r + rng.normal(scale=1e-5, size=(3, 3))
        fixed = geo.reorthonormalize(drifted)
        assert geo.is_rotation(fixed, tol=1e-12)
        assert geo.geodesic_degrees(fixed, r) < 0.01
