"""Metric, chart, density, and cover tests for the geometry layer.

Independent oracles: the Bloch-sphere model of CP^1 (distance equals half
the central angle between Bloch vectors) and radial Gauss-Legendre
quadrature of the volume density, which must recover pi^m/m!.
"""

import math

import numpy as np
import pytest

from flatsections import geometry as G


def _rand_point(rng, m):
    return G.ProjectivePoint.from_vector(
        rng.normal(size=m + 1) + 1j * rng.normal(size=m + 1)
    )


def _bloch(z):
    a, b = z.homogeneous
    return np.array(
        [
            2 * (a.conjugate() * b).real,
            2 * (a.conjugate() * b).imag,
            abs(a) ** 2 - abs(b) ** 2,
        ]
    )


class TestPointsAndDistance:
    def test_canonical_representative(self):
        p = G.ProjectivePoint.from_vector([2j, 2.0])
        assert abs(p.homogeneous[0].imag) < 1e-15
        assert p.homogeneous[0].real > 0
        assert abs(np.linalg.norm(p.homogeneous) - 1.0) < 1e-14
        q = G.ProjectivePoint.from_vector([1.0, -1j])
        assert p.almost_equal(q)

    def test_canonical_rep_is_phase_invariant(self):
        rng = np.random.default_rng(3)
        v = rng.normal(size=4) + 1j * rng.normal(size=4)
        p = G.ProjectivePoint.from_vector(v)
        q = G.ProjectivePoint.from_vector(v * np.exp(1j * 1.234) * 5.0)
        assert np.allclose(p.homogeneous, q.homogeneous, atol=1e-13)

    def test_rejects_zero_vector(self):
        with pytest.raises(G.GeometryError):
            G.ProjectivePoint.from_vector([0.0, 0.0])

    def test_distance_example(self):
        p = G.ProjectivePoint.from_vector([1, 0])
        q = G.ProjectivePoint.from_vector([1, 1])
        assert abs(G.fs_distance(p, q) - math.pi / 4) < 1e-14

    def test_distance_range_and_symmetry(self):
        rng = np.random.default_rng(0)
        for m in (1, 2, 4):
            for _ in range(40):
                x, y = _rand_point(rng, m), _rand_point(rng, m)
                d = G.fs_distance(x, y)
                assert 0.0 <= d <= math.pi / 2 + 1e-15
                assert abs(d - G.fs_distance(y, x)) < 1e-15
        e0 = G.standard_point(2, 0)
        e1 = G.standard_point(2, 1)
        assert abs(G.fs_distance(e0, e1) - math.pi / 2) < 1e-15

    def test_distance_against_bloch_sphere_oracle(self):
        # CP^1 with this normalization is a round 2-sphere of radius 1/2:
        # distance = half the angle between Bloch vectors.
        rng = np.random.default_rng(1)
        for _ in range(300):
            x, y = _rand_point(rng, 1), _rand_point(rng, 1)
            cosang = np.clip(np.dot(_bloch(x), _bloch(y)), -1.0, 1.0)
            assert abs(G.fs_distance(x, y) - 0.5 * math.acos(cosang)) < 1e-12

    def test_triangle_inequality(self):
        rng = np.random.default_rng(2)
        for m in (1, 3):
            for _ in range(200):
                x, y, z = (_rand_point(rng, m) for _ in range(3))
                assert G.fs_distance(x, z) <= (
                    G.fs_distance(x, y) + G.fs_distance(y, z) + 1e-12
                )

    def test_vectorized_distances_match_scalar(self):
        rng = np.random.default_rng(4)
        pts = [_rand_point(rng, 2) for _ in range(8)]
        arr = np.stack([p.homogeneous for p in pts])
        d = G.fs_distance_vectors(arr, arr)
        for i in range(8):
            for j in range(8):
                assert abs(d[i, j] - G.fs_distance(pts[i], pts[j])) < 1e-12


class TestChartsAndExpLog:
    def test_frame_is_orthonormal_and_horizontal(self):
        rng = np.random.default_rng(5)
        for m in (1, 2, 5):
            p = _rand_point(rng, m)
            ch = G.make_chart(p, G.BallRegion(0.3), 1.1)
            f = ch.frame_matrix
            assert f.shape == (m + 1, m)
            assert np.allclose(f.conj().T @ f, np.eye(m), atol=1e-13)
            assert np.max(np.abs(f.conj().T @ p.homogeneous)) < 1e-13

    def test_exp_is_radial_isometry(self):
        rng = np.random.default_rng(6)
        for m in (1, 2, 3):
            ch = G.make_chart(_rand_point(rng, m), G.BallRegion(0.7), 1.3)
            for _ in range(60):
                v = rng.normal(size=2 * m)
                v *= rng.uniform(0.0, 0.69) / np.linalg.norm(v)
                z = G.exp_map(ch, v)
                assert abs(G.fs_distance(ch.center, z) - np.linalg.norm(v)) < 1e-12

    def test_log_inverts_exp(self):
        rng = np.random.default_rng(7)
        for m in (1, 2, 4):
            ch = G.make_chart(_rand_point(rng, m), G.BallRegion(0.75), 1.3)
            for _ in range(60):
                v = rng.normal(size=2 * m)
                v *= rng.uniform(0.0, 0.74) / np.linalg.norm(v)
                w = G.log_map(ch, G.exp_map(ch, v))
                assert np.max(np.abs(v - w)) < 1e-10

    def test_log_of_generic_point(self):
        # log of any point short of the cut locus, re-exponentiated by the
        # raw geodesic formula (no region gate), lands back on the point
        rng = np.random.default_rng(8)
        ch = G.make_chart(_rand_point(rng, 2), G.BallRegion(0.7), 1.2)
        for _ in range(40):
            z = _rand_point(rng, 2)
            if G.fs_distance(ch.center, z) >= math.pi / 2 - 1e-6:
                continue
            v = G.log_map(ch, z)
            back = G.ProjectivePoint.from_vector(
                G.exp_chart_vectors(ch, v[None, :])[0]
            )
            assert back.almost_equal(z, tol=1e-10)

    def test_exp_rejects_far_vectors(self):
        ch = G.make_chart(G.standard_point(1), G.BallRegion(0.2), 1.05)
        with pytest.raises(G.GeometryError):
            G.exp_map(ch, [1.0, 1.0])

    def test_log_rejects_cut_locus(self):
        ch = G.make_chart(G.standard_point(1, 0), G.BallRegion(0.2), 1.05)
        with pytest.raises(G.GeometryError):
            G.log_map(ch, G.standard_point(1, 1))

    def test_distortion_tiny_region_is_isometric(self):
        rng = np.random.default_rng(9)
        ch = G.make_chart(
            _rand_point(rng, 1), G.CubeRegion(0.01 / math.sqrt(2)), 1.01
        )
        assert G.distortion_estimate(ch, nsamples=4000) <= 1.001

    def test_distortion_disc_example(self):
        # disc of radius pi/8: distortion stays under 1.2 (the sampled
        # value approaches 2r/sin(2r) ~ 1.11 from below)
        ch = G.make_chart(G.standard_point(1), G.BallRegion(math.pi / 8), 1.2)
        g = G.distortion_estimate(ch, nsamples=20000)
        assert 1.0 <= g < 1.2
        assert g <= (math.pi / 4) / math.sin(math.pi / 4) + 1e-9

    def test_distortion_is_deterministic_per_seed(self):
        ch = G.make_chart(G.standard_point(1), G.BallRegion(0.3), 1.1)
        a = G.distortion_estimate(ch, nsamples=2000, seed=11)
        b = G.distortion_estimate(ch, nsamples=2000, seed=11)
        assert a == b


class TestDensityAndVolume:
    def test_density_at_zero_and_positivity(self):
        for m in (1, 2, 3):
            assert G.volume_density(m, 0.0) == 1.0
            r = np.linspace(1e-6, math.pi / 2 - 1e-6, 200)
            assert np.all(G.volume_density(m, r) > 0)

    def test_density_small_radius_expansion(self):
        # g(r) = 1 - (m+1) r^2 / 3 + O(r^4)
        for m in (1, 2, 4):
            for r in (1e-3, 2e-3):
                g = G.volume_density(m, r)
                assert abs(g - (1.0 - (m + 1) * r**2 / 3.0)) < 5 * r**4

    def test_radial_quadrature_recovers_total_volume(self):
        for m in (1, 2):
            model = G.ManifoldModel(m)
            v = G.volume_by_radial_quadrature(m)
            assert abs(v - model.volume) < 1e-6

    def test_ball_volume_formula(self):
        assert abs(G.ball_volume(1, math.pi / 2) - math.pi) < 1e-15
        # small balls are Euclidean: pi^m r^{2m} / m!
        for m in (1, 2):
            r = 1e-3
            euclid = math.pi**m * r ** (2 * m) / math.factorial(m)
            assert abs(G.ball_volume(m, r) / euclid - 1.0) < 1e-5

    def test_ball_volume_matches_radial_quadrature(self):
        for m in (1, 2):
            for rad in (0.3, 0.7):
                q = G.volume_by_radial_quadrature(m, r_max=rad)
                assert abs(q - G.ball_volume(m, rad)) < 1e-10


class TestCovers:
    @pytest.mark.parametrize("rho", [0.35, 0.2])
    def test_latlon_cover_is_exact_partition(self, rho):
        charts = G.cp1_latlon_cover(rho)
        assert G.covering_defect(1, charts) < 1e-12
        # cells fit in discs of radius rho about their centers
        for ch in charts:
            assert ch.region.circumradius(1) <= rho + 1e-9
        # declared distortion dominates a sampled estimate
        for i, ch in enumerate(charts[:: max(1, len(charts) // 6)]):
            assert G.distortion_estimate(ch, nsamples=2500, seed=i) <= ch.gamma

    def test_latlon_cells_are_disjoint(self):
        charts = G.cp1_latlon_cover(0.35)
        rng = np.random.default_rng(12)
        pts = np.stack(
            [_rand_point(rng, 1).homogeneous for _ in range(500)]
        )
        r, theta = G.latlon_coords(pts)
        hits = np.zeros(len(pts), dtype=int)
        for ch in charts:
            cell = ch.region
            in_r = (r >= cell.r_lo) & (r < cell.r_hi)
            if cell.r_hi >= math.pi / 2:
                in_r = (r >= cell.r_lo) & (r <= math.pi / 2)
            if cell.theta_hi - cell.theta_lo >= 2 * math.pi - 1e-12:
                hits += in_r
            else:
                hits += in_r & (theta >= cell.theta_lo) & (theta < cell.theta_hi)
        assert np.all(hits == 1)

    def test_cell_membership_through_chart(self):
        charts = G.cp1_latlon_cover(0.35)
        ch = charts[3]
        assert bool(ch.region.contains(ch, np.zeros((1, 2)))[0])

    def test_cp2_ball_cover_disjoint(self):
        charts = G.cp2_ball_cover()
        assert len(charts) == 7
        rad = charts[0].region.radius
        for i, a in enumerate(charts):
            for b in charts[i + 1 :]:
                assert G.fs_distance(a.center, b.center) > 2 * rad + 0.1

    def test_cp2_cover_defect_positive(self):
        charts = G.cp2_ball_cover()
        defect = G.covering_defect(2, charts)
        model = G.ManifoldModel(2)
        assert 0 < defect < model.volume
        covered = model.volume - defect
        assert abs(covered - 7 * G.ball_volume(2, 0.4)) < 1e-12

    def test_two_cap_cover_defect(self):
        charts = G.two_cap_cover(1, math.pi / 5)
        defect = G.covering_defect(1, charts)
        expect = math.pi - 2 * G.ball_volume(1, math.pi / 5)
        assert abs(defect - expect) < 1e-12
        assert defect < 1.0
