import numpy as np
import pytest

from sdotinf import (
    EmptyCell,
    MaxIterationsExceeded,
    NotInterior,
    ReferenceMeasure,
    SiteSet,
    SupportRegion,
    UnsupportedExactDimension,
    cell_masses,
    dual_gradient,
    dual_hessian_reduced,
    dual_objective,
    dual_sensitivity,
    locate,
    normalize_potential,
    solve_dual,
)


def reduced_gradient(z, q, R, sites):
    g = dual_gradient(z, q, R, sites)
    return g[:-1] - g[-1]


class TestObjective:
    def test_single_site_quadratic_moment(self):
        # integral of 0.5*y^2 over Unif[0,1] is 1/6
        sites = SiteSet(np.array([[0.0]]))
        R = ReferenceMeasure.uniform(SupportRegion.interval(0.0, 1.0))
        val = dual_objective(np.zeros(1), np.array([1.0]), R, sites)
        assert val == pytest.approx(1.0 / 6.0, abs=1e-12)

    def test_maximum_at_solution(self, canonical_1d):
        sites, R, p, z_star = canonical_1d
        best = dual_objective(z_star, p, R, sites)
        rng = np.random.default_rng(0)
        for _ in range(100):
            z = normalize_potential(rng.normal(size=2))
            assert dual_objective(z, p, R, sites) <= best + 1e-12

    def test_shift_invariance(self, canonical_1d):
        sites, R, p, z_star = canonical_1d
        rng = np.random.default_rng(1)
        z = rng.normal(size=2)
        for c in (-0.7, 0.3, 2.0):
            v0 = dual_objective(z, p, R, sites)
            v1 = dual_objective(z + c, p, R, sites)
            assert v1 == pytest.approx(v0, abs=1e-12)


class TestGradient:
    def test_zero_at_solution(self, canonical_1d):
        sites, R, p, z_star = canonical_1d
        g = dual_gradient(z_star, p, R, sites)
        assert np.max(np.abs(g)) <= 1e-10

    def test_empty_cell_component_equals_weight(self):
        sites = SiteSet(np.array([[0.0], [1.0]]))
        R = ReferenceMeasure.uniform(SupportRegion.interval(0.0, 1.0))
        q = np.array([0.4, 0.6])
        g = dual_gradient(np.array([-1.0, 1.0]), q, R, sites)
        assert g[0] == pytest.approx(0.4, abs=1e-14)

    def test_symmetric_two_site(self, symmetric_2site_2d):
        sites, R, p = symmetric_2site_2d
        g = dual_gradient(np.zeros(2), p, R, sites)
        np.testing.assert_allclose(g, 0.0, atol=1e-14)

    def test_components_sum_to_zero(self, three_site_2d):
        sites, R, p, z_star = three_site_2d
        rng = np.random.default_rng(7)
        for _ in range(10):
            g = dual_gradient(0.2 * rng.normal(size=3), p, R, sites)
            assert abs(g.sum()) <= 1e-9


class TestHessian:
    def test_canonical_analytic_value(self, canonical_1d):
        # reduced objective in w = z1 (z2 = -w): boundary c(w) = 1/2 + 2w,
        # reduced gradient 2*(q1 - c(w)), second derivative -4
        sites, R, p, z_star = canonical_1d
        H = dual_hessian_reduced(z_star, R, sites)
        assert H.shape == (1, 1)
        assert H[0, 0] == pytest.approx(-4.0, abs=1e-12)

    @pytest.mark.parametrize("problem", ["canonical", "three_site"])
    def test_matches_finite_differences(self, problem, canonical_1d,
                                        three_site_2d):
        if problem == "canonical":
            sites, R, p, z_star = canonical_1d
        else:
            sites, R, p, z_star = three_site_2d
        H = dual_hessian_reduced(z_star, R, sites)
        w0 = z_star[:-1]
        step = 1e-5
        fd = np.zeros_like(H)
        for k in range(sites.n - 1):
            e = np.zeros(sites.n - 1)
            e[k] = step
            zp = np.concatenate([w0 + e, [-np.sum(w0 + e)]])
            zm = np.concatenate([w0 - e, [-np.sum(w0 - e)]])
            fd[:, k] = (reduced_gradient(zp, p, R, sites)
                        - reduced_gradient(zm, p, R, sites)) / (2 * step)
        assert np.max(np.abs(fd - H)) <= 1e-3 * max(1.0, np.max(np.abs(H)))

    def test_symmetry_and_negative_definiteness(self):
        rng = np.random.default_rng(13)
        sites = SiteSet(rng.uniform(0, 1, size=(5, 2)))
        R = ReferenceMeasure.uniform(SupportRegion.box([0, 0], [1, 1]))
        p = np.full(5, 0.2)
        z = solve_dual(p, R, sites).z
        H = dual_hessian_reduced(z, R, sites)
        assert np.max(np.abs(H - H.T)) <= 1e-10
        assert np.max(np.linalg.eigvalsh(H)) < 0

    def test_empty_cell_rejected(self):
        sites = SiteSet(np.array([[0.0], [1.0]]))
        R = ReferenceMeasure.uniform(SupportRegion.interval(0.0, 1.0))
        with pytest.raises(EmptyCell):
            dual_hessian_reduced(np.array([-1.0, 1.0]), R, sites)


class TestSolve:
    def test_canonical_solution(self, canonical_1d):
        sites, R, p, _ = canonical_1d
        report = solve_dual(p, R, sites)
        assert report.converged
        np.testing.assert_allclose(report.z, [-0.1, 0.1], atol=1e-10)
        assert abs(report.z.sum()) <= 1e-12

    def test_symmetric_two_site(self, symmetric_2site_2d):
        sites, R, p = symmetric_2site_2d
        report = solve_dual(p, R, sites)
        np.testing.assert_allclose(report.z, 0.0, atol=1e-12)

    def test_three_site_masses_hit_weights(self, three_site_2d):
        sites, R, p, _ = three_site_2d
        report = solve_dual(p, R, sites)
        masses = cell_masses(R, sites, report.z)
        np.testing.assert_allclose(masses, p, atol=1e-9)

    def test_random_problems_reach_optimality(self):
        rng = np.random.default_rng(19)
        R1 = ReferenceMeasure.uniform(SupportRegion.interval(0.0, 1.0))
        R2 = ReferenceMeasure.uniform(SupportRegion.box([0, 0], [1, 1]))
        for R, dim in [(R1, 1), (R2, 2)]:
            for n in (2, 4, 6):
                sites = SiteSet(rng.uniform(0, 1, size=(n, dim)))
                p = rng.dirichlet(np.full(n, 3.0))
                report = solve_dual(p, R, sites)
                masses = cell_masses(R, sites, report.z)
                assert np.max(np.abs(masses - p)) <= 1e-9

    def test_not_interior_rejected(self, canonical_1d):
        sites, R, _, _ = canonical_1d
        with pytest.raises(NotInterior):
            solve_dual(np.array([0.0, 1.0]), R, sites)

    def test_monotone_damping_audit(self, three_site_2d):
        sites, R, p, _ = three_site_2d
        report = solve_dual(p, R, sites)
        norms = report.grad_norms
        assert all(b < a for a, b in zip(norms, norms[1:]))
        assert min(report.min_masses) >= 0.5 * p.min() - 1e-12

    def test_single_site(self):
        sites = SiteSet(np.array([[0.7]]))
        R = ReferenceMeasure.uniform(SupportRegion.interval(0.0, 1.0))
        report = solve_dual(np.array([1.0]), R, sites)
        assert report.converged and report.z.shape == (1,)

    def test_warm_start_lifts_tiny_voronoi_cell(self):
        sites = SiteSet(np.array([[0.0], [0.001]]))
        R = ReferenceMeasure.uniform(SupportRegion.interval(0.0, 1.0))
        p = np.array([0.5, 0.5])
        report = solve_dual(p, R, sites)
        assert report.converged
        assert report.warm_start_steps > 0
        masses = cell_masses(R, sites, report.z)
        np.testing.assert_allclose(masses, p, atol=1e-9)

    def test_iteration_cap(self, three_site_2d):
        sites, R, p, _ = three_site_2d
        with pytest.raises(MaxIterationsExceeded):
            solve_dual(p, R, sites, max_iter=1)

    def test_mc_backend_rejected(self):
        sites = SiteSet(np.array([[-0.5, 0.0], [0.5, 0.0]]))
        R = ReferenceMeasure.uniform(SupportRegion.ball([0.0, 0.0], 1.0))
        with pytest.raises(UnsupportedExactDimension):
            solve_dual(np.array([0.5, 0.5]), R, sites)

    def test_shifted_potential_same_diagram(self, canonical_1d):
        sites, R, p, z_star = canonical_1d
        pts = np.linspace(0.01, 0.99, 101)
        np.testing.assert_array_equal(
            locate(sites, z_star, pts), locate(sites, z_star + 0.25, pts)
        )


class TestSensitivity:
    def test_canonical_analytic(self, canonical_1d):
        # z*(q1) = ((q1 - 1/2)/2, -(q1 - 1/2)/2), so dz*/dq1 = (1/2, -1/2)
        sites, R, p, z_star = canonical_1d
        B = dual_sensitivity(z_star, p, R, sites)
        np.testing.assert_allclose(B, [[0.5, -0.5]], atol=1e-12)

    def test_symmetric_antisymmetry(self, symmetric_2site_2d):
        sites, R, p = symmetric_2site_2d
        z = solve_dual(p, R, sites).z
        B = dual_sensitivity(z, p, R, sites)
        assert B[0, 0] == pytest.approx(-B[0, 1], abs=1e-12)

    @pytest.mark.parametrize("problem", ["canonical", "three_site"])
    def test_matches_solver_finite_differences(self, problem, canonical_1d,
                                               three_site_2d):
        if problem == "canonical":
            sites, R, p, z_star = canonical_1d
        else:
            sites, R, p, z_star = three_site_2d
        B = dual_sensitivity(z_star, p, R, sites)
        step = 1e-5
        fd = np.zeros_like(B)
        for k in range(sites.n - 1):
            dq = np.zeros(sites.n)
            dq[k] = step
            dq[-1] = -step
            zp = solve_dual(p + dq, R, sites, init=z_star).z
            zm = solve_dual(p - dq, R, sites, init=z_star).z
            fd[k] = (zp - zm) / (2 * step)
        assert np.max(np.abs(fd - B)) <= 1e-3 * max(1.0, np.max(np.abs(B)))

    def test_single_site_trivial_shape(self):
        sites = SiteSet(np.array([[0.7]]))
        R = ReferenceMeasure.uniform(SupportRegion.interval(0.0, 1.0))
        B = dual_sensitivity(np.zeros(1), np.array([1.0]), R, sites)
        assert B.shape == (0, 1)


class TestObjectiveMonteCarlo:
    def test_mc_route_matches_exact(self, three_site_2d):
        # the same box exposed as an implicit support forces the sampling
        # route; both routes must integrate the same envelope
        sites, R, p, z_star = three_site_2d
        exact = dual_objective(z_star, p, R, sites)
        implicit = SupportRegion.implicit(
            lambda y: np.all((y >= 0.0) & (y <= 1.0), axis=1),
            bbox=[[0.0, 1.0], [0.0, 1.0]],
        )
        R_mc = ReferenceMeasure.uniform(implicit)
        approx = dual_objective(z_star, p, R_mc, sites,
                                mc_samples=400_000, seed=11)
        assert abs(approx - exact) <= 5e-3
