"""End-to-end acceptance suite.

Each test prints one PASS/FAIL line so the whole gate can be read off a
single ``pytest -s`` run.  Expected values are analytic where possible:
on the two-site unit-interval problem the boundary is c = 1/2 + z1 - z2,
the solved potential at weights (0.3, 0.7) is (-0.1, 0.1), the weight
sensitivity is (1/2, -1/2), and the scaled error functional converges to
|N(0, 0.21)| with mean sqrt(0.21 * 2/pi) = 0.36564.
"""

import time

import numpy as np
import pytest
from scipy import stats

from sdotinf import (
    ReferenceMeasure,
    SiteSet,
    SupportRegion,
    bootstrap_delta,
    bootstrap_gamma,
    cell_masses,
    confidence_set_radius,
    constant_field,
    covariance_model,
    delta_s,
    facet_integral_dict,
    facet_mass_dict,
    facet_mass_thin_slab,
    facet_records,
    fd_directional_quotient,
    gamma_deriv,
    gamma_phi_diff,
    hadamard_delta_deriv,
    mc_cell_mass,
    plugin_estimate,
    sample_limit_delta,
    solve_dual,
    super_consistency_probe,
    transport_map,
)
from sdotinf.geometry import build_diagram

CHI2_2_CRIT_1PCT = 9.210340371976182  # chi-square(2) upper 1% point


def report(num, name, ok, detail=""):
    print(f"\nACCEPTANCE {num:02d} {name}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


@pytest.fixture(scope="module")
def canonical():
    sites = SiteSet(np.array([[0.0], [1.0]]))
    R = ReferenceMeasure.uniform(SupportRegion.interval(0.0, 1.0))
    p = np.array([0.3, 0.7])
    z_star = solve_dual(p, R, sites).z
    return sites, R, p, z_star


@pytest.fixture(scope="module")
def three_site():
    sites = SiteSet(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    R = ReferenceMeasure.uniform(SupportRegion.box([0.0, 0.0], [1.0, 1.0]))
    p = np.ones(3) / 3.0
    z_star = solve_dual(p, R, sites).z
    return sites, R, p, z_star


@pytest.fixture(scope="module")
def analytic_limit_draws(canonical):
    """1e5 draws of the canonical limit law via the covariance pipeline."""
    sites, R, p, z_star = canonical
    model = covariance_model(p, z_star, R, sites)
    masses = facet_mass_dict(R, sites, z_star)
    return sample_limit_delta(model, masses, sites, 1.0, 100_000, seed=2718).draws


@pytest.fixture(scope="module")
def replication_study(canonical):
    """2000 fresh-sample replications at n = 20000.

    Records sqrt(n)*delta_1(plug-in, truth) and the scaled linear
    functional sqrt(n)*(gamma(plug-in) - gamma(truth)) for phi = 1.
    """
    sites, R, p, z_star = canonical
    phi = constant_field([1.0])
    n = 20_000
    rng = np.random.default_rng(314159)
    delta_stats = np.empty(2000)
    gamma_stats = np.empty(2000)
    for k in range(2000):
        counts = rng.multinomial(n, p)
        z_hat = solve_dual(counts / n, R, sites, init=z_star).z
        delta_stats[k] = np.sqrt(n) * delta_s(z_hat, z_star, 1.0, R, sites)
        gamma_stats[k] = np.sqrt(n) * gamma_phi_diff(z_star, z_hat, phi, R, sites)
    return delta_stats, gamma_stats


def test_01_dual_correctness(canonical, three_site):
    start = time.monotonic()
    sites, R, p, _ = canonical
    z = solve_dual(p, R, sites).z
    err1 = float(np.max(np.abs(z - np.array([-0.1, 0.1]))))

    sites3, R3, p3, _ = three_site
    z3 = solve_dual(p3, R3, sites3).z
    err2 = float(np.max(np.abs(cell_masses(R3, sites3, z3) - p3)))
    elapsed = time.monotonic() - start
    report(1, "dual correctness", err1 <= 1e-10 and err2 <= 1e-9 and elapsed < 1.0,
           f"|z-z*|={err1:.2e} |m-p|={err2:.2e} time={elapsed:.2f}s")


def test_02_quantile_identity():
    start = time.monotonic()
    rng = np.random.default_rng(777)
    R = ReferenceMeasure.uniform(SupportRegion.interval(0.0, 1.0))
    worst_mismatch = 0
    for _ in range(3):
        n_atoms = int(rng.integers(2, 11))
        atoms = np.sort(rng.uniform(-0.5, 1.5, size=n_atoms))
        weights = rng.dirichlet(np.full(n_atoms, 2.0))
        sites = SiteSet(atoms[:, None])
        z = solve_dual(weights, R, sites).z
        grid = np.linspace(0.0005, 0.9995, 1000)
        cum = np.cumsum(weights)
        clear = np.min(np.abs(grid[:, None] - cum[None, :]), axis=1) > 1e-9
        got = transport_map(z, grid[clear], sites)[:, 0]
        order = np.argsort(atoms)
        idx = np.searchsorted(np.cumsum(weights[order]), grid[clear], side="left")
        want = atoms[order][np.minimum(idx, n_atoms - 1)]
        worst_mismatch = max(worst_mismatch, int(np.sum(got != want)))
    elapsed = time.monotonic() - start
    report(2, "quantile identity", worst_mismatch == 0 and elapsed < 1.0,
           f"mismatches={worst_mismatch} time={elapsed:.2f}s")


def test_03_derivative_formulas_vs_quotients(canonical, three_site):
    start = time.monotonic()
    worst = 0.0
    for sites, R, p, z_star in (canonical, three_site):
        rng = np.random.default_rng(1234)
        masses = facet_mass_dict(R, sites, z_star)
        phi = constant_field([1.0] if sites.dim == 1 else [0.6, -0.2])
        integrals = facet_integral_dict(R, sites, z_star, phi)
        n_dir = 0
        while n_dir < 20:
            h1 = rng.standard_normal(sites.n)
            h2 = rng.standard_normal(sites.n)
            gamma_ref = gamma_deriv(z_star, h1, phi, R, sites,
                                    facet_integrals=integrals).total
            if abs(gamma_ref) < 0.05:  # avoid relative error on a zero
                continue
            n_dir += 1
            for s in (1.0, 2.0, 3.0):
                ref = hadamard_delta_deriv(z_star, h1, h2, s, R, sites,
                                           facet_masses=masses).total
                quot = fd_directional_quotient(
                    "delta", z_star, R, sites, [1e-4], h1=h1, h2=h2, s=s)[0]
                worst = max(worst, abs(quot - ref) / max(abs(ref), 1e-12))
            quot_g = fd_directional_quotient(
                "gamma", z_star, R, sites, [1e-4], h=h1, phi=phi)[0]
            worst = max(worst, abs(quot_g - gamma_ref) / abs(gamma_ref))
    elapsed = time.monotonic() - start
    report(3, "derivative formulas vs quotients",
           worst <= 1e-2 and elapsed < 30.0,
           f"worst_rel_err={worst:.2e} time={elapsed:.1f}s")


def test_04_derivative_structure(three_site):
    sites, R, p, z_star = three_site
    rng = np.random.default_rng(99)
    masses = facet_mass_dict(R, sites, z_star)
    phi = constant_field([0.3, 0.9])
    integrals = facet_integral_dict(R, sites, z_star, phi)
    h1, h2, h3 = (rng.standard_normal(3) for _ in range(3))
    worst = 0.0
    for c in (0.25, 3.0, 40.0):
        base = hadamard_delta_deriv(z_star, h1, h2, 2.0, R, sites,
                                    facet_masses=masses).total
        scaled = hadamard_delta_deriv(z_star, c * h1, c * h2, 2.0, R, sites,
                                      facet_masses=masses).total
        worst = max(worst, abs(scaled - c * base) / max(c * abs(base), 1e-12))
    lin_lhs = gamma_deriv(z_star, 1.3 * h1 - 0.4 * h3, phi, R, sites,
                          facet_integrals=integrals).total
    lin_rhs = (1.3 * gamma_deriv(z_star, h1, phi, R, sites,
                                 facet_integrals=integrals).total
               - 0.4 * gamma_deriv(z_star, h3, phi, R, sites,
                                   facet_integrals=integrals).total)
    lin_err = abs(lin_lhs - lin_rhs)
    shift_d = hadamard_delta_deriv(z_star, h1, h1 + 2.5, 1.0, R, sites,
                                   facet_masses=masses).total
    shift_g = gamma_deriv(z_star, np.full(3, -1.7), phi, R, sites,
                          facet_integrals=integrals).total
    ok = worst <= 1e-12 and lin_err <= 1e-12 and abs(shift_d) <= 1e-12 \
        and abs(shift_g) <= 1e-12
    report(4, "derivative structure", ok,
           f"homog={worst:.1e} linear={lin_err:.1e} "
           f"shift=({shift_d:.1e},{shift_g:.1e})")


def test_05_limit_law_delta(replication_study, analytic_limit_draws):
    start = time.monotonic()
    delta_stats, _ = replication_study
    ks = stats.ks_2samp(delta_stats, analytic_limit_draws).statistic
    se = delta_stats.std(ddof=1) / np.sqrt(len(delta_stats))
    mean_err = abs(delta_stats.mean() - 0.36567)
    elapsed = time.monotonic() - start
    report(5, "limit law of the error functional",
           ks <= 0.05 and mean_err <= 3 * se and elapsed < 300.0,
           f"ks={ks:.4f} mean={delta_stats.mean():.5f} "
           f"(target 0.36567, 3se={3*se:.5f}) time={elapsed:.1f}s")


def test_06_linear_functional_clt(replication_study):
    _, gamma_stats = replication_study
    var = gamma_stats.var(ddof=1)
    jb = stats.jarque_bera(gamma_stats).statistic
    ok = abs(var - 0.21) <= 0.15 * 0.21 and jb < CHI2_2_CRIT_1PCT
    report(6, "linear-functional CLT", ok,
           f"var={var:.4f} (target 0.21 +/- 15%) JB={jb:.2f} (<9.21)")


def test_07_bootstrap_consistency(canonical, analytic_limit_draws):
    start = time.monotonic()
    sites, R, p, z_star = canonical
    rng = np.random.default_rng(271828)
    counts = rng.multinomial(5000, p)
    plug = plugin_estimate(counts, R, sites)
    assert plug.interior
    boot_d = bootstrap_delta(counts, R, sites, 1.0, 2000, seed=10,
                             z_hat=plug.z)
    ks = stats.ks_2samp(boot_d.draws, analytic_limit_draws).statistic
    boot_g = bootstrap_gamma(counts, R, sites, constant_field([1.0]), 2000,
                             seed=11, z_hat=plug.z)
    var = boot_g.draws.var(ddof=1)
    elapsed = time.monotonic() - start
    ok = ks <= 0.05 and abs(var - 0.21) <= 0.15 * 0.21 and elapsed < 300.0
    report(7, "bootstrap consistency", ok,
           f"ks={ks:.4f} gamma_var={var:.4f} "
           f"excluded={boot_d.meta['n_fallback']} time={elapsed:.1f}s")


def test_08_confidence_coverage(canonical):
    start = time.monotonic()
    sites, R, p, z_star = canonical
    n, n_boot, alpha, outer = 5000, 1000, 0.10, 500
    seeds = np.random.SeedSequence(20240901).spawn(outer)
    covered = np.zeros(outer, dtype=bool)
    band_cov = np.zeros(outer)
    dist_min = 1.0  # site separation: the map error is 0 or 1
    for r in range(outer):
        child = seeds[r].spawn(2)
        rng = np.random.default_rng(child[0])
        counts = rng.multinomial(n, p)
        z_hat = solve_dual(counts / n, R, sites, init=z_star).z
        boot = bootstrap_delta(counts, R, sites, 1.0, n_boot, child[1],
                               z_hat=z_hat)
        tau = confidence_set_radius(boot.draws, alpha)
        tau_half = confidence_set_radius(boot.draws, alpha / 2.0)
        stat = np.sqrt(n) * delta_s(z_hat, z_star, 1.0, R, sites)
        covered[r] = stat <= tau
        radius = tau_half / np.sqrt(n) * 2.0 / alpha
        if radius >= dist_min:
            band_cov[r] = 1.0
        else:
            # the two maps differ on a set whose mass is exactly delta_1
            band_cov[r] = 1.0 - delta_s(z_hat, z_star, 1.0, R, sites)
    set_cov = covered.mean()
    avg_band = band_cov.mean()
    elapsed = time.monotonic() - start
    ok = 0.87 <= set_cov <= 0.93 and avg_band >= 0.88 and elapsed < 900.0
    report(8, "confidence coverage", ok,
           f"set={set_cov:.3f} (target [0.87,0.93]) band={avg_band:.4f} "
           f"(>=0.88) time={elapsed:.0f}s")


def test_09_super_consistency(canonical):
    start = time.monotonic()
    sites, R, p, z_star = canonical
    rng = np.random.default_rng(555)
    n = 10_000
    full = 0
    for _ in range(500):
        counts = rng.multinomial(n, p)
        z_hat = solve_dual(counts / n, R, sites, init=z_star).z
        probe = super_consistency_probe(z_hat, z_star, sites, R.support,
                                        margin=0.05, grid_per_cell=200)
        full += probe.applicable and probe.fraction == 1.0
    frac = full / 500.0
    elapsed = time.monotonic() - start
    report(9, "super-consistency probe", frac >= 0.99 and elapsed < 120.0,
           f"all-match fraction={frac:.3f} time={elapsed:.1f}s")


def test_10_cross_backend_agreement(three_site):
    sites3, R3, p3, z3 = three_site
    rng = np.random.default_rng(4242)
    configs = [
        (sites3, R3, z3),
        (SiteSet(np.array([[0.25, 0.5], [0.75, 0.5]])),
         ReferenceMeasure.uniform(SupportRegion.box([0.0, 0.0], [1.0, 1.0])),
         np.zeros(2)),
        (SiteSet(rng.uniform(0.1, 0.9, size=(4, 2))),
         ReferenceMeasure.uniform(SupportRegion.box([0.0, 0.0], [1.0, 1.0])),
         None),
    ]
    worst_mass = 0.0
    worst_facet = 0.0
    for k, (sites, R, z) in enumerate(configs):
        if z is None:
            z = solve_dual(np.full(sites.n, 1.0 / sites.n), R, sites).z
        exact = cell_masses(R, sites, z)
        for i in range(sites.n):
            est, se = mc_cell_mass(R, sites, z, i, 1_000_000, rng_seed=50 + i + 10 * k)
            worst_mass = max(worst_mass, abs(est - exact[i]) / max(3 * se, 1e-12))
        diagram = build_diagram(sites, z, R.support)
        for (i, j), rec in facet_records(R, diagram).items():
            slab = facet_mass_thin_slab(R, sites, z, i, j,
                                        n_samples=1_000_000, seed=90 + i + 10 * j)
            gap = abs(slab.surface_mass - rec.surface_mass)
            worst_facet = max(worst_facet, gap / max(3 * slab.std_error, 1e-12))
    ok = worst_mass <= 1.0 and worst_facet <= 1.0
    report(10, "cross-backend agreement", ok,
           f"mass worst |err|/3se={worst_mass:.2f} "
           f"facet worst |err|/3se={worst_facet:.2f}")
