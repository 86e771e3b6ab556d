"""Batch front-end: configuration ingestion, pipeline orchestration, and
table emission.

Problems are described by a single YAML file (key/value with nested
sections); results are written as CSV tables plus line-delimited JSON
records for draws.  Every output file starts with the configuration hash
and the master seed, and reruns with identical configuration and seed
reproduce the files byte for byte (wall-clock timings go to stderr only).

Subcommands
-----------
solve            dual potentials, cell masses and the facet table
infer            full pipeline: plug-in estimate, limit laws, bootstrap,
                 confidence set radii and average-coverage bands
validate         internal consistency checks on the configured problem
coverage-study   outer Monte Carlo replication study of the confidence
                 artifacts

Exit codes: 0 success, 1 configuration error, 2 numeric failure,
3 validation failure.
"""

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import __version__
from .dual import dual_hessian_reduced, dual_sensitivity, solve_dual
from .errors import ConfigError, SemidiscreteError
from .functionals import (
    constant_field,
    coordinate_field,
    delta_s,
    fd_directional_quotient,
    gamma_deriv,
    gamma_phi,
    hadamard_delta_deriv,
    smoothed_indicator_field,
    transport_map,
)
from .geometry import SiteSet, SupportRegion, build_diagram, cell_clip, locate
from .inference import (
    bootstrap_delta,
    bootstrap_gamma,
    confidence_band,
    confidence_set_radius,
    covariance_model,
    limit_variance_gamma,
    plugin_estimate,
    sample_limit_delta,
)
from .measure import (
    ReferenceMeasure,
    cell_masses,
    facet_integral_dict,
    facet_records,
    mc_cell_mass,
)

FLOAT_FMT = ".17g"


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


@dataclass
class ProblemConfig:
    """Validated run configuration (see README for the file schema)."""

    sites: SiteSet
    reference: ReferenceMeasure
    weights: np.ndarray = None
    counts: np.ndarray = None
    s_values: tuple = (1.0,)
    phi: object = None
    sample_size: int = 5000
    bootstrap: bool = True
    bootstrap_reps: int = 2000
    limit_draws: int = 100_000
    alphas: tuple = (0.1,)
    band_grid: int = 201
    outer_reps: int = 500
    coverage_alpha: float = 0.1
    coverage_bootstrap_reps: int = 1000
    coverage_band_points: int = 2000
    seed: int = 0
    facet_scale: float = 1.0
    config_hash: str = ""


def _expect(cond, path, msg):
    if not cond:
        raise ConfigError(f"{path}: {msg}")


def _get(section, key, path, default=None, required=False):
    if key not in section:
        _expect(not required, f"{path}.{key}", "missing required field")
        return default
    return section[key]


def _float_list(value, path):
    _expect(isinstance(value, (list, tuple)) and len(value) > 0, path,
            "expected a nonempty list of numbers")
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: entries must be numbers")


def _build_reference(section):
    kind = _get(section, "kind", "reference", required=True)
    if kind == "uniform-box":
        low = _float_list(_get(section, "low", "reference", required=True),
                          "reference.low")
        high = _float_list(_get(section, "high", "reference", required=True),
                           "reference.high")
        _expect(len(low) == len(high), "reference.low/high",
                "low and high must have the same length")
        support = SupportRegion.box(low, high)
    elif kind == "uniform-polygon":
        verts = _get(section, "vertices", "reference", required=True)
        _expect(isinstance(verts, list) and len(verts) >= 3,
                "reference.vertices", "need at least three vertices")
        support = SupportRegion.polygon(np.asarray(verts, dtype=float))
    elif kind == "uniform-ball":
        center = _float_list(_get(section, "center", "reference", required=True),
                             "reference.center")
        radius = float(_get(section, "radius", "reference", required=True))
        support = SupportRegion.ball(center, radius)
    else:
        raise ConfigError(
            f"reference.kind: unknown kind {kind!r} "
            "(choose uniform-box, uniform-polygon or uniform-ball)"
        )
    try:
        return ReferenceMeasure.uniform(support)
    except ValueError as exc:
        raise ConfigError(f"reference: {exc}")


def _build_phi(section, dim):
    if section is None:
        return None
    kind = _get(section, "kind", "functionals.phi", required=True)
    if kind == "constant":
        vec = _float_list(_get(section, "vector", "functionals.phi", required=True),
                          "functionals.phi.vector")
        _expect(len(vec) == dim, "functionals.phi.vector",
                f"expected {dim} components")
        return constant_field(vec)
    if kind == "coordinate":
        axis = int(_get(section, "axis", "functionals.phi", default=0))
        _expect(0 <= axis < dim, "functionals.phi.axis", "axis out of range")
        bound = float(_get(section, "bound", "functionals.phi", required=True))
        return coordinate_field(axis, dim, bound)
    if kind == "smoothed-indicator":
        center = _float_list(
            _get(section, "center", "functionals.phi", required=True),
            "functionals.phi.center")
        _expect(len(center) == dim, "functionals.phi.center",
                f"expected {dim} components")
        radius = float(_get(section, "radius", "functionals.phi", required=True))
        width = float(_get(section, "width", "functionals.phi", default=0.05))
        direction = _float_list(
            _get(section, "direction", "functionals.phi", required=True),
            "functionals.phi.direction")
        return smoothed_indicator_field(center, radius, width, direction)
    raise ConfigError(
        f"functionals.phi.kind: unknown kind {kind!r} "
        "(choose constant, coordinate or smoothed-indicator)"
    )


def load_config(path):
    """Parse and validate a YAML problem configuration."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}")
    try:
        data = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}")
    _expect(isinstance(data, dict), "(top level)", "config must be a mapping")

    problem = _get(data, "problem", "(top level)", required=True)
    _expect(isinstance(problem, dict), "problem", "must be a mapping")
    sites_raw = _get(problem, "sites", "problem", required=True)
    _expect(isinstance(sites_raw, list) and len(sites_raw) >= 1,
            "problem.sites", "need a nonempty list of coordinate lists")
    try:
        sites = SiteSet(np.asarray(sites_raw, dtype=float))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"problem.sites: {exc}")

    weights = problem.get("weights")
    counts = problem.get("counts")
    _expect(weights is not None or counts is not None, "problem",
            "provide weights or counts")
    if weights is not None:
        weights = np.asarray(_float_list(weights, "problem.weights"))
        _expect(len(weights) == sites.n, "problem.weights",
                f"expected {sites.n} entries")
        _expect(np.all(weights >= 0), "problem.weights", "must be nonnegative")
        total = weights.sum()
        _expect(total > 0, "problem.weights", "must not all be zero")
        weights = weights / total
    if counts is not None:
        counts = np.asarray(counts)
        _expect(counts.ndim == 1 and len(counts) == sites.n, "problem.counts",
                f"expected {sites.n} integer entries")
        _expect(np.all(counts >= 0) and counts.sum() > 0, "problem.counts",
                "need nonnegative counts with a positive total")
        counts = counts.astype(int)

    ref_sec = _get(data, "reference", "(top level)", required=True)
    _expect(isinstance(ref_sec, dict), "reference", "must be a mapping")
    reference = _build_reference(ref_sec)
    _expect(reference.support.dim == sites.dim, "reference",
            f"support dimension {reference.support.dim} does not match "
            f"sites dimension {sites.dim}")

    fun_sec = data.get("functionals", {}) or {}
    s_values = tuple(_float_list(fun_sec.get("s_values", [1.0]),
                                 "functionals.s_values"))
    _expect(all(s >= 1 for s in s_values), "functionals.s_values",
            "every exponent must satisfy s >= 1")
    phi = _build_phi(fun_sec.get("phi"), sites.dim)

    inf_sec = data.get("inference", {}) or {}
    cov_sec = data.get("coverage_study", {}) or {}
    fault = data.get("fault_injection", {}) or {}

    cfg = ProblemConfig(
        sites=sites,
        reference=reference,
        weights=weights,
        counts=counts,
        s_values=s_values,
        phi=phi,
        sample_size=int(inf_sec.get("sample_size", 5000)),
        bootstrap=bool(inf_sec.get("bootstrap", True)),
        bootstrap_reps=int(inf_sec.get("bootstrap_reps", 2000)),
        limit_draws=int(inf_sec.get("limit_draws", 100_000)),
        alphas=tuple(_float_list(inf_sec.get("alphas", [0.1]),
                                 "inference.alphas")),
        band_grid=int(inf_sec.get("band_grid", 201)),
        outer_reps=int(cov_sec.get("outer_reps", 500)),
        coverage_alpha=float(cov_sec.get("alpha", 0.1)),
        coverage_bootstrap_reps=int(cov_sec.get("bootstrap_reps", 1000)),
        coverage_band_points=int(cov_sec.get("band_points", 2000)),
        seed=int(data.get("seed", 0)),
        facet_scale=float(fault.get("facet_scale", 1.0)),
        config_hash=hashlib.sha256(raw).hexdigest()[:16],
    )
    for alpha in cfg.alphas:
        _expect(0.0 < alpha < 1.0, "inference.alphas", "levels must lie in (0, 1)")
    _expect(0.0 < cfg.coverage_alpha < 1.0, "coverage_study.alpha",
            "level must lie in (0, 1)")
    _expect(cfg.sample_size >= 1, "inference.sample_size", "must be positive")
    _expect(cfg.bootstrap_reps >= 1, "inference.bootstrap_reps",
            "must be positive")
    return cfg


# --------------------------------------------------------------------------
# output helpers
# --------------------------------------------------------------------------


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return format(float(value), FLOAT_FMT)
    return str(value)


def _write_csv(path, cfg, columns, rows):
    with open(path, "w") as fh:
        fh.write(f"# config_hash={cfg.config_hash}\n")
        fh.write(f"# seed={cfg.seed}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_jsonl(path, cfg, header, records):
    with open(path, "w") as fh:
        head = {"config_hash": cfg.config_hash, "seed": cfg.seed}
        head.update(header)
        fh.write(json.dumps(head, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _hist_rows(draws, bins=50):
    counts, edges = np.histogram(draws, bins=bins)
    width = np.diff(edges)
    dens = counts / max(1, len(draws)) / np.where(width > 0, width, 1.0)
    return [
        (edges[k], edges[k + 1], int(counts[k]), dens[k])
        for k in range(len(counts))
    ]


def _band_grid_points(cfg):
    sup = cfg.reference.support
    if sup.dim == 1:
        a, b = sup.bounds[0]
        return np.linspace(a, b, cfg.band_grid)[:, None]
    m = max(2, int(np.ceil(np.sqrt(cfg.band_grid))))
    lo, hi = sup.bbox[:, 0], sup.bbox[:, 1]
    gx = np.linspace(lo[0], hi[0], m)
    gy = np.linspace(lo[1], hi[1], m)
    grid = np.stack(np.meshgrid(gx, gy), axis=-1).reshape(-1, 2)
    return grid[sup.contains(grid)]


# --------------------------------------------------------------------------
# result bundle and stages
# --------------------------------------------------------------------------


@dataclass
class ResultBundle:
    """Everything a run produced, mirrored by the files in the out dir.

    ``runtime_seconds`` is set after all files are written, so it never
    enters the (byte-reproducible) outputs.
    """

    z: np.ndarray = None
    masses: np.ndarray = None
    facet_table: list = field(default_factory=list)
    derivative_table: list = field(default_factory=list)
    limit_draws: dict = field(default_factory=dict)
    bootstrap_draws: dict = field(default_factory=dict)
    tau: dict = field(default_factory=dict)
    band_tables: dict = field(default_factory=dict)
    gamma_stats: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    runtime_seconds: float = None


def _mass_backend(R):
    if not R.exact_backend:
        return "mc"
    return "exact" if R.kind == "uniform" else "quadrature"


def _solve_stage(cfg, weights, out, bundle, label="solution"):
    report = solve_dual(weights, cfg.reference, cfg.sites)
    masses = cell_masses(cfg.reference, cfg.sites, report.z)
    bundle.z = report.z
    bundle.masses = masses
    bundle.diagnostics["solver_iterations"] = report.iterations
    bundle.diagnostics["solver_grad_norm"] = report.grad_norm
    bundle.diagnostics["solver_converged"] = report.converged
    backend = _mass_backend(cfg.reference)
    rows = [
        (i,) + tuple(cfg.sites.points[i]) + (weights[i], report.z[i], masses[i],
                                             backend)
        for i in range(cfg.sites.n)
    ]
    coords = [f"x{k+1}" for k in range(cfg.sites.dim)]
    if out is not None:
        path = f"{out}/{label}.csv"
        _write_csv(path, cfg, ["site"] + coords + ["weight", "z", "mass", "backend"],
                   rows)
        bundle.files.append(path)

    diagram = build_diagram(cfg.sites, report.z, cfg.reference.support)
    records = facet_records(cfg.reference, diagram)
    bundle.facet_table = [
        (i, j, rec.surface_mass, rec.extent, rec.estimator,
         "" if rec.std_error is None else rec.std_error)
        for (i, j), rec in sorted(records.items())
    ]
    if out is not None:
        path = f"{out}/facets.csv"
        _write_csv(path, cfg,
                   ["i", "j", "surface_mass", "extent", "estimator", "std_error"],
                   bundle.facet_table)
        bundle.files.append(path)
    return report, masses, records


def cmd_solve(cfg, out):
    """Solve at the configured weights and emit potentials, masses, facets."""
    start = time.monotonic()
    weights = cfg.weights
    if weights is None:
        weights = cfg.counts / cfg.counts.sum()
    bundle = ResultBundle()
    _solve_stage(cfg, weights, out, bundle)
    bundle.runtime_seconds = time.monotonic() - start
    return bundle


def cmd_infer(cfg, out, threads=1):
    """Run the full inference pipeline and emit one file per stage."""
    start = time.monotonic()
    bundle = ResultBundle()
    seeds = np.random.SeedSequence(cfg.seed).spawn(8)
    sample_seed, limit_seed, boot_seed, gamma_seed = seeds[:4]

    if cfg.counts is not None:
        counts = cfg.counts
    else:
        if cfg.weights is None:
            raise ConfigError("problem: infer needs weights or counts")
        rng = np.random.default_rng(sample_seed)
        counts = rng.multinomial(cfg.sample_size, cfg.weights)
    n = int(counts.sum())
    bundle.diagnostics["n"] = n

    plug = plugin_estimate(counts, cfg.reference, cfg.sites)
    bundle.diagnostics["plugin_fallback"] = plug.used_fallback
    if plug.used_fallback:
        raise SemidiscreteError(
            "empirical frequencies have an empty category; the pipeline "
            "cannot proceed past the fallback potential"
        )
    z_hat = plug.z
    p_hat = plug.p_hat
    _, masses, records = _solve_stage_from(cfg, p_hat, z_hat, out, bundle)

    # covariance and limit laws at the plug-in estimate
    model = covariance_model(p_hat, z_hat, cfg.reference, cfg.sites)
    facet_masses = {pair: rec.surface_mass for pair, rec in records.items()}
    dist = cfg.sites.pairwise_distances()
    limit_seeds = limit_seed.spawn(len(cfg.s_values))
    for s, s_seed in zip(cfg.s_values, limit_seeds):
        deriv_rows = [
            ("delta", s, i, j, dist[i, j] ** (s - 1.0) * facet_masses[(i, j)])
            for (i, j) in sorted(facet_masses)
        ]
        bundle.derivative_table.extend(deriv_rows)
        lim = sample_limit_delta(model, facet_masses, cfg.sites, s,
                                 cfg.limit_draws, s_seed)
        bundle.limit_draws[("delta", s)] = lim
        if out is not None:
            tag = _s_tag(s)
            path = f"{out}/limit_delta_{tag}.jsonl"
            _write_jsonl(path, cfg,
                         {"kind": "delta", "s": s, "n_draws": cfg.limit_draws},
                         ({"draw": k, "value": float(v)}
                          for k, v in enumerate(lim.draws)))
            bundle.files.append(path)
            path = f"{out}/limit_delta_{tag}_hist.csv"
            _write_csv(path, cfg, ["bin_left", "bin_right", "count", "density"],
                       _hist_rows(lim.draws))
            bundle.files.append(path)

    sigma2 = None
    if cfg.phi is not None:
        integrals = facet_integral_dict(cfg.reference, cfg.sites, z_hat, cfg.phi)
        sigma2 = limit_variance_gamma(model, integrals, cfg.sites)
        gamma_hat = gamma_phi(z_hat, cfg.phi, cfg.reference, cfg.sites)
        bundle.gamma_stats = {"gamma_hat": gamma_hat, "sigma2_limit": sigma2}
        bundle.derivative_table.extend(
            ("gamma", "", i, j, integrals[(i, j)] / dist[i, j])
            for (i, j) in sorted(integrals)
        )
    if out is not None and bundle.derivative_table:
        path = f"{out}/derivatives.csv"
        _write_csv(path, cfg, ["kind", "s", "i", "j", "weight"],
                   bundle.derivative_table)
        bundle.files.append(path)

    # bootstrap
    if cfg.bootstrap:
        boot_s = sorted(set(cfg.s_values) | {1.0})
        child = boot_seed.spawn(len(boot_s))
        for s, seed_s in zip(boot_s, child):
            boot = bootstrap_delta(counts, cfg.reference, cfg.sites, s,
                                   cfg.bootstrap_reps, seed_s, z_hat=z_hat,
                                   n_jobs=threads)
            bundle.bootstrap_draws[("delta", s)] = boot
            bundle.diagnostics[f"bootstrap_delta_{_s_tag(s)}_fallback"] = (
                boot.meta["n_fallback"])
            bundle.diagnostics[f"bootstrap_delta_{_s_tag(s)}_failed"] = (
                boot.meta["n_failed"])
            if out is not None:
                tag = _s_tag(s)
                path = f"{out}/bootstrap_delta_{tag}.jsonl"
                _write_jsonl(path, cfg,
                             {"kind": "delta", "s": s,
                              "n_reps": cfg.bootstrap_reps,
                              "n_fallback": boot.meta["n_fallback"],
                              "n_failed": boot.meta["n_failed"]},
                             ({"rep": k, "value": float(v)}
                              for k, v in enumerate(boot.draws)))
                bundle.files.append(path)
                path = f"{out}/bootstrap_delta_{tag}_hist.csv"
                _write_csv(path, cfg,
                           ["bin_left", "bin_right", "count", "density"],
                           _hist_rows(boot.draws))
                bundle.files.append(path)
        if cfg.phi is not None:
            bg = bootstrap_gamma(counts, cfg.reference, cfg.sites, cfg.phi,
                                 cfg.bootstrap_reps, gamma_seed, z_hat=z_hat,
                                 n_jobs=threads)
            bundle.bootstrap_draws[("gamma", None)] = bg
            bundle.gamma_stats["sigma2_bootstrap"] = float(np.var(bg.draws))
            bundle.diagnostics["bootstrap_gamma_fallback"] = bg.meta["n_fallback"]
            bundle.diagnostics["bootstrap_gamma_failed"] = bg.meta["n_failed"]
            if out is not None:
                path = f"{out}/bootstrap_gamma.jsonl"
                _write_jsonl(path, cfg,
                             {"kind": "gamma", "n_reps": cfg.bootstrap_reps,
                              "n_fallback": bg.meta["n_fallback"],
                              "n_failed": bg.meta["n_failed"]},
                             ({"rep": k, "value": float(v)}
                              for k, v in enumerate(bg.draws)))
                bundle.files.append(path)

        # confidence artifacts from the s = 1 bootstrap
        draws1 = bundle.bootstrap_draws[("delta", 1.0)].draws
        conf_rows = []
        for alpha in cfg.alphas:
            tau = confidence_set_radius(draws1, alpha)
            tau_half = confidence_set_radius(draws1, alpha / 2.0)
            bundle.tau[alpha] = tau
            band = confidence_band(z_hat, tau_half, n, alpha,
                                   _band_grid_points(cfg), cfg.sites)
            bundle.band_tables[alpha] = band
            conf_rows.append((alpha, tau, tau_half, band.radius))
            if out is not None:
                coords = [f"y{k+1}" for k in range(cfg.sites.dim)]
                tcoords = [f"t{k+1}" for k in range(cfg.sites.dim)]
                rows = []
                for m in range(len(band.grid)):
                    members = ";".join(
                        str(i) for i in np.nonzero(band.members[m])[0]
                    )
                    rows.append(tuple(band.grid[m]) + tuple(band.map_values[m])
                                + (band.radius, members))
                path = f"{out}/band_alpha{_alpha_tag(alpha)}.csv"
                _write_csv(path, cfg, coords + tcoords + ["radius", "members"],
                           rows)
                bundle.files.append(path)
        if out is not None:
            path = f"{out}/confidence.csv"
            _write_csv(path, cfg, ["alpha", "tau", "tau_half", "band_radius"],
                       conf_rows)
            bundle.files.append(path)

    if out is not None and bundle.gamma_stats:
        rows = sorted(bundle.gamma_stats.items())
        path = f"{out}/gamma.csv"
        _write_csv(path, cfg, ["quantity", "value"], rows)
        bundle.files.append(path)

    if out is not None:
        rows = sorted((k, v) for k, v in bundle.diagnostics.items())
        path = f"{out}/diagnostics.csv"
        _write_csv(path, cfg, ["key", "value"], rows)
        bundle.files.append(path)
    bundle.runtime_seconds = time.monotonic() - start
    return bundle


def _solve_stage_from(cfg, p_hat, z_hat, out, bundle):
    """Emit solution/facet tables for an already-solved potential."""
    masses = cell_masses(cfg.reference, cfg.sites, z_hat)
    bundle.z = z_hat
    bundle.masses = masses
    backend = _mass_backend(cfg.reference)
    rows = [
        (i,) + tuple(cfg.sites.points[i]) + (p_hat[i], z_hat[i], masses[i],
                                             backend)
        for i in range(cfg.sites.n)
    ]
    coords = [f"x{k+1}" for k in range(cfg.sites.dim)]
    diagram = build_diagram(cfg.sites, z_hat, cfg.reference.support)
    records = facet_records(cfg.reference, diagram)
    bundle.facet_table = [
        (i, j, rec.surface_mass, rec.extent, rec.estimator,
         "" if rec.std_error is None else rec.std_error)
        for (i, j), rec in sorted(records.items())
    ]
    if out is not None:
        path = f"{out}/solution.csv"
        _write_csv(path, cfg,
                   ["site"] + coords + ["weight", "z", "mass", "backend"], rows)
        bundle.files.append(path)
        path = f"{out}/facets.csv"
        _write_csv(path, cfg,
                   ["i", "j", "surface_mass", "extent", "estimator", "std_error"],
                   bundle.facet_table)
        bundle.files.append(path)
    return None, masses, records


def _s_tag(s):
    return ("%g" % s).replace(".", "p")


def _alpha_tag(alpha):
    return ("%g" % alpha).replace(".", "p")


# --------------------------------------------------------------------------
# validate
# --------------------------------------------------------------------------


def cmd_validate(cfg, out):
    """Consistency checks on the configured problem.

    Covers mass conservation, solver optimality, Hessian and sensitivity
    finite-difference agreement, analytic-versus-quotient derivative
    checks, exact-versus-Monte-Carlo masses, and locate / clip agreement.
    The ``fault_injection.facet_scale`` hook scales the facet masses used
    by the analytic derivative, so a corrupted value trips the quotient
    check.
    """
    checks = []
    weights = cfg.weights
    if weights is None:
        weights = cfg.counts / cfg.counts.sum()
    sites, R = cfg.sites, cfg.reference
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])

    report = solve_dual(weights, R, sites)
    z = report.z
    masses = cell_masses(R, sites, z)
    checks.append(("solver_converged", report.converged, ""))
    checks.append(
        ("mass_conservation", abs(masses.sum() - 1.0) <= 1e-9,
         f"sum={masses.sum():.12f}")
    )
    checks.append(
        ("optimality", float(np.max(np.abs(masses - weights))) <= 1e-9,
         f"max|m-p|={np.max(np.abs(masses - weights)):.2e}")
    )

    if sites.n > 1:
        H = dual_hessian_reduced(z, R, sites)
        sym = float(np.max(np.abs(H - H.T)))
        checks.append(("hessian_symmetry", sym <= 1e-10, f"max|H-H^T|={sym:.2e}"))
        fd_err = _hessian_fd_error(z, weights, R, sites)
        checks.append(("hessian_vs_fd", fd_err <= 1e-3, f"rel_err={fd_err:.2e}"))
        sens_err = _sensitivity_fd_error(z, weights, R, sites)
        checks.append(("sensitivity_vs_fd", sens_err <= 1e-3,
                       f"rel_err={sens_err:.2e}"))

    facet_masses = {
        pair: cfg.facet_scale * rec.surface_mass
        for pair, rec in facet_records(R, build_diagram(sites, z, R.support)).items()
    }
    worst = 0.0
    for s in cfg.s_values:
        for _ in range(5):
            h1 = rng.standard_normal(sites.n)
            h2 = rng.standard_normal(sites.n)
            analytic = hadamard_delta_deriv(z, h1, h2, s, R, sites,
                                            facet_masses=facet_masses).total
            quot = fd_directional_quotient("delta", z, R, sites, [1e-4],
                                           h1=h1, h2=h2, s=s)[0]
            if analytic != 0 or quot != 0:
                worst = max(worst, abs(quot - analytic) / max(abs(analytic), 1e-12))
    checks.append(("delta_deriv_vs_fd", sites.n == 1 or worst <= 1e-2,
                   f"rel_err={worst:.2e}"))
    if cfg.phi is not None and sites.n > 1:
        integrals = facet_integral_dict(R, sites, z, cfg.phi)
        integrals = {p: cfg.facet_scale * v for p, v in integrals.items()}
        worst_g = 0.0
        for _ in range(5):
            h = rng.standard_normal(sites.n)
            analytic = gamma_deriv(z, h, cfg.phi, R, sites,
                                   facet_integrals=integrals).total
            quot = fd_directional_quotient("gamma", z, R, sites, [1e-4],
                                           h=h, phi=cfg.phi)[0]
            scale = max(abs(analytic), abs(quot), 1e-9)
            worst_g = max(worst_g, abs(quot - analytic) / scale)
        checks.append(("gamma_deriv_vs_fd", worst_g <= 1e-2,
                       f"rel_err={worst_g:.2e}"))

    if R.has_sampler:
        ok = True
        detail = []
        for i in range(sites.n):
            est, se = mc_cell_mass(R, sites, z, i, 200_000, rng)
            if abs(est - masses[i]) > max(3.0 * se, 1e-9):
                ok = False
                detail.append(f"cell {i}: |{est:.5f}-{masses[i]:.5f}|>3se")
        checks.append(("exact_vs_mc_masses", ok, "; ".join(detail)))

    diagram = build_diagram(sites, z, R.support)
    pts = R.sample(10_000, rng)
    idx = locate(sites, z, pts)
    mismatch = 0
    for i in range(sites.n):
        cell = cell_clip(diagram, i)
        sel = pts[idx == i]
        if len(sel) == 0:
            continue
        if sites.dim == 1:
            inside = (sel[:, 0] >= cell[0] - 1e-10) & (sel[:, 0] <= cell[1] + 1e-10)
        else:
            from .geometry import pairwise_offsets

            b = pairwise_offsets(sites, z)
            inside = np.ones(len(sel), dtype=bool)
            for j in range(sites.n):
                if j != i:
                    margin = sel @ (sites.points[i] - sites.points[j]) - b[i, j]
                    inside &= margin >= -1e-10 * max(
                        1.0, float(np.linalg.norm(sites.points[i] - sites.points[j]))
                    )
        mismatch += int(np.sum(~inside))
    checks.append(("locate_vs_clip", mismatch == 0, f"mismatches={mismatch}"))

    all_ok = all(ok for _, ok, _ in checks)
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name} {detail}".rstrip())
    if out is not None:
        _write_csv(f"{out}/validation.csv", cfg, ["check", "status", "detail"],
                   [(name, "pass" if ok else "fail", detail)
                    for name, ok, detail in checks])
    return all_ok


def _hessian_fd_error(z, q, R, sites, step=1e-5):
    from .dual import dual_gradient

    n = sites.n

    def reduced_grad(w):
        zz = np.concatenate([w, [-np.sum(w)]])
        g = dual_gradient(zz, q, R, sites)
        return g[:-1] - g[-1]

    w0 = z[:-1]
    H = dual_hessian_reduced(z, R, sites)
    fd = np.zeros_like(H)
    for k in range(n - 1):
        e = np.zeros(n - 1)
        e[k] = step
        fd[:, k] = (reduced_grad(w0 + e) - reduced_grad(w0 - e)) / (2 * step)
    scale = max(1e-12, float(np.max(np.abs(H))))
    return float(np.max(np.abs(fd - H))) / scale


def _sensitivity_fd_error(z, q, R, sites, step=1e-5):
    n = sites.n
    B = dual_sensitivity(z, q, R, sites)
    fd = np.zeros_like(B)
    for k in range(n - 1):
        dq = np.zeros(n)
        dq[k] = step
        dq[-1] = -step
        zp = solve_dual(q + dq, R, sites, init=z).z
        zm = solve_dual(q - dq, R, sites, init=z).z
        fd[k] = (zp - zm) / (2 * step)
    scale = max(1e-12, float(np.max(np.abs(B))))
    return float(np.max(np.abs(fd - B))) / scale


# --------------------------------------------------------------------------
# coverage study
# --------------------------------------------------------------------------


def _coverage_rep(args):
    (R, sites, weights, z_star, n, n_boot, alpha, band_points, seed) = args
    child = seed.spawn(3)
    rng = np.random.default_rng(child[0])
    counts = rng.multinomial(n, weights)
    if np.any(counts == 0):
        return {"fallback": True}
    z_hat = solve_dual(counts / n, R, sites, init=z_star).z
    boot = bootstrap_delta(counts, R, sites, 1.0, n_boot, child[1], z_hat=z_hat)
    if boot.draws.size == 0:
        return {"fallback": True}
    tau = confidence_set_radius(boot.draws, alpha)
    tau_half = confidence_set_radius(boot.draws, alpha / 2.0)
    stat = np.sqrt(n) * delta_s(z_hat, z_star, 1.0, R, sites)
    covered_set = bool(stat <= tau)
    radius = tau_half / np.sqrt(n) * 2.0 / alpha
    ys = R.sample(band_points, np.random.default_rng(child[2]))
    t_true = transport_map(z_star, ys, sites)
    t_hat = transport_map(z_hat, ys, sites)
    band_cov = float(np.mean(
        np.linalg.norm(t_true - t_hat, axis=1) <= radius
    ))
    return {
        "fallback": False,
        "covered_set": covered_set,
        "band_coverage": band_cov,
        "tau": float(tau),
        "n_boot_fallback": boot.meta["n_fallback"],
    }


def cmd_coverage_study(cfg, out, threads=1):
    """Outer replication study of the confidence set and band coverage."""
    start = time.monotonic()
    if cfg.weights is None:
        raise ConfigError("problem.weights: coverage study needs true weights")
    sites, R = cfg.sites, cfg.reference
    z_star = solve_dual(cfg.weights, R, sites).z
    n = cfg.sample_size
    alpha = cfg.coverage_alpha
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.outer_reps)
    args = [
        (R, sites, cfg.weights, z_star, n, cfg.coverage_bootstrap_reps, alpha,
         cfg.coverage_band_points, seeds[r])
        for r in range(cfg.outer_reps)
    ]
    if threads <= 1:
        records = [_coverage_rep(a) for a in args]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(_coverage_rep, args, chunksize=8))

    effective = [r for r in records if not r["fallback"]]
    n_fallback = cfg.outer_reps - len(effective)
    set_cov = float(np.mean([r["covered_set"] for r in effective]))
    band_cov = float(np.mean([r["band_coverage"] for r in effective]))
    bundle = ResultBundle()
    bundle.diagnostics = {
        "outer_reps": cfg.outer_reps,
        "n": n,
        "bootstrap_reps": cfg.coverage_bootstrap_reps,
        "alpha": alpha,
        "set_coverage": set_cov,
        "band_avg_coverage": band_cov,
        "n_fallback": n_fallback,
    }
    if out is not None:
        path = f"{out}/coverage.csv"
        _write_csv(path, cfg,
                   ["outer_reps", "n", "bootstrap_reps", "alpha",
                    "set_coverage", "band_avg_coverage", "n_fallback"],
                   [(cfg.outer_reps, n, cfg.coverage_bootstrap_reps, alpha,
                     set_cov, band_cov, n_fallback)])
        bundle.files.append(path)
        path = f"{out}/coverage_reps.jsonl"
        _write_jsonl(path, cfg, {"outer_reps": cfg.outer_reps},
                     ({"rep": k, **rec} for k, rec in enumerate(records)))
        bundle.files.append(path)
    bundle.runtime_seconds = time.monotonic() - start
    return bundle


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="sdotinf",
        description="Semidiscrete transport maps with limit-law and "
                    "bootstrap inference",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_out in [("solve", True), ("infer", True),
                            ("validate", False), ("coverage-study", True)]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML problem file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the master seed")
        p.add_argument("--out", required=needs_out, default=None,
                       help="output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker processes for replication loops")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    t0 = time.monotonic()
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = int(args.seed)
        if args.out is not None:
            import os

            os.makedirs(args.out, exist_ok=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    try:
        if args.command == "solve":
            cmd_solve(cfg, args.out)
        elif args.command == "infer":
            cmd_infer(cfg, args.out, threads=args.threads)
        elif args.command == "validate":
            if not cmd_validate(cfg, args.out):
                print("validation failed", file=sys.stderr)
                return 3
        elif args.command == "coverage-study":
            cmd_coverage_study(cfg, args.out, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except SemidiscreteError as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(f"done in {time.monotonic() - t0:.2f}s", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
