"""Reference measures and the cell / facet integrals the pipeline runs on.

A reference measure is an absolutely continuous probability measure with
density ``rho`` supported on a convex compact region.  The quantities
needed downstream are

  * cell masses          R(C_i(z)),
  * facet surface mass   R+(D_ij) = integral of rho over the facet against
    the (d-1)-dimensional Hausdorff measure,
  * weighted facet integrals of <x_i - x_j, phi(y)> rho(y) over D_ij,
  * masses of pairwise intersections C_i(z1) ∩ C_j(z2).

Backends: exact geometry (interval / polygon supports in d <= 2) uses
lengths, areas and Gauss-Legendre quadrature -- exact for uniform
densities; everything else is estimated by Monte Carlo with explicit
seeds.  Thin-slab estimators approximate facet integrals by the measure
of a slab of geometric half-width ``eps`` divided by ``2*eps`` and carry
an O(eps) bias.

Monte Carlo operations are deterministic given their seed; independent
replications should derive per-replication seeds by spawning a
``numpy.random.SeedSequence``.
"""

from dataclasses import dataclass

import numpy as np

from . import _quadrature as quad
from .errors import (
    DimensionMismatch,
    EmptyFacet,
    NoSampler,
    NotBuiltAgainstSupport,
    UnsupportedExactDimension,
)
from .geometry import (
    FacetGeometry,
    clip_halfplane,
    interval_cells,
    locate,
    pairwise_offsets,
    polygon_area,
    polygon_cells,
)

SLAB_EPS_FACTOR = 1e-3  # default slab half-width: 1e-3 * diam(support)


def _as_rng(rng_or_seed):
    if isinstance(rng_or_seed, np.random.Generator):
        return rng_or_seed
    return np.random.default_rng(rng_or_seed)


def sample_support_uniform(support, n, rng):
    """Uniform draws from a support region (rejection where needed)."""
    rng = _as_rng(rng)
    if support.kind in ("interval", "box"):
        lo, hi = support.bbox[:, 0], support.bbox[:, 1]
        return rng.uniform(lo, hi, size=(n, support.dim))
    if support.kind == "ball":
        u = rng.normal(size=(n, support.dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = support.radius * rng.random(n) ** (1.0 / support.dim)
        return support.center + u * r[:, None]
    lo, hi = support.bbox[:, 0], support.bbox[:, 1]
    out = np.empty((n, support.dim))
    got = 0
    while got < n:
        batch = rng.uniform(lo, hi, size=(max(n - got, 1024), support.dim))
        keep = batch[support.contains(batch)]
        take = min(len(keep), n - got)
        out[got : got + take] = keep[:take]
        got += take
    return out


class ReferenceMeasure:
    """Absolutely continuous probability measure on a convex compact support.

    Use :meth:`uniform` or :meth:`custom` to construct.  Custom densities
    must come with a sup-norm bound to enable rejection sampling; the
    density is taken to vanish outside the support.  Total mass is
    validated at construction (quadrature on exact supports, Monte Carlo
    otherwise).
    """

    def __init__(self, support, kind, density=None, density_bound=None, const=None):
        self.support = support
        self.kind = kind
        self._density = density
        self.density_bound = density_bound
        self._const = const

    @staticmethod
    def uniform(support, volume_seed=0, volume_samples=400_000):
        """Uniform distribution on the support.

        Implicit supports have their volume estimated once by Monte Carlo
        (seeded, cached in the constant); all other kinds are exact.
        """
        vol = support.volume()
        if vol is None:
            rng = _as_rng(volume_seed)
            lo, hi = support.bbox[:, 0], support.bbox[:, 1]
            pts = rng.uniform(lo, hi, size=(volume_samples, support.dim))
            frac = np.mean(support.contains(pts))
            if frac <= 0:
                raise ValueError("support predicate accepted no bounding-box points")
            vol = float(np.prod(hi - lo)) * float(frac)
        const = 1.0 / vol
        return ReferenceMeasure(
            support, "uniform", density_bound=const, const=const
        )

    @staticmethod
    def custom(
        support,
        density,
        density_bound=None,
        check_normalization=True,
        check_tol=1e-6,
        check_samples=200_000,
        check_seed=0,
    ):
        """Measure with a user density (continuous on the support).

        ``density`` must be vectorized over (M, d) arrays.  When the
        support allows exact integration the total mass is checked to
        ``check_tol``; otherwise a Monte Carlo check at 4 standard errors
        is performed.
        """
        meas = ReferenceMeasure(support, "custom", density=density,
                                density_bound=density_bound)
        if check_normalization:
            meas._check_normalization(check_tol, check_samples, check_seed)
        return meas

    # --- evaluation ----------------------------------------------------
    def density(self, y):
        """Density values at points ``y`` ((M, d) or (d,)); zero off-support."""
        y2 = np.atleast_2d(np.asarray(y, dtype=float))
        inside = self.support.contains(y2)
        if self.kind == "uniform":
            vals = np.where(inside, self._const, 0.0)
        else:
            vals = np.where(inside, np.asarray(self._density(y2), dtype=float), 0.0)
        return vals if np.ndim(y) > 1 else vals.reshape(-1)

    @property
    def exact_backend(self):
        """True when cell masses and facet integrals are computed exactly
        (interval / polygon support in d <= 2)."""
        return self.support.exact_geometry and self.support.dim <= 2

    @property
    def has_sampler(self):
        return self.kind == "uniform" or self.density_bound is not None

    def sample(self, n, rng):
        """n i.i.d. draws; rejection sampling against the uniform envelope."""
        rng = _as_rng(rng)
        if self.kind == "uniform":
            return sample_support_uniform(self.support, n, rng)
        if self.density_bound is None:
            raise NoSampler("custom density lacks a sup-norm bound for sampling")
        out = np.empty((n, self.support.dim))
        got = 0
        while got < n:
            m = max(n - got, 1024)
            cand = sample_support_uniform(self.support, m, rng)
            acc = rng.random(m) * self.density_bound <= self.density(cand)
            keep = cand[acc]
            take = min(len(keep), n - got)
            out[got : got + take] = keep[:take]
            got += take
        return out

    def _check_normalization(self, tol, n_samples, seed):
        if self.exact_backend:
            total = _exact_region_mass_full(self)
            if abs(total - 1.0) > tol:
                raise ValueError(
                    f"density integrates to {total:.8f} over the support, not 1"
                )
        else:
            rng = _as_rng(seed)
            vol = self.support.volume()
            if vol is None:
                raise ValueError(
                    "cannot validate normalization on an implicit support; "
                    "pass check_normalization=False and validate externally"
                )
            pts = sample_support_uniform(self.support, n_samples, rng)
            vals = self.density(pts)
            est = float(np.mean(vals)) * vol
            se = float(np.std(vals)) * vol / np.sqrt(n_samples)
            if abs(est - 1.0) > max(4.0 * se, 1e-12):
                raise ValueError(
                    f"density mass estimate {est:.5f} (se {se:.2g}) is not 1"
                )


def _exact_region_mass_full(R):
    sup = R.support
    if sup.dim == 1:
        lo, hi = sup.bounds[0]
        if R.kind == "uniform":
            return (hi - lo) * R._const
        return float(quad.integrate_interval(lambda y: R.density(y), lo, hi))
    if R.kind == "uniform":
        return polygon_area(sup.vertices) * R._const
    return float(quad.integrate_polygon(lambda y: R.density(y), sup.vertices))


# --- cell masses --------------------------------------------------------


def cell_masses(R, sites, z):
    """All cell masses R(C_i(z)) through the exact backend.

    Raises :class:`UnsupportedExactDimension` when only Monte Carlo is
    available (use :func:`mc_cell_mass` there).
    """
    if not R.exact_backend:
        raise UnsupportedExactDimension(
            "exact cell masses need an interval or polygon support in d <= 2"
        )
    if sites.dim != R.support.dim:
        raise DimensionMismatch(
            f"sites have dimension {sites.dim}, support has {R.support.dim}"
        )
    if sites.dim == 1:
        lo, hi = interval_cells(sites, z, R.support)
        if R.kind == "uniform":
            return np.clip(hi - lo, 0.0, None) * R._const
        out = np.zeros(sites.n)
        for i in range(sites.n):
            if hi[i] > lo[i]:
                out[i] = quad.integrate_interval(lambda y: R.density(y), lo[i], hi[i])
        return out
    cells = polygon_cells(sites, z, R.support)
    if R.kind == "uniform":
        return np.array([polygon_area(c) * R._const for c in cells])
    return np.array(
        [
            float(quad.integrate_polygon(lambda y: R.density(y), c))
            if len(c) >= 3
            else 0.0
            for c in cells
        ]
    )


def cell_mass(R, diagram, i, mc_samples=100_000, seed=0):
    """Mass of cell i of a built diagram; exact in d <= 2, Monte Carlo else."""
    if not diagram.support.matches(R.support):
        raise NotBuiltAgainstSupport(
            "diagram was built against a different support than the measure's"
        )
    if R.exact_backend and diagram.cells[i] is not None:
        if diagram.dim == 1:
            lo, hi = diagram.cells[i]
            if hi <= lo:
                return 0.0
            if R.kind == "uniform":
                return (hi - lo) * R._const
            return float(quad.integrate_interval(lambda y: R.density(y), lo, hi))
        cell = diagram.cells[i]
        if len(cell) < 3:
            return 0.0
        if R.kind == "uniform":
            return polygon_area(cell) * R._const
        return float(quad.integrate_polygon(lambda y: R.density(y), cell))
    est, _ = mc_cell_mass(R, diagram.sites, diagram.z, i, mc_samples, seed)
    return est


def mc_cell_mass(R, sites, z, i, n_samples, rng_seed):
    """Hit-or-miss estimate of R(C_i(z)) with its standard error.

    Unbiased; ``std_error = sqrt(m (1 - m) / n_samples)``.
    """
    if not R.has_sampler:
        raise NoSampler("reference measure cannot sample")
    if sites.n == 1:
        return 1.0, 0.0
    rng = _as_rng(rng_seed)
    pts = R.sample(n_samples, rng)
    hits = locate(sites, z, pts) == i
    m = float(np.mean(hits))
    return m, float(np.sqrt(m * (1.0 - m) / n_samples))


# --- facet measures ------------------------------------------------------


@dataclass(frozen=True)
class FacetMeasureRecord:
    """Surface mass of one facet with its provenance.

    ``estimator`` is one of ``exact-line-integral`` (points and exact
    segment quadrature), ``thin-slab-exact`` or ``thin-slab-mc``;
    ``std_error`` is set for Monte Carlo estimates only.
    """

    pair: tuple
    surface_mass: float
    extent: float
    estimator: str
    std_error: float = None

    def __post_init__(self):
        if self.surface_mass < 0:
            raise ValueError("surface mass cannot be negative")


def facet_surface_mass(R, facet, order=quad.DEFAULT_ORDER, eps=None,
                       n_samples=200_000, seed=0):
    """Surface mass R+(D_ij) of a facet.

    d = 1: density value at the facet point (counting measure);
    d = 2: Gauss-Legendre line integral along the segment (exact for
    constant densities); d >= 3: thin-slab Monte Carlo with O(eps) bias.
    A zero-extent facet carries zero mass.
    """
    if facet.geometry is None:
        est, se = _slab_mc(R, facet, eps, n_samples, seed)
        return FacetMeasureRecord(facet.pair, est, float("nan"), "thin-slab-mc", se)
    if facet.dim == 1:
        val = float(R.density(facet.geometry)[0])
        return FacetMeasureRecord(facet.pair, val, 1.0, "exact-line-integral")
    if len(facet.geometry) == 0:
        raise EmptyFacet(f"facet {facet.pair} has no geometry")
    ext = facet.extent
    if ext <= 0.0:
        return FacetMeasureRecord(facet.pair, 0.0, 0.0, "exact-line-integral")
    a, b = facet.geometry
    if R.kind == "uniform":
        mass = ext * R._const
    else:
        mass = float(quad.integrate_segment(lambda y: R.density(y), a, b, order))
    return FacetMeasureRecord(facet.pair, mass, ext, "exact-line-integral")


def facet_weighted_integral(R, facet, phi, order=quad.DEFAULT_ORDER, eps=None,
                            n_samples=200_000, seed=0):
    """Integral of <x_i - x_j, phi(y)> rho(y) over the facet.

    For constant phi this reduces to <x_i - x_j, phi> * R+(D_ij) (exact
    backends reproduce that identity to 1e-10).  ``phi`` must be
    vectorized over (M, d) arrays and bounded; its discontinuity set must
    be negligible for (d-1)-dimensional integration, which is the
    caller's responsibility.
    """
    n = facet.normal

    def weighted(y):
        return np.asarray(phi(y), dtype=float) @ n

    if facet.geometry is None:
        est, _ = _slab_mc(R, facet, eps, n_samples, seed, weight=weighted)
        return est
    if facet.dim == 1:
        pt = facet.geometry
        return float(weighted(pt)[0] * R.density(pt)[0])
    if len(facet.geometry) == 0:
        raise EmptyFacet(f"facet {facet.pair} has no geometry")
    if facet.extent <= 0.0:
        return 0.0
    a, b = facet.geometry
    return float(
        quad.integrate_segment(lambda y: weighted(y) * R.density(y), a, b, order)
    )


def _slab_membership(facet, pts, eps_geom):
    nrm = np.linalg.norm(facet.normal)
    margin = (pts @ facet.normal - facet.offset) / nrm
    ok = np.abs(margin) <= eps_geom
    normals, offs = facet.constraints
    for k in range(len(offs)):
        ok &= pts @ normals[k] >= offs[k]
    return ok


def _slab_mc(R, facet, eps, n_samples, seed, weight=None):
    """Thin-slab Monte Carlo estimate: (weighted) slab mass / (2 eps)."""
    if not R.has_sampler:
        raise NoSampler("thin-slab estimation needs a samplable measure")
    if eps is None:
        eps = SLAB_EPS_FACTOR * R.support.diameter()
    rng = _as_rng(seed)
    pts = R.sample(n_samples, rng)
    inside = _slab_membership(facet, pts, eps)
    if weight is None:
        vals = inside.astype(float)
    else:
        vals = np.where(inside, weight(pts), 0.0)
    est = float(np.mean(vals)) / (2.0 * eps)
    se = float(np.std(vals)) / np.sqrt(n_samples) / (2.0 * eps)
    return est, se


def _implicit_facet(sites, z, i, j):
    b = pairwise_offsets(sites, z)
    normal = sites.points[i] - sites.points[j]
    others = [k for k in range(sites.n) if k not in (i, j)]
    cons = (
        (sites.points[i] - sites.points[others], b[i, others])
        if others
        else (np.zeros((0, sites.dim)), np.zeros(0))
    )
    return FacetGeometry(
        pair=(min(i, j), max(i, j)),
        normal=normal,
        offset=b[i, j],
        unit_normal=normal / np.linalg.norm(normal),
        geometry=None,
        constraints=cons,
    )


def facet_mass_thin_slab(R, sites, z, i, j, eps=None, n_samples=None, seed=0):
    """Thin-slab estimate of R+(D_ij) at geometric half-width ``eps``.

    With ``n_samples=None`` the slab measure is computed exactly
    (d <= 2 only), isolating the O(eps) slab bias -- the oracle used to
    check linear convergence to the line integral.  Otherwise the slab
    measure is estimated by Monte Carlo.
    """
    if eps is None:
        eps = SLAB_EPS_FACTOR * R.support.diameter()
    b = pairwise_offsets(sites, z)
    normal = sites.points[i] - sites.points[j]
    nrm = np.linalg.norm(normal)
    if n_samples is not None:
        est, se = _slab_mc(R, _implicit_facet(sites, z, i, j), eps, n_samples, seed)
        return FacetMeasureRecord(
            (min(i, j), max(i, j)), est, float("nan"), "thin-slab-mc", se
        )
    if not R.exact_backend:
        raise UnsupportedExactDimension(
            "exact slab masses need an interval or polygon support in d <= 2"
        )
    if sites.dim == 1:
        x = sites.points[:, 0]
        lo_s, hi_s = R.support.bounds[0]
        lo = lo_s
        hi = hi_s
        for k in range(sites.n):
            if k == i or k == j:
                continue
            dxk = x[i] - x[k]
            bound = b[i, k] / dxk
            if dxk > 0:
                lo = max(lo, bound)
            else:
                hi = min(hi, bound)
        c = b[i, j] / (x[i] - x[j])
        lo = max(lo, c - eps)
        hi = min(hi, c + eps)
        mass = _interval_mass(R, lo, hi)
        return FacetMeasureRecord(
            (min(i, j), max(i, j)), mass / (2 * eps), float("nan"), "thin-slab-exact"
        )
    poly = R.support.vertices
    for k in range(sites.n):
        if k == i or k == j or len(poly) == 0:
            continue
        poly = clip_halfplane(poly, sites.points[i] - sites.points[k], b[i, k])
    poly = clip_halfplane(poly, normal, b[i, j] - eps * nrm)
    poly = clip_halfplane(poly, -normal, -(b[i, j] + eps * nrm))
    mass = _polygon_mass(R, poly)
    return FacetMeasureRecord(
        (min(i, j), max(i, j)), mass / (2 * eps), float("nan"), "thin-slab-exact"
    )


def _interval_mass(R, lo, hi):
    if hi <= lo:
        return 0.0
    if R.kind == "uniform":
        return (hi - lo) * R._const
    return float(quad.integrate_interval(lambda y: R.density(y), lo, hi))


def _polygon_mass(R, poly):
    if len(poly) < 3:
        return 0.0
    if R.kind == "uniform":
        return polygon_area(poly) * R._const
    return float(quad.integrate_polygon(lambda y: R.density(y), poly))


def facet_records(R, diagram, order=quad.DEFAULT_ORDER):
    """Surface-mass records for every facet of an exact diagram."""
    return {
        pair: facet_surface_mass(R, facet, order=order)
        for pair, facet in diagram.facets.items()
    }


def facet_mass_dict(R, sites, z):
    """Surface masses R+(D_ij) keyed by pair, at weight vector ``z``."""
    from .geometry import build_diagram

    diagram = build_diagram(sites, z, R.support)
    return {
        pair: rec.surface_mass for pair, rec in facet_records(R, diagram).items()
    }


def facet_integral_dict(R, sites, z, phi):
    """Weighted facet integrals of <x_i - x_j, phi> rho, keyed by pair."""
    from .geometry import build_diagram

    diagram = build_diagram(sites, z, R.support)
    return {
        pair: facet_weighted_integral(R, facet, phi)
        for pair, facet in diagram.facets.items()
    }


# --- pairwise intersections ----------------------------------------------


def intersection_mass(R, sites, z1, z2, i, j):
    """Mass of C_i(z1) ∩ C_j(z2) through the exact backend (i = j allowed)."""
    if not R.exact_backend:
        raise UnsupportedExactDimension(
            "exact intersections need an interval or polygon support in d <= 2"
        )
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    if sites.dim == 1:
        lo1, hi1 = interval_cells(sites, z1, R.support)
        lo2, hi2 = interval_cells(sites, z2, R.support)
        return _interval_mass(R, max(lo1[i], lo2[j]), min(hi1[i], hi2[j]))
    b1 = pairwise_offsets(sites, z1)
    b2 = pairwise_offsets(sites, z2)
    pts = sites.points
    poly = R.support.vertices
    for k in range(sites.n):
        if k != i and len(poly) > 0:
            poly = clip_halfplane(poly, pts[i] - pts[k], b1[i, k])
    for k in range(sites.n):
        if k != j and len(poly) > 0:
            poly = clip_halfplane(poly, pts[j] - pts[k], b2[j, k])
    return _polygon_mass(R, poly)


def symmetric_difference_mass(R, sites, z1, z2, i):
    """Mass of C_i(z1) Δ C_i(z2); exact backends only."""
    m1 = float(cell_masses(R, sites, z1)[i])
    m2 = float(cell_masses(R, sites, z2)[i])
    inter = intersection_mass(R, sites, z1, z2, i, i)
    return m1 + m2 - 2.0 * inter
