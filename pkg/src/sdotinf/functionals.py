"""Transport-map functionals and their directional derivatives.

For a weight vector ``z`` the transport map sends ``y`` to the site
minimizing ``0.5*|y - x_i|^2 - z_i``.  Two functionals of the map are
tracked:

  * the error functional
    ``delta_s(z1, z2) = integral of |T_{z1} - T_{z2}|^s dR``, computed as
    ``sum_{i != j} |x_i - x_j|^s R(C_i(z1) ∩ C_j(z2))``;
  * the linear functional
    ``gamma_phi(z) = integral of <phi, T_z> dR`` for a bounded vector
    field ``phi``.

At a solved potential both admit explicit directional derivatives built
from facet quantities:

    delta_s:  sum_{i<j} |x_i - x_j|^(s-1) R+(D_ij)
                          * |h2_j - h2_i - h1_j + h1_i|,
    gamma:    sum_{i<j} (h_i - h_j)/|x_i - x_j|
                          * integral over D_ij of <x_i - x_j, phi> rho.

The first is positively homogeneous but nonlinear in the directions; the
second is linear.  One-sided finite-difference quotients are provided as
an independent oracle; they are evaluated only at solved potentials,
where the derivative formulas hold.

Pairwise intersections are clipped exactly in d <= 2 (Monte Carlo
otherwise), which keeps difference quotients accurate down to step 1e-4.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _quadrature as quad
from .errors import DimensionMismatch, UnsupportedExactDimension
from .geometry import (
    build_diagram,
    clip_halfplane,
    interval_cells,
    locate,
    pairwise_offsets,
    polygon_cells,
)
from .measure import (
    _interval_mass,
    _polygon_mass,
    facet_records,
    facet_weighted_integral,
)


@dataclass(frozen=True)
class VectorField:
    """Bounded Borel vector field with a declared sup-norm bound.

    ``fn`` must be vectorized over (M, d) arrays and return (M, d).  The
    bound is enforced on every batch of evaluation points.  The set of
    discontinuities must be small enough for facet integration (Hausdorff
    dimension below d - 1); that property is declared, not checked.
    """

    fn: object = field(repr=False)
    bound: float
    smoothness: str = ""

    def __call__(self, y):
        vals = np.asarray(self.fn(np.atleast_2d(np.asarray(y, dtype=float))),
                          dtype=float)
        worst = float(np.max(np.linalg.norm(vals, axis=-1), initial=0.0))
        if worst > self.bound * (1.0 + 1e-9) + 1e-12:
            raise ValueError(
                f"vector field exceeded its declared bound: {worst} > {self.bound}"
            )
        return vals


class _ConstantFn:
    def __init__(self, vec):
        self.vec = vec

    def __call__(self, y):
        return np.broadcast_to(self.vec, (len(y), len(self.vec)))


class _CoordinateFn:
    def __init__(self, k, dim):
        self.k = k
        self.dim = dim

    def __call__(self, y):
        out = np.zeros((len(y), self.dim))
        out[:, self.k] = y[:, self.k]
        return out


class _BumpFn:
    def __init__(self, center, radius, width, direction):
        self.center = center
        self.radius = radius
        self.width = width
        self.direction = direction

    def __call__(self, y):
        r = np.linalg.norm(y - self.center, axis=1)
        sig = 1.0 / (1.0 + np.exp(-(self.radius - r) / self.width))
        return sig[:, None] * self.direction


def constant_field(vec):
    vec = np.atleast_1d(np.asarray(vec, dtype=float))
    return VectorField(_ConstantFn(vec), float(np.linalg.norm(vec)), "constant")


def coordinate_field(k, dim, bound):
    """Field ``y -> y_k * e_k``; ``bound`` must dominate sup |y_k| on the
    support."""
    return VectorField(_CoordinateFn(k, dim), float(bound), "smooth")


def smoothed_indicator_field(center, radius, width, direction):
    """Logistic bump around a ball, pointing along ``direction``."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    direction = np.atleast_1d(np.asarray(direction, dtype=float))
    return VectorField(
        _BumpFn(center, float(radius), float(width), direction),
        float(np.linalg.norm(direction)),
        "smooth",
    )


def transport_map(z, y, sites):
    """Map ``y`` to its assigned site ``x_{locate(y)}``.

    Facet points (a null set) go to the smallest competing index.
    """
    idx = locate(sites, z, y)
    return sites.points[idx]


# --- the two functionals --------------------------------------------------


def _pairwise_intersection_masses(z1, z2, R, sites):
    """Masses R(C_i(z1) ∩ C_j(z2)) for all i != j (exact backend)."""
    n = sites.n
    out = np.zeros((n, n))
    b1 = pairwise_offsets(sites, z1)
    b2 = pairwise_offsets(sites, z2)
    if sites.dim == 1:
        lo1, hi1 = interval_cells(sites, z1, R.support)
        lo2, hi2 = interval_cells(sites, z2, R.support)
        for i in range(n):
            for j in range(n):
                if i == j or b1[i, j] >= b2[i, j]:
                    continue
                out[i, j] = _interval_mass(
                    R, max(lo1[i], lo2[j]), min(hi1[i], hi2[j])
                )
        return out
    cells1 = polygon_cells(sites, z1, R.support)
    pts = sites.points
    for i in range(n):
        if len(cells1[i]) < 3:
            continue
        for j in range(n):
            if i == j or b1[i, j] >= b2[i, j]:
                continue
            poly = cells1[i]
            for k in range(n):
                if k == j or len(poly) == 0:
                    continue
                poly = clip_halfplane(poly, pts[j] - pts[k], b2[j, k])
            out[i, j] = _polygon_mass(R, poly)
    return out


def delta_s(z1, z2, s, R, sites, method="auto", mc_samples=100_000, seed=0):
    """Error functional: integral of |T_{z1}(y) - T_{z2}(y)|^s dR(y).

    Computed from pairwise cell intersections, exactly in d <= 2; the
    Monte Carlo route averages |T_{z1}(Y) - T_{z2}(Y)|^s over samples.
    """
    if s < 1:
        raise ValueError("the exponent must satisfy s >= 1")
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    if np.array_equal(z1, z2):
        return 0.0
    exact = R.exact_backend if method == "auto" else (method == "exact")
    if exact and not R.exact_backend:
        raise UnsupportedExactDimension(
            "exact error functional needs an interval or polygon support in d <= 2"
        )
    dist = sites.pairwise_distances()
    if exact:
        masses = _pairwise_intersection_masses(z1, z2, R, sites)
        np.fill_diagonal(masses, 0.0)
        return float(np.sum(dist**s * masses))
    pts = R.sample(mc_samples, np.random.default_rng(seed))
    t1 = transport_map(z1, pts, sites)
    t2 = transport_map(z2, pts, sites)
    return float(np.mean(np.linalg.norm(t1 - t2, axis=1) ** s))


def gamma_phi(z, phi, R, sites, method="auto", mc_samples=100_000, seed=0):
    """Linear functional: integral of <phi(y), T_z(y)> dR(y)."""
    z = np.asarray(z, dtype=float)
    exact = R.exact_backend if method == "auto" else (method == "exact")
    if exact and not R.exact_backend:
        raise UnsupportedExactDimension(
            "exact integration needs an interval or polygon support in d <= 2"
        )
    if not exact:
        pts = R.sample(mc_samples, np.random.default_rng(seed))
        tv = transport_map(z, pts, sites)
        return float(np.mean(np.sum(np.asarray(phi(pts)) * tv, axis=1)))
    diagram = build_diagram(sites, z, R.support)
    total = 0.0
    for i in range(sites.n):
        if diagram.empty[i]:
            continue

        def integrand(y):
            return np.asarray(phi(y), dtype=float) * R.density(y)[:, None]

        if sites.dim == 1:
            lo, hi = diagram.cells[i]
            v = quad.integrate_segment(integrand, np.array([lo]), np.array([hi]))
        else:
            v = quad.integrate_polygon(integrand, diagram.cells[i])
        total += float(np.atleast_1d(v) @ sites.points[i])
    return total


def gamma_phi_diff(z_from, z_to, phi, R, sites):
    """Difference gamma_phi(z_to) - gamma_phi(z_from), integrated only over
    the cells' pairwise overlaps.

    Equals ``sum_{i != j} integral over C_i(z_from) ∩ C_j(z_to) of
    <x_j - x_i, phi> dR`` -- much better conditioned than subtracting two
    full integrals when the potentials are close.  Exact backends only.
    """
    if not R.exact_backend:
        raise UnsupportedExactDimension(
            "the overlap form of the difference needs an exact backend"
        )
    z_from = np.asarray(z_from, dtype=float)
    z_to = np.asarray(z_to, dtype=float)
    if np.array_equal(z_from, z_to):
        return 0.0
    n = sites.n
    pts = sites.points
    b1 = pairwise_offsets(sites, z_from)
    b2 = pairwise_offsets(sites, z_to)
    total = 0.0
    if sites.dim == 1:
        lo1, hi1 = interval_cells(sites, z_from, R.support)
        lo2, hi2 = interval_cells(sites, z_to, R.support)
    else:
        cells1 = polygon_cells(sites, z_from, R.support)
    for i in range(n):
        for j in range(n):
            if i == j or b1[i, j] >= b2[i, j]:
                continue
            gap = pts[j] - pts[i]

            def integrand(y):
                return (np.asarray(phi(y), dtype=float) @ gap) * R.density(y)

            if sites.dim == 1:
                lo = max(lo1[i], lo2[j])
                hi = min(hi1[i], hi2[j])
                if hi > lo:
                    total += float(quad.integrate_interval(integrand, lo, hi))
            else:
                poly = cells1[i]
                for k in range(n):
                    if k == j or len(poly) == 0:
                        continue
                    poly = clip_halfplane(poly, pts[j] - pts[k], b2[j, k])
                if len(poly) >= 3:
                    total += float(quad.integrate_polygon(integrand, poly))
    return total


# --- derivatives ----------------------------------------------------------


@dataclass(frozen=True)
class DerivativeBreakdown:
    """Directional derivative with its per-facet decomposition.

    ``weights[k]`` is the facet coefficient for ``pairs[k]`` and
    ``terms[k]`` the signed contribution; ``total`` is their sum.
    """

    pairs: tuple
    weights: np.ndarray
    terms: np.ndarray
    total: float


def hadamard_delta_deriv(z, h1, h2, s, R, sites, facet_masses=None):
    """Directional derivative of delta_s at a solved potential.

    ``sum_{i<j} |x_i - x_j|^(s-1) R+(D_ij) |h2_j - h2_i - h1_j + h1_i|``:
    positively homogeneous, nonlinear, and zero along shifts ``c*1``.
    ``facet_masses`` may carry precomputed surface masses keyed by pair.
    """
    h1 = np.asarray(h1, dtype=float)
    h2 = np.asarray(h2, dtype=float)
    if h1.shape != (sites.n,) or h2.shape != (sites.n,):
        raise DimensionMismatch("directions must have one entry per site")
    if facet_masses is None:
        diagram = build_diagram(sites, z, R.support)
        facet_masses = {
            pair: rec.surface_mass for pair, rec in facet_records(R, diagram).items()
        }
    dist = sites.pairwise_distances()
    diff = h2 - h1
    pairs, weights, terms = [], [], []
    for (i, j), mass in sorted(facet_masses.items()):
        w = dist[i, j] ** (s - 1.0) * mass
        t = w * abs(diff[j] - diff[i])
        pairs.append((i, j))
        weights.append(w)
        terms.append(t)
    terms = np.asarray(terms)
    return DerivativeBreakdown(
        tuple(pairs), np.asarray(weights), terms, float(terms.sum())
    )


def gamma_deriv(z, h, phi, R, sites, facet_integrals=None):
    """Derivative of gamma_phi at a solved potential: linear in ``h``.

    ``sum_{i<j} (h_i - h_j)/|x_i - x_j| * integral over D_ij of
    <x_i - x_j, phi> rho``.  ``facet_integrals`` may carry the weighted
    facet integrals keyed by pair; facets with zero surface mass simply
    contribute nothing.
    """
    h = np.asarray(h, dtype=float)
    if h.shape != (sites.n,):
        raise DimensionMismatch("direction must have one entry per site")
    if facet_integrals is None:
        diagram = build_diagram(sites, z, R.support)
        facet_integrals = {
            pair: facet_weighted_integral(R, facet, phi)
            for pair, facet in diagram.facets.items()
        }
    dist = sites.pairwise_distances()
    pairs, weights, terms = [], [], []
    for (i, j), integral in sorted(facet_integrals.items()):
        w = integral / dist[i, j]
        pairs.append((i, j))
        weights.append(w)
        terms.append((h[i] - h[j]) * w)
    terms = np.asarray(terms)
    return DerivativeBreakdown(
        tuple(pairs), np.asarray(weights), terms, float(terms.sum())
    )


def fd_directional_quotient(kind, z, R, sites, t_list, h1=None, h2=None,
                            h=None, s=None, phi=None):
    """One-sided difference quotients of a functional along a direction.

    ``kind`` is ``"delta"`` (directions ``h1``, ``h2``, exponent ``s``) or
    ``"gamma"`` (direction ``h``, field ``phi``).  ``t_list`` must be
    positive and decreasing.  Quotients converge at rate O(t) to the
    analytic directional derivative at a solved potential.
    """
    t_arr = np.asarray(t_list, dtype=float)
    if np.any(t_arr <= 0) or np.any(np.diff(t_arr) >= 0):
        raise ValueError("t_list must be positive and strictly decreasing")
    z = np.asarray(z, dtype=float)
    out = []
    if kind == "delta":
        if h1 is None or h2 is None or s is None:
            raise ValueError("delta quotients need h1, h2 and s")
        h1 = np.asarray(h1, dtype=float)
        h2 = np.asarray(h2, dtype=float)
        for t in t_arr:
            out.append(delta_s(z + t * h1, z + t * h2, s, R, sites) / t)
    elif kind == "gamma":
        if h is None or phi is None:
            raise ValueError("gamma quotients need h and phi")
        h = np.asarray(h, dtype=float)
        for t in t_arr:
            out.append(gamma_phi_diff(z, z + t * h, phi, R, sites) / t)
    else:
        raise ValueError(f"unknown functional kind {kind!r}")
    return np.asarray(out)
