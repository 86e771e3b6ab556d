"""Gauss-Legendre quadrature over segments and convex polygons.

Rules are tensorized over [0, 1] and mapped affinely (segments) or through
a Duffy-style square-to-triangle map (polygons, fanned from the vertex
average).  A rule of order ``n`` integrates polynomial integrands of total
degree <= n - 2 exactly on polygons, far beyond what smooth densities need
at the default order 32.

Adaptive variants compare two successive orders and split the domain when
they disagree, guarding against integrands that are smooth but sharply
peaked relative to the domain size.
"""

from functools import lru_cache

import numpy as np

DEFAULT_ORDER = 32
_ADAPT_TOL = 1e-10
_MAX_DEPTH = 12


@lru_cache(maxsize=32)
def _unit_rule(order):
    """Nodes and weights of Gauss-Legendre on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def segment_quadrature(a, b, order=DEFAULT_ORDER):
    """Quadrature nodes (M, d) and weights (M,) along the segment [a, b].

    Weights sum to the Euclidean length of the segment.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t, w = _unit_rule(order)
    nodes = a[None, :] + t[:, None] * (b - a)[None, :]
    return nodes, w * np.linalg.norm(b - a)


def integrate_segment(func, a, b, order=DEFAULT_ORDER, adaptive=True):
    """Integrate ``func`` (vectorized over points) along segment [a, b]."""

    def one_pass(a, b, order):
        nodes, w = segment_quadrature(a, b, order)
        return w @ np.asarray(func(nodes), dtype=float)

    if not adaptive:
        return one_pass(a, b, order)

    def recurse(a, b, depth):
        coarse = one_pass(a, b, order // 2)
        fine = one_pass(a, b, order)
        if np.max(np.abs(fine - coarse)) <= _ADAPT_TOL or depth >= _MAX_DEPTH:
            return fine
        mid = 0.5 * (np.asarray(a) + np.asarray(b))
        return recurse(a, mid, depth + 1) + recurse(mid, b, depth + 1)

    return recurse(np.asarray(a, float), np.asarray(b, float), 0)


def integrate_interval(func, lo, hi, order=DEFAULT_ORDER, adaptive=True):
    """1-D convenience wrapper; ``func`` maps (M, 1) arrays to values."""
    return integrate_segment(func, np.array([lo]), np.array([hi]), order, adaptive)


def _triangles(poly):
    """Fan triangulation of a convex CCW polygon from its vertex average."""
    c = poly.mean(axis=0)
    nxt = np.roll(poly, -1, axis=0)
    return [(c, poly[k], nxt[k]) for k in range(len(poly))]


def triangle_quadrature(tri, order=DEFAULT_ORDER):
    """Nodes and weights on a triangle via the Duffy square collapse."""
    a, b, c = (np.asarray(v, dtype=float) for v in tri)
    t, w = _unit_rule(order)
    u = t[:, None]
    v = t[None, :]
    # point(u, v) = a + u*(b - a) + u*v*(c - b); Jacobian = u * |2 area|
    pts = a[None, None, :] + u[..., None] * (b - a) + (u * v)[..., None] * (c - b)
    area2 = abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    wts = (w[:, None] * w[None, :]) * t[:, None] * area2
    return pts.reshape(-1, 2), wts.ravel()


def polygon_quadrature(poly, order=DEFAULT_ORDER):
    """Nodes (M, 2) and weights (M,) over a convex CCW polygon.

    Weights sum to the polygon area.
    """
    poly = np.asarray(poly, dtype=float)
    if len(poly) < 3:
        return np.zeros((0, 2)), np.zeros(0)
    all_pts, all_w = [], []
    for tri in _triangles(poly):
        p, w = triangle_quadrature(tri, order)
        all_pts.append(p)
        all_w.append(w)
    return np.concatenate(all_pts), np.concatenate(all_w)


def integrate_polygon(func, poly, order=DEFAULT_ORDER, adaptive=True):
    """Integrate ``func`` (vectorized, may return vectors) over a polygon."""
    poly = np.asarray(poly, dtype=float)
    if len(poly) < 3:
        probe = np.asarray(func(np.zeros((1, 2))), dtype=float)
        return np.zeros(probe.shape[1:]) if probe.ndim > 1 else 0.0

    def one_pass(order):
        pts, w = polygon_quadrature(poly, order)
        vals = np.asarray(func(pts), dtype=float)
        return np.tensordot(w, vals, axes=1)

    if not adaptive:
        return one_pass(order)
    coarse = one_pass(order // 2)
    fine = one_pass(order)
    if np.max(np.abs(fine - coarse)) <= _ADAPT_TOL:
        return fine
    # split through the vertex average: integrate each fan triangle alone
    total = None
    for tri in _triangles(poly):
        pts, w = triangle_quadrature(tri, order)
        pts2, w2 = triangle_quadrature(tri, 2 * order)
        part = np.tensordot(w2, np.asarray(func(pts2), dtype=float), axes=1)
        total = part if total is None else total + part
    return total
