"""Laguerre cells (power-diagram cells) of a weighted site set, clipped to a
convex compact support.

A site set ``x_1..x_N`` together with additive weights ``z`` induces cells

    C_i(z) = { y : 0.5*|y - x_i|^2 - z_i <= 0.5*|y - x_j|^2 - z_j  for all j }
           = { y : <x_i - x_j, y> >= b_ij(z)  for all j != i },

with offsets ``b_ij(z) = (|x_i|^2 - |x_j|^2)/2 - z_i + z_j``.  Cells are
computed exactly as intervals (d = 1) or convex polygons (d = 2) by
sequential half-plane clipping; in higher dimension they stay implicit as
half-space lists and every quantity of interest is estimated by Monte
Carlo in the measure layer.

The shared facet of cells i and j lies on the hyperplane
``<x_i - x_j, y> = b_ij`` and equals the section of either cell by that
hyperplane.  Adding a constant to every weight translates no boundary:
all geometry is invariant under ``z -> z + c*1``.

Tolerances: algebraic identities hold to 1e-12, on-plane tests use 1e-10,
cell volumes tile the support to 1e-9 relative.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma as _gamma_fn

from .errors import DimensionMismatch, UnsupportedExactDimension

ALG_TOL = 1e-12
PLANE_TOL = 1e-10
VOLUME_RTOL = 1e-9


def _as_points(points):
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise DimensionMismatch(f"expected an (N, d) array, got shape {pts.shape}")
    return pts


@dataclass(frozen=True)
class SiteSet:
    """Support points of the discrete target measure.

    Points are stored as an (N, d) float array; they must be pairwise
    distinct.  Instances are immutable and safe to share between threads.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = _as_points(self.points)
        if len(pts) < 1:
            raise ValueError("need at least one site")
        diffs = pts[:, None, :] - pts[None, :, :]
        dist = np.linalg.norm(diffs, axis=-1)
        np.fill_diagonal(dist, np.inf)
        if np.min(dist) <= 0.0:
            raise ValueError("sites must be pairwise distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    def pairwise_distances(self):
        """(N, N) matrix of Euclidean distances; diagonal is zero."""
        d = self.points[:, None, :] - self.points[None, :, :]
        return np.linalg.norm(d, axis=-1)


@dataclass(frozen=True)
class SupportRegion:
    """Convex compact region carrying the reference measure.

    Representations:
      * ``interval``: [a, b] in dimension 1,
      * ``polygon``: counterclockwise convex vertex list in dimension 2,
      * ``box``: axis-aligned product of intervals in any dimension,
      * ``ball``: Euclidean ball (membership + bounding box; no exact
        cell clipping),
      * ``implicit``: membership predicate plus bounding box.

    Only intervals and polygons support exact cell geometry; the others
    are served by Monte Carlo backends.  The caller is responsible for
    supplying a genuinely convex predicate for ``implicit`` regions and a
    support whose boundary meets every hyperplane in a null set.
    """

    kind: str
    dim: int
    bounds: np.ndarray = None          # interval/box: (d, 2) lo/hi
    vertices: np.ndarray = None        # polygon: (M, 2) CCW
    center: np.ndarray = None          # ball
    radius: float = None               # ball
    predicate: object = field(default=None, repr=False)   # implicit
    bbox: np.ndarray = None            # (d, 2) lo/hi, all kinds

    # --- constructors -------------------------------------------------
    @staticmethod
    def interval(a, b):
        if not b > a:
            raise ValueError("interval needs a < b")
        bounds = np.array([[float(a), float(b)]])
        return SupportRegion(kind="interval", dim=1, bounds=bounds, bbox=bounds)

    @staticmethod
    def polygon(vertices):
        verts = np.asarray(vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 3:
            raise ValueError("polygon needs an (M, 2) vertex array, M >= 3")
        verts = _dedupe_ring(verts)
        area2 = _shoelace2(verts)
        if area2 < 0:
            raise ValueError("polygon vertices must be counterclockwise")
        if area2 <= ALG_TOL:
            raise ValueError("polygon has empty interior")
        nxt = np.roll(verts, -1, axis=0)
        nxt2 = np.roll(verts, -2, axis=0)
        cross = (nxt[:, 0] - verts[:, 0]) * (nxt2[:, 1] - nxt[:, 1]) - (
            nxt[:, 1] - verts[:, 1]
        ) * (nxt2[:, 0] - nxt[:, 0])
        if np.any(cross < -PLANE_TOL * max(1.0, np.abs(verts).max()) ** 2):
            raise ValueError("polygon must be convex")
        bbox = np.stack([verts.min(axis=0), verts.max(axis=0)], axis=1)
        return SupportRegion(kind="polygon", dim=2, vertices=verts, bbox=bbox)

    @staticmethod
    def box(low, high):
        low = np.atleast_1d(np.asarray(low, dtype=float))
        high = np.atleast_1d(np.asarray(high, dtype=float))
        if low.shape != high.shape or np.any(high <= low):
            raise ValueError("box needs low < high componentwise")
        d = len(low)
        if d == 1:
            return SupportRegion.interval(low[0], high[0])
        if d == 2:
            verts = np.array(
                [[low[0], low[1]], [high[0], low[1]], [high[0], high[1]], [low[0], high[1]]]
            )
            return SupportRegion.polygon(verts)
        bounds = np.stack([low, high], axis=1)
        return SupportRegion(kind="box", dim=d, bounds=bounds, bbox=bounds)

    @staticmethod
    def ball(center, radius):
        center = np.atleast_1d(np.asarray(center, dtype=float))
        if radius <= 0:
            raise ValueError("radius must be positive")
        bbox = np.stack([center - radius, center + radius], axis=1)
        return SupportRegion(
            kind="ball", dim=len(center), center=center, radius=float(radius), bbox=bbox
        )

    @staticmethod
    def implicit(predicate, bbox):
        bbox = np.asarray(bbox, dtype=float)
        if bbox.ndim != 2 or bbox.shape[1] != 2:
            raise ValueError("bbox must be a (d, 2) array of lo/hi pairs")
        return SupportRegion(
            kind="implicit", dim=bbox.shape[0], predicate=predicate, bbox=bbox
        )

    # --- queries ------------------------------------------------------
    @property
    def exact_geometry(self):
        return self.kind in ("interval", "polygon")

    def volume(self):
        """Lebesgue volume; None when only a predicate is known."""
        if self.kind == "interval":
            return float(self.bounds[0, 1] - self.bounds[0, 0])
        if self.kind == "polygon":
            return 0.5 * _shoelace2(self.vertices)
        if self.kind == "box":
            return float(np.prod(self.bounds[:, 1] - self.bounds[:, 0]))
        if self.kind == "ball":
            d = self.dim
            return float(np.pi ** (d / 2) / _gamma_fn(d / 2 + 1) * self.radius**d)
        return None

    def contains(self, y):
        """Vectorized membership test; accepts (d,) or (M, d)."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if y.shape[1] != self.dim:
            raise DimensionMismatch(
                f"points have dimension {y.shape[1]}, support has {self.dim}"
            )
        if self.kind in ("interval", "box"):
            lo, hi = self.bbox[:, 0], self.bbox[:, 1]
            return np.all((y >= lo) & (y <= hi), axis=1)
        if self.kind == "polygon":
            verts = self.vertices
            nxt = np.roll(verts, -1, axis=0)
            edge = nxt - verts
            rel = y[:, None, :] - verts[None, :, :]
            cross = edge[None, :, 0] * rel[:, :, 1] - edge[None, :, 1] * rel[:, :, 0]
            return np.all(cross >= -PLANE_TOL, axis=1)
        if self.kind == "ball":
            return np.linalg.norm(y - self.center, axis=1) <= self.radius
        return np.asarray(self.predicate(y), dtype=bool)

    def diameter(self):
        return float(np.linalg.norm(self.bbox[:, 1] - self.bbox[:, 0]))

    def matches(self, other):
        """Value equality of two regions (used to pair diagrams and measures)."""
        if self is other:
            return True
        if self.kind != other.kind or self.dim != other.dim:
            return False
        if self.kind in ("interval", "box"):
            return np.allclose(self.bounds, other.bounds)
        if self.kind == "polygon":
            return self.vertices.shape == other.vertices.shape and np.allclose(
                self.vertices, other.vertices
            )
        if self.kind == "ball":
            return np.allclose(self.center, other.center) and np.isclose(
                self.radius, other.radius
            )
        return self.predicate is other.predicate and np.allclose(self.bbox, other.bbox)


# --- low-level polygon machinery ---------------------------------------


def _shoelace2(verts):
    nxt = np.roll(verts, -1, axis=0)
    return float(np.sum(verts[:, 0] * nxt[:, 1] - nxt[:, 0] * verts[:, 1]))


def _dedupe_ring(verts, tol=ALG_TOL):
    """Drop consecutive duplicates (cyclically) from a vertex ring."""
    if len(verts) == 0:
        return verts
    keep = [0]
    for k in range(1, len(verts)):
        if np.max(np.abs(verts[k] - verts[keep[-1]])) > tol:
            keep.append(k)
    if len(keep) > 1 and np.max(np.abs(verts[keep[-1]] - verts[keep[0]])) <= tol:
        keep.pop()
    return verts[keep]


def clip_halfplane(poly, normal, offset, tol=ALG_TOL):
    """Clip a convex CCW polygon to the half-plane ``<normal, y> >= offset``.

    Sutherland-Hodgman against a single plane; returns a CCW,
    duplicate-free vertex array (possibly empty).
    """
    poly = np.asarray(poly, dtype=float)
    if len(poly) == 0:
        return poly.reshape(0, 2)
    margins = poly @ normal - offset
    out = []
    m = len(poly)
    for k in range(m):
        cur, nxt = poly[k], poly[(k + 1) % m]
        mc, mn = margins[k], margins[(k + 1) % m]
        if mc >= -tol:
            out.append(cur)
        if (mc > tol and mn < -tol) or (mc < -tol and mn > tol):
            t = mc / (mc - mn)
            out.append(cur + t * (nxt - cur))
    if not out:
        return np.zeros((0, 2))
    return _dedupe_ring(np.asarray(out))


def polygon_area(poly):
    poly = np.asarray(poly, dtype=float)
    if len(poly) < 3:
        return 0.0
    return 0.5 * _shoelace2(poly)


def polygon_plane_section(poly, normal, offset, tol=PLANE_TOL):
    """Chord of a convex polygon cut by ``<normal, y> = offset``.

    Returns an (k, 2) array with k in {0, 1, 2}: empty, a touching point,
    or the two endpoints of the section segment.
    """
    poly = np.asarray(poly, dtype=float)
    if len(poly) == 0:
        return np.zeros((0, 2))
    nrm = np.linalg.norm(normal)
    margins = (poly @ normal - offset) / nrm
    pts = [poly[k] for k in range(len(poly)) if abs(margins[k]) <= tol]
    m = len(poly)
    for k in range(m):
        mc, mn = margins[k], margins[(k + 1) % m]
        if (mc > tol and mn < -tol) or (mc < -tol and mn > tol):
            t = mc / (mc - mn)
            pts.append(poly[k] + t * (poly[(k + 1) % m] - poly[k]))
    if not pts:
        return np.zeros((0, 2))
    pts = np.asarray(pts)
    tangent = np.array([-normal[1], normal[0]]) / nrm
    proj = pts @ tangent
    lo, hi = np.argmin(proj), np.argmax(proj)
    if proj[hi] - proj[lo] <= tol:
        return pts[lo][None, :]
    return np.stack([pts[lo], pts[hi]])


# --- Laguerre machinery -------------------------------------------------


def pairwise_offsets(sites, z):
    """Offset matrix ``b_ij(z) = (|x_i|^2 - |x_j|^2)/2 - z_i + z_j``.

    Antisymmetric (``b_ij = -b_ji``) and a cocycle
    (``b_ij + b_jk = b_ik``) up to rounding; both hold to 1e-12.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (sites.n,):
        raise DimensionMismatch(f"weights have shape {z.shape}, expected ({sites.n},)")
    half_sq = 0.5 * np.sum(sites.points**2, axis=1)
    a = half_sq - z
    return a[:, None] - a[None, :]


def interval_cells(sites, z, support):
    """(lo, hi) arrays of the cell intervals in d = 1 (empty: lo > hi)."""
    x = sites.points[:, 0]
    b = pairwise_offsets(sites, z)
    dx = x[:, None] - x[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = b / dx
    lower = np.where(dx > 0, bound, -np.inf)
    upper = np.where(dx < 0, bound, np.inf)
    np.fill_diagonal(lower, -np.inf)
    np.fill_diagonal(upper, np.inf)
    a, c = support.bounds[0]
    lo = np.maximum(a, lower.max(axis=1))
    hi = np.minimum(c, upper.min(axis=1))
    return lo, hi


def polygon_cells(sites, z, support):
    """List of clipped cell polygons in d = 2 (empty cells give 0-row arrays)."""
    b = pairwise_offsets(sites, z)
    pts = sites.points
    cells = []
    for i in range(sites.n):
        poly = support.vertices
        for j in range(sites.n):
            if j == i or len(poly) == 0:
                continue
            poly = clip_halfplane(poly, pts[i] - pts[j], b[i, j])
        cells.append(poly)
    return cells


@dataclass(frozen=True)
class FacetGeometry:
    """Shared boundary piece of two cells.

    The facet lies on the carrier plane ``<x_i - x_j, y> = offset`` with
    unit normal ``v = (x_i - x_j)/|x_i - x_j|`` pointing into cell i.  Its
    geometry is a point (d = 1), a segment's two endpoints (d = 2), or
    None plus the implicit constraints of cell i (d >= 3).
    """

    pair: tuple
    normal: np.ndarray          # x_i - x_j (unnormalized)
    offset: float               # b_ij
    unit_normal: np.ndarray
    geometry: np.ndarray        # (1, d) point or (2, d) segment; None if implicit
    constraints: tuple = None   # d >= 3: (normals (K, d), offsets (K,)) of cell i

    @property
    def dim(self):
        return len(self.normal)

    @property
    def extent(self):
        """Hausdorff (d-1)-measure of the geometry: 1 for a point in d = 1,
        segment length in d = 2, None when implicit."""
        if self.geometry is None:
            return None
        if self.dim == 1:
            return 1.0
        if len(self.geometry) < 2:
            return 0.0
        return float(np.linalg.norm(self.geometry[1] - self.geometry[0]))

    def midpoint(self):
        if self.geometry is None:
            raise UnsupportedExactDimension("facet has no explicit geometry")
        return self.geometry.mean(axis=0)


@dataclass(frozen=True)
class LaguerreDiagram:
    """Exact cell decomposition of the support for a given weight vector.

    ``cells[i]`` is an interval (2,) array in d = 1 or a CCW polygon
    (M, 2) array in d = 2; in d >= 3 replaced by half-space lists in
    ``halfspaces``.  ``facets`` maps ordered pairs (i, j), i < j, to the
    facet geometry; pairs with no shared face of positive extent are
    absent (d <= 2).
    """

    sites: SiteSet
    z: np.ndarray
    support: SupportRegion
    offsets: np.ndarray
    cells: list
    facets: dict
    empty: np.ndarray            # bool flags per cell
    halfspaces: list = None      # d >= 3: per-cell (normals, offsets)

    @property
    def dim(self):
        return self.sites.dim

    def cell_measure(self, i):
        """Length / area of cell i (exact dimensions only)."""
        if self.dim == 1:
            lo, hi = self.cells[i]
            return max(0.0, hi - lo)
        if self.dim == 2:
            return polygon_area(self.cells[i])
        raise UnsupportedExactDimension("exact cell measure requires d <= 2")


def build_diagram(sites, z, support):
    """Construct the Laguerre diagram of ``sites`` with weights ``z``.

    Exact geometry in d <= 2 for interval/polygon supports; other
    supports or d >= 3 yield implicit half-space cells with facet
    carriers recorded for Monte Carlo estimation.
    """
    z = np.asarray(z, dtype=float)
    if sites.dim != support.dim:
        raise DimensionMismatch(
            f"sites have dimension {sites.dim}, support has {support.dim}"
        )
    if z.shape != (sites.n,):
        raise DimensionMismatch(f"weights have shape {z.shape}, expected ({sites.n},)")
    b = pairwise_offsets(sites, z)
    pts = sites.points

    if support.exact_geometry and sites.dim == 1:
        lo, hi = interval_cells(sites, z, support)
        cells = [np.array([lo[i], hi[i]]) for i in range(sites.n)]
        empty = hi - lo <= 0.0
        facets = {}
        for i in range(sites.n):
            if empty[i]:
                continue
            for j in range(i + 1, sites.n):
                if empty[j]:
                    continue
                overlap = min(hi[i], hi[j]) - max(lo[i], lo[j])
                if abs(overlap) > PLANE_TOL:
                    continue
                point = np.array([[0.5 * (max(lo[i], lo[j]) + min(hi[i], hi[j]))]])
                normal = pts[i] - pts[j]
                facets[(i, j)] = FacetGeometry(
                    pair=(i, j),
                    normal=normal,
                    offset=b[i, j],
                    unit_normal=normal / np.linalg.norm(normal),
                    geometry=point,
                )
        return LaguerreDiagram(sites, z, support, b, cells, facets, empty)

    if support.exact_geometry and sites.dim == 2:
        cells = polygon_cells(sites, z, support)
        empty = np.array([polygon_area(c) <= ALG_TOL for c in cells])
        facets = {}
        for i in range(sites.n):
            if empty[i]:
                continue
            for j in range(i + 1, sites.n):
                if empty[j]:
                    continue
                normal = pts[i] - pts[j]
                chord = polygon_plane_section(cells[i], normal, b[i, j])
                if len(chord) < 2:
                    continue
                if np.linalg.norm(chord[1] - chord[0]) <= PLANE_TOL:
                    continue
                facets[(i, j)] = FacetGeometry(
                    pair=(i, j),
                    normal=normal,
                    offset=b[i, j],
                    unit_normal=normal / np.linalg.norm(normal),
                    geometry=chord,
                )
        return LaguerreDiagram(sites, z, support, b, cells, facets, empty)

    # implicit representation: cells as half-space lists, facets as carriers
    halfspaces = []
    for i in range(sites.n):
        others = [j for j in range(sites.n) if j != i]
        normals = pts[i] - pts[others]
        offs = b[i, others]
        halfspaces.append((normals, offs))
    facets = {}
    for i in range(sites.n):
        for j in range(i + 1, sites.n):
            normal = pts[i] - pts[j]
            others = [k for k in range(sites.n) if k != i and k != j]
            cons = (pts[i] - pts[others], b[i, others]) if others else (
                np.zeros((0, sites.dim)),
                np.zeros(0),
            )
            facets[(i, j)] = FacetGeometry(
                pair=(i, j),
                normal=normal,
                offset=b[i, j],
                unit_normal=normal / np.linalg.norm(normal),
                geometry=None,
                constraints=cons,
            )
    cells = [None] * sites.n
    empty = np.zeros(sites.n, dtype=bool)
    return LaguerreDiagram(
        sites, z, support, b, cells, facets, empty, halfspaces=halfspaces
    )


def locate(sites, z, y):
    """Index of the cell containing ``y``: argmin of 0.5*|y - x_i|^2 - z_i.

    Ties (points on facets, a null set) go to the smallest index.
    Accepts a single point (d,) or a batch (M, d); returns an int or an
    int array accordingly.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (sites.n,):
        raise DimensionMismatch(f"weights have shape {z.shape}, expected ({sites.n},)")
    y = np.asarray(y, dtype=float)
    if sites.dim == 1:
        if y.ndim == 0:
            single, pts2 = True, y.reshape(1, 1)
        elif y.ndim == 1:
            single, pts2 = False, y[:, None]
        elif y.ndim == 2 and y.shape[1] == 1:
            single, pts2 = False, y
        else:
            raise DimensionMismatch(f"cannot interpret shape {y.shape} as 1-D points")
    else:
        if y.ndim == 1 and y.shape[0] == sites.dim:
            single, pts2 = True, y[None, :]
        elif y.ndim == 2 and y.shape[1] == sites.dim:
            single, pts2 = False, y
        else:
            raise DimensionMismatch(
                f"cannot interpret shape {y.shape} as points of dimension {sites.dim}"
            )
    cost = 0.5 * np.sum(
        (pts2[:, None, :] - sites.points[None, :, :]) ** 2, axis=-1
    ) - z[None, :]
    idx = np.argmin(cost, axis=1)
    return int(idx[0]) if single else idx


def cell_clip(diagram, i):
    """Exact geometry of cell i: interval (2,) in d = 1, CCW polygon in d = 2."""
    if diagram.dim > 2 or not diagram.support.exact_geometry:
        raise UnsupportedExactDimension(
            "exact cell geometry is available only for interval and polygon supports"
        )
    return diagram.cells[i]
