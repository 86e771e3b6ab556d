import numpy as np
import pytest

from sdotinf import (
    DimensionMismatch,
    SiteSet,
    SupportRegion,
    UnsupportedExactDimension,
    build_diagram,
    cell_clip,
    locate,
    pairwise_offsets,
)
from sdotinf.geometry import polygon_area


def boundary_1d(x1, x2, z1, z2):
    """Analytic 1-D cell boundary: solves 0.5(y-x1)^2 - z1 = 0.5(y-x2)^2 - z2."""
    return 0.5 * (x1 + x2) + (z1 - z2) / (x2 - x1)


class TestBuildDiagram1D:
    def test_canonical_cells_and_facet(self, canonical_1d):
        sites, R, p, z_star = canonical_1d
        z = np.array([-0.1, 0.1])
        diagram = build_diagram(sites, z, R.support)
        c = boundary_1d(0.0, 1.0, -0.1, 0.1)
        assert c == pytest.approx(0.3, abs=1e-14)
        np.testing.assert_allclose(diagram.cells[0], [0.0, c], atol=1e-12)
        np.testing.assert_allclose(diagram.cells[1], [c, 1.0], atol=1e-12)
        assert set(diagram.facets) == {(0, 1)}
        assert diagram.facets[(0, 1)].geometry[0, 0] == pytest.approx(c, abs=1e-12)

    def test_single_site_cell_is_support(self):
        sites = SiteSet(np.array([[0.4]]))
        support = SupportRegion.interval(0.0, 1.0)
        diagram = build_diagram(sites, np.zeros(1), support)
        np.testing.assert_allclose(diagram.cells[0], [0.0, 1.0])
        assert diagram.facets == {}
        assert not diagram.empty[0]

    def test_empty_cell_flagged(self):
        sites = SiteSet(np.array([[0.0], [1.0]]))
        support = SupportRegion.interval(0.0, 1.0)
        # boundary pushed below the support: first cell disappears
        diagram = build_diagram(sites, np.array([-1.0, 1.0]), support)
        assert diagram.empty[0]
        assert not diagram.empty[1]
        assert diagram.facets == {}


class TestBuildDiagram2D:
    def test_symmetric_bisector(self, symmetric_2site_2d):
        sites, R, p = symmetric_2site_2d
        diagram = build_diagram(sites, np.zeros(2), R.support)
        cell0 = cell_clip(diagram, 0)
        assert polygon_area(cell0) == pytest.approx(0.5, abs=1e-12)
        assert cell0[:, 0].max() == pytest.approx(0.5, abs=1e-12)
        facet = diagram.facets[(0, 1)]
        seg = facet.geometry[np.argsort(facet.geometry[:, 1])]
        np.testing.assert_allclose(seg, [[0.5, 0.0], [0.5, 1.0]], atol=1e-12)

    def test_facet_endpoints_on_carrier_plane(self, three_site_2d):
        sites, R, p, z_star = three_site_2d
        diagram = build_diagram(sites, z_star, R.support)
        assert len(diagram.facets) == 3
        for (i, j), facet in diagram.facets.items():
            margins = facet.geometry @ facet.normal - facet.offset
            scale = np.linalg.norm(facet.normal)
            assert np.max(np.abs(margins)) / scale < 1e-10

    def test_empty_cell_flagged(self):
        sites = SiteSet(np.array([[0.5, 0.5], [0.6, 0.5]]))
        support = SupportRegion.box([0.0, 0.0], [1.0, 1.0])
        diagram = build_diagram(sites, np.array([-5.0, 5.0]), support)
        assert diagram.empty[0]
        assert len(cell_clip(diagram, 0)) == 0


class TestLocate:
    def test_canonical_interior_point(self, canonical_1d):
        sites, R, p, z_star = canonical_1d
        assert locate(sites, np.array([-0.1, 0.1]), 0.2) == 0
        assert locate(sites, np.array([-0.1, 0.1]), 0.9) == 1

    def test_tie_goes_to_smallest_index(self):
        # boundary at exactly 0.25 in binary floating point
        sites = SiteSet(np.array([[0.0], [1.0]]))
        z = np.array([-0.125, 0.125])
        assert boundary_1d(0.0, 1.0, *z) == 0.25
        assert locate(sites, z, 0.25) == 0

    def test_single_site(self):
        sites = SiteSet(np.array([[2.0, 3.0]]))
        assert locate(sites, np.zeros(1), np.array([-5.0, 7.0])) == 0

    def test_batch_shapes(self, canonical_1d):
        sites, R, p, z_star = canonical_1d
        idx = locate(sites, z_star, np.linspace(0, 1, 11))
        assert idx.shape == (11,)
        with pytest.raises(DimensionMismatch):
            locate(sites, z_star, np.zeros((3, 2)))


class TestCellClip:
    def test_canonical_second_cell(self, canonical_1d):
        sites, R, p, z_star = canonical_1d
        diagram = build_diagram(sites, np.array([-0.1, 0.1]), R.support)
        np.testing.assert_allclose(cell_clip(diagram, 1), [0.3, 1.0], atol=1e-12)

    def test_symmetric_rectangle(self, symmetric_2site_2d):
        sites, R, p = symmetric_2site_2d
        diagram = build_diagram(sites, np.zeros(2), R.support)
        cell = cell_clip(diagram, 0)
        assert sorted(map(tuple, np.round(cell, 12))) == [
            (0.0, 0.0), (0.0, 1.0), (0.5, 0.0), (0.5, 1.0),
        ]

    def test_exact_geometry_rejected_above_2d(self):
        sites = SiteSet(np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]))
        support = SupportRegion.box([0.0] * 3, [1.0] * 3)
        diagram = build_diagram(sites, np.zeros(2), support)
        assert diagram.halfspaces is not None
        with pytest.raises(UnsupportedExactDimension):
            cell_clip(diagram, 0)


class TestAlgebraicInvariants:
    def test_offsets_antisymmetry_and_cocycle(self):
        rng = np.random.default_rng(5)
        sites = SiteSet(rng.uniform(-1, 1, size=(6, 2)))
        z = rng.normal(size=6)
        b = pairwise_offsets(sites, z)
        assert np.max(np.abs(b + b.T)) <= 1e-12
        worst = 0.0
        for i in range(6):
            for j in range(6):
                for k in range(6):
                    worst = max(worst, abs(b[i, j] + b[j, k] - b[i, k]))
        assert worst <= 1e-12

    def test_translation_invariance(self):
        # exactly representable coordinates make the shift cancellation exact
        sites = SiteSet(np.array([[0.0, 0.0], [1.25, 0.5], [2.0, 3.5],
                                  [-0.75, 1.0], [3.0, -1.5]]))
        z = np.array([0.5, -0.25, 0.125, -0.375, 0.0])
        support = SupportRegion.box([-2.0, -2.0], [6.0, 6.0])
        b0 = pairwise_offsets(sites, z)
        b1 = pairwise_offsets(sites, z + 0.25)
        np.testing.assert_array_equal(b0, b1)
        d0 = build_diagram(sites, z, support)
        d1 = build_diagram(sites, z + 0.25, support)
        for c0, c1 in zip(d0.cells, d1.cells):
            np.testing.assert_array_equal(c0, c1)
        pts = np.random.default_rng(3).uniform(-2, 6, size=(500, 2))
        np.testing.assert_array_equal(locate(sites, z, pts),
                                      locate(sites, z + 0.25, pts))

    def test_partition_of_support(self):
        rng = np.random.default_rng(17)
        support1 = SupportRegion.interval(-0.5, 2.0)
        support2 = SupportRegion.polygon(
            np.array([[0.0, 0.0], [2.0, 0.0], [2.5, 1.5], [1.0, 2.5], [-0.5, 1.0]])
        )
        for support, dim in [(support1, 1), (support2, 2)]:
            sites = SiteSet(rng.uniform(0.0, 2.0, size=(5, dim)))
            vol = support.volume()
            for _ in range(5):
                z = 0.3 * rng.normal(size=5)
                diagram = build_diagram(sites, z, support)
                total = sum(diagram.cell_measure(i) for i in range(5))
                assert abs(total - vol) <= 1e-9 * vol

    def test_locate_matches_clipped_cells(self, three_site_2d):
        sites, R, p, z_star = three_site_2d
        diagram = build_diagram(sites, z_star, R.support)
        b = pairwise_offsets(sites, z_star)
        rng = np.random.default_rng(23)
        pts = rng.uniform(0, 1, size=(10_000, 2))
        # exempt points within 1e-10 of any facet carrier
        clear = np.ones(len(pts), dtype=bool)
        for (i, j), facet in diagram.facets.items():
            margin = np.abs(pts @ facet.normal - facet.offset)
            clear &= margin / np.linalg.norm(facet.normal) > 1e-10
        idx = locate(sites, z_star, pts)
        for i in range(sites.n):
            sel = pts[clear & (idx == i)]
            for j in range(sites.n):
                if j == i:
                    continue
                margins = sel @ (sites.points[i] - sites.points[j]) - b[i, j]
                assert np.all(margins > 0)


class TestValidation:
    def test_duplicate_sites_rejected(self):
        with pytest.raises(ValueError):
            SiteSet(np.array([[0.0], [0.0]]))

    def test_clockwise_polygon_rejected(self):
        with pytest.raises(ValueError):
            SupportRegion.polygon([[0, 0], [0, 1], [1, 1], [1, 0]])

    def test_nonconvex_polygon_rejected(self):
        with pytest.raises(ValueError):
            SupportRegion.polygon([[0, 0], [2, 0], [1, 0.2], [0, 2]])

    def test_dimension_mismatch(self):
        sites = SiteSet(np.array([[0.0], [1.0]]))
        support = SupportRegion.box([0.0, 0.0], [1.0, 1.0])
        with pytest.raises(DimensionMismatch):
            build_diagram(sites, np.zeros(2), support)
        with pytest.raises(DimensionMismatch):
            build_diagram(sites, np.zeros(3), SupportRegion.interval(0, 1))
