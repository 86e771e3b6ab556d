import numpy as np
import pytest

from sdotinf import ReferenceMeasure, SiteSet, SupportRegion, solve_dual


@pytest.fixture(scope="session")
def canonical_1d():
    """Two sites 0 and 1 on Unif[0, 1] with weights (0.3, 0.7).

    Everything is analytic here: the cell boundary for weights z is
    c = 1/2 + z1 - z2, so the solved potential at weights (0.3, 0.7) is
    (-0.1, 0.1) and the boundary sits at 0.3.
    """
    sites = SiteSet(np.array([[0.0], [1.0]]))
    support = SupportRegion.interval(0.0, 1.0)
    R = ReferenceMeasure.uniform(support)
    p = np.array([0.3, 0.7])
    z_star = solve_dual(p, R, sites).z
    return sites, R, p, z_star


@pytest.fixture(scope="session")
def symmetric_2site_2d():
    """Mirror-symmetric pair in the unit square; bisector x = 0.5."""
    sites = SiteSet(np.array([[0.25, 0.5], [0.75, 0.5]]))
    support = SupportRegion.box([0.0, 0.0], [1.0, 1.0])
    R = ReferenceMeasure.uniform(support)
    p = np.array([0.5, 0.5])
    return sites, R, p


@pytest.fixture(scope="session")
def three_site_2d():
    """Three corner sites in the unit square with equal weights."""
    sites = SiteSet(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    support = SupportRegion.box([0.0, 0.0], [1.0, 1.0])
    R = ReferenceMeasure.uniform(support)
    p = np.ones(3) / 3.0
    z_star = solve_dual(p, R, sites).z
    return sites, R, p, z_star
