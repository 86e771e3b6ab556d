"""Dual problem of semidiscrete transport: objective, damped Newton solver,
and sensitivity of the optimal potentials to the target weights.

The dual objective for target weights ``q`` (a probability vector over the
sites) is

    Phi(z, q) = <z, q> + integral of min_i( 0.5*|y - x_i|^2 - z_i ) dR(y),

a concave function of ``z`` that is invariant under ``z -> z + c*1``.  We
therefore normalize ``<z, 1> = 0`` and work in reduced coordinates
``w = z[:-1]`` with ``z[-1] = -sum(w)``.  The gradient of Phi in ``z`` is
``q - masses(z)``, so the optimum equates every cell mass with its target
weight.  The reduced Hessian is assembled from facet surface masses:

    d masses_i / d z_j = -R+(D_ij)/|x_i - x_j|   (j != i),

with diagonal entries making rows sum to zero; it is symmetric negative
definite on the positive-mass region, which makes an undamped Newton step
well defined.  Damping follows the classical scheme for semidiscrete
transport: backtracking halves the step until every cell keeps at least
half of the smallest target weight and the gradient norm strictly
decreases.

Differentiating the reduced optimality condition in ``q`` gives the
sensitivity of the solved potentials, the matrix the delta-method
covariance of the empirical potentials is built from.

Only exact mass backends (interval / polygon supports, d <= 2) are
supported by the solver; Monte Carlo mass estimates would require a
stochastic approximation scheme, which this package deliberately omits.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import _quadrature as quad
from .errors import (
    DegenerateConfiguration,
    DimensionMismatch,
    EmptyCell,
    MaxIterationsExceeded,
    NotInterior,
    SingularHessian,
    UnsupportedExactDimension,
)
from .geometry import build_diagram, polygon_area
from .measure import cell_masses, facet_records

WEIGHT_TOL = 1e-12
DEFAULT_TOL = 1e-10
MAX_NEWTON_ITER = 100
MAX_HALVINGS = 50


def validate_weights(p, n_sites=None):
    """Check a probability vector: nonnegative, summing to 1 within 1e-12."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise DimensionMismatch("weights must be a vector")
    if n_sites is not None and p.shape != (n_sites,):
        raise DimensionMismatch(f"expected {n_sites} weights, got {p.shape[0]}")
    if np.any(p < 0):
        raise ValueError("weights must be nonnegative")
    if abs(p.sum() - 1.0) > WEIGHT_TOL * max(1.0, len(p)):
        raise ValueError(f"weights sum to {p.sum()!r}, not 1")
    return p


def is_interior(p):
    """True when every component is strictly positive."""
    return bool(np.all(np.asarray(p) > 0))


def normalize_potential(z):
    """Project onto <z, 1> = 0 by removing the mean."""
    z = np.asarray(z, dtype=float)
    return z - z.mean()


@dataclass
class DualSolveReport:
    """Outcome of a dual solve.

    ``min_masses`` and ``grad_norms`` record the accepted iterates
    (including the starting point), so monotone damping can be audited.
    """

    z: np.ndarray
    converged: bool
    iterations: int
    grad_norm: float
    grad_norms: list = field(default_factory=list)
    min_masses: list = field(default_factory=list)
    warm_start_steps: int = 0


def _reduced_from_full(g):
    return g[:-1] - g[-1]


def _full_from_reduced(w):
    return np.concatenate([w, [-np.sum(w)]])


def dual_objective(z, q, R, sites, mc_samples=200_000, seed=0):
    """Dual objective Phi(z, q).

    Exact backends integrate the envelope cell by cell; otherwise the
    integral term is estimated by Monte Carlo (seeded).
    """
    z = np.asarray(z, dtype=float)
    q = validate_weights(q, sites.n)
    if z.shape != (sites.n,):
        raise DimensionMismatch(f"potential has shape {z.shape}, expected ({sites.n},)")
    linear = float(z @ q)
    pts = sites.points
    if R.exact_backend:
        diagram = build_diagram(sites, z, R.support)
        total = 0.0
        for i in range(sites.n):
            if diagram.empty[i]:
                continue

            def integrand(y, x=pts[i], zi=z[i]):
                return (0.5 * np.sum((y - x) ** 2, axis=1) - zi) * R.density(y)

            if sites.dim == 1:
                lo, hi = diagram.cells[i]
                total += float(quad.integrate_interval(integrand, lo, hi))
            else:
                cell = diagram.cells[i]
                if polygon_area(cell) > 0:
                    total += float(quad.integrate_polygon(integrand, cell))
        return linear + total
    pts_y = R.sample(mc_samples, np.random.default_rng(seed))
    costs = 0.5 * np.sum((pts_y[:, None, :] - pts[None, :, :]) ** 2, axis=-1) - z
    return linear + float(np.mean(costs.min(axis=1)))


def dual_gradient(z, q, R, sites):
    """Gradient of Phi in z: componentwise ``q_i - R(C_i(z))``.

    Components sum to zero since both the weights and the masses sum to 1.
    """
    q = validate_weights(q, sites.n)
    return q - cell_masses(R, sites, np.asarray(z, dtype=float))


def mass_jacobian(z, R, sites):
    """Jacobian G of the cell-mass map, ``G_ij = d m_i / d z_j``.

    Off-diagonal entries are ``-R+(D_ij)/|x_i - x_j|``; rows sum to zero.
    Requires every cell mass positive (raises :class:`EmptyCell`).
    """
    z = np.asarray(z, dtype=float)
    masses = cell_masses(R, sites, z)
    if np.min(masses) <= 0.0:
        raise EmptyCell(
            f"cell {int(np.argmin(masses))} has zero mass; the mass map is not "
            "differentiable there"
        )
    diagram = build_diagram(sites, z, R.support)
    records = facet_records(R, diagram)
    dist = sites.pairwise_distances()
    G = np.zeros((sites.n, sites.n))
    for (i, j), rec in records.items():
        G[i, j] = G[j, i] = -rec.surface_mass / dist[i, j]
    np.fill_diagonal(G, 0.0)
    np.fill_diagonal(G, -G.sum(axis=1))
    return G


def dual_hessian_reduced(z, R, sites):
    """Hessian of the reduced objective Phi(w, -sum(w); q) in ``w = z[:-1]``.

    Symmetric negative definite on the positive-mass region; validated in
    the test suite against central finite differences of the reduced
    gradient.
    """
    if sites.n == 1:
        return np.zeros((0, 0))
    G = mass_jacobian(z, R, sites)
    core = G[:-1, :-1] - G[:-1, -1:] - G[-1:, :-1] + G[-1, -1]
    return -0.5 * (core + core.T)  # symmetrize rounding noise


def solve_dual(q, R, sites, tol=DEFAULT_TOL, max_iter=MAX_NEWTON_ITER,
               max_halvings=MAX_HALVINGS, init=None):
    """Solve the dual problem for interior target weights ``q``.

    Damped Newton in reduced coordinates starting from ``init`` (default 0,
    the unweighted Voronoi diagram).  Steps are halved until every cell
    mass stays at or above half the smallest target weight and the
    sup-norm of the gradient strictly decreases.  If the starting point
    violates the mass floor, a short gradient-ascent warm start lifts the
    smallest mass first.

    Returns a :class:`DualSolveReport` whose potential satisfies
    ``<z, 1> = 0`` and ``|q - masses|_inf <= tol``.
    """
    q = validate_weights(q, sites.n)
    if not is_interior(q):
        raise NotInterior(
            "dual solve needs strictly positive weights; zero-weight targets "
            "must be handled by the caller's fallback potential"
        )
    if not R.exact_backend:
        raise UnsupportedExactDimension(
            "the Newton solver needs exact cell masses (interval / polygon "
            "supports in d <= 2); Monte Carlo backends are not supported"
        )
    if sites.n == 1:
        return DualSolveReport(
            z=np.zeros(1), converged=True, iterations=0, grad_norm=0.0,
            grad_norms=[0.0], min_masses=[1.0],
        )

    z = normalize_potential(init) if init is not None else np.zeros(sites.n)
    floor = 0.5 * float(np.min(q))

    masses = cell_masses(R, sites, z)
    warm_steps = 0
    if np.min(masses) < floor:
        z, masses, warm_steps = _warm_start(q, R, sites, z, floor)

    g = q - masses
    gnorm = float(np.max(np.abs(g)))
    report = DualSolveReport(
        z=z, converged=False, iterations=0, grad_norm=gnorm,
        grad_norms=[gnorm], min_masses=[float(np.min(masses))],
        warm_start_steps=warm_steps,
    )

    w = z[:-1].copy()
    for it in range(1, max_iter + 1):
        if gnorm <= tol:
            report.converged = True
            return report
        try:
            H = dual_hessian_reduced(z, R, sites)
            factor = cho_factor(-H, lower=True)
        except LinAlgError:
            raise DegenerateConfiguration(
                "reduced Hessian is numerically singular despite positive masses"
            )
        dw = cho_solve(factor, _reduced_from_full(g))

        step = 1.0
        accepted = False
        for _ in range(max_halvings + 1):
            w_try = w + step * dw
            z_try = _full_from_reduced(w_try)
            m_try = cell_masses(R, sites, z_try)
            g_try = q - m_try
            gn_try = float(np.max(np.abs(g_try)))
            if np.min(m_try) >= floor and gn_try < gnorm:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            raise MaxIterationsExceeded(
                f"line search exhausted {max_halvings} halvings at iteration {it} "
                f"(gradient norm {gnorm:.3e})"
            )
        w, z, g, gnorm = w_try, z_try, g_try, gn_try
        report.z = z
        report.iterations = it
        report.grad_norm = gnorm
        report.grad_norms.append(gnorm)
        report.min_masses.append(float(np.min(m_try)))

    if gnorm <= tol:
        report.converged = True
        return report
    raise MaxIterationsExceeded(
        f"no convergence after {max_iter} Newton iterations "
        f"(gradient norm {gnorm:.3e}, tolerance {tol:.1e})"
    )


def _warm_start(q, R, sites, z, floor, max_steps=500, max_halvings=60):
    """Gradient ascent until every cell mass reaches the Newton floor.

    Backtracking Armijo ascent on the dual objective: the gradient
    ``q - masses`` sums to zero (preserving the normalization) and its
    squared norm is the directional derivative of the objective, so small
    enough steps always make progress.  The masses converge to ``q``,
    which sits strictly above the floor.
    """
    masses = cell_masses(R, sites, z)
    value = dual_objective(z, q, R, sites)
    t = 1.0
    for step_count in range(1, max_steps + 1):
        if np.min(masses) >= floor:
            return z, masses, step_count - 1
        g = q - masses
        gsq = float(g @ g)
        accepted = False
        for _ in range(max_halvings):
            z_try = z + t * g
            v_try = dual_objective(z_try, q, R, sites)
            if v_try >= value + 1e-4 * t * gsq:
                z, value = z_try, v_try
                masses = cell_masses(R, sites, z)
                accepted = True
                t = min(4.0 * t, 1e3)
                break
            t *= 0.5
        if not accepted:
            raise DegenerateConfiguration(
                "warm start stalled: cannot lift the smallest cell mass "
                f"above {floor:.3e}"
            )
    raise DegenerateConfiguration(
        f"warm start did not reach the mass floor within {max_steps} steps"
    )


def dual_sensitivity(z, q, R, sites):
    """Jacobian B of the solved potential in the reduced weights.

    ``B[k, i] = d z*_i / d q_k`` for the first N-1 weight coordinates
    (the last weight is 1 minus their sum).  Assembled by implicit
    differentiation of the reduced optimality condition: the mixed
    partial of the reduced objective in (w, q) has entries
    ``delta_ik + 1``, so ``dw/dq = (-H)^{-1} (I + 11^T)``, extended to the
    last potential coordinate through the normalization.

    ``z`` must solve the dual at ``q``.  Raises
    :class:`SingularHessian` when the reduced Hessian cannot be factored.
    """
    q = validate_weights(q, sites.n)
    n = sites.n
    if n == 1:
        return np.zeros((0, 1))
    H = dual_hessian_reduced(np.asarray(z, dtype=float), R, sites)
    M = np.eye(n - 1) + 1.0
    try:
        bred = cho_solve(cho_factor(-H, lower=True), M)
    except LinAlgError:
        raise SingularHessian("reduced Hessian is singular; sensitivity undefined")
    J = np.vstack([np.eye(n - 1), -np.ones((1, n - 1))])
    return (J @ bred).T
