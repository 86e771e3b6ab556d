"""Statistical inference for the empirical transport map.

Observations are category indices into the site set; only their counts
matter.  The plug-in potential solves the dual problem at the empirical
frequencies whenever they are strictly positive, and falls back to a
fixed vector otherwise (an event whose probability vanishes with the
sample size; its frequency is reported).

Scaled by sqrt(n), the plug-in potential is asymptotically Gaussian with
covariance ``Sigma = B^T A B``: ``A`` is the multinomial covariance of
the first N-1 empirical frequencies and ``B`` the sensitivity of the
solved potential in those frequencies.  ``Sigma`` is singular along the
all-ones direction.  Two derived limit laws drive the inference:

  * sqrt(n) * delta_s(plug-in, truth) converges to
    ``sum_{i<j} |x_i - x_j|^(s-1) R+(D_ij) |W_i - W_j|`` with
    ``W ~ N(0, Sigma)`` -- simulated here from a symmetric PSD square
    root of Sigma (eigenvalues clipped at 1e-12);
  * sqrt(n) * (gamma_phi(plug-in) - gamma_phi(truth)) is asymptotically
    ``N(0, sigma^2)`` with an explicit linear coefficient vector.

The nonparametric bootstrap (multinomial resampling of category counts)
consistently estimates both laws via the statistics
``sqrt(n) * delta_s(boot, plug-in)`` and
``sqrt(n) * (gamma_phi(boot) - gamma_phi(plug-in))``.  Bootstrap
quantiles use the higher-interpolation convention (conservative), giving
an L1 confidence set and, by Markov's inequality, a pointwise band with
average (not uniform) coverage over y ~ R.

All randomized operations take explicit seeds; replications derive
per-replication seeds by spawning a ``numpy.random.SeedSequence``, so
results are independent of execution order.
"""

from dataclasses import dataclass, field

import numpy as np

from .dual import dual_sensitivity, solve_dual, validate_weights
from .errors import DimensionMismatch, EmptyDraws, NotInterior, NotPSD
from .functionals import delta_s, gamma_phi_diff, transport_map
from .geometry import build_diagram, locate, pairwise_offsets

PSD_CLIP = 1e-12


@dataclass(frozen=True)
class SampleData:
    """Observed category indices (0-based) into the site set."""

    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=int)
        if idx.ndim != 1 or len(idx) < 1:
            raise ValueError("need a nonempty vector of observation indices")
        if np.any(idx < 0):
            raise ValueError("indices must be nonnegative")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def n(self):
        return len(self.indices)

    def counts(self, n_sites):
        if np.any(self.indices >= n_sites):
            raise DimensionMismatch("observation index out of range")
        return np.bincount(self.indices, minlength=n_sites)


def draw_sample(p, n, rng):
    """n i.i.d. category draws from weights ``p``."""
    p = validate_weights(p)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return SampleData(rng.choice(len(p), size=n, p=p))


def _counts_of(sample, n_sites):
    if isinstance(sample, SampleData):
        return sample.counts(n_sites)
    arr = np.asarray(sample)
    if arr.ndim == 1 and len(arr) == n_sites and arr.dtype.kind in "iu":
        return arr.astype(int)
    return SampleData(arr).counts(n_sites)


def empirical_frequencies(sample, n_sites):
    """Relative category frequencies of a sample (or of a count vector)."""
    counts = _counts_of(sample, n_sites)
    return counts / counts.sum()


def multinomial_covariance(p):
    """Covariance ``p_i (delta_ij - p_j)`` of the first N-1 frequencies."""
    p = validate_weights(p)
    pr = p[:-1]
    return np.diag(pr) - np.outer(pr, pr)


@dataclass(frozen=True)
class CovarianceModel:
    """CLT covariance of the plug-in potential: ``Sigma = B^T A B``."""

    A: np.ndarray
    B: np.ndarray
    Sigma: np.ndarray


def covariance_model(p, z, R, sites):
    """Assemble the CLT covariance at weights ``p`` and solved potential
    ``z``.

    ``Sigma`` annihilates the all-ones vector (the potential is
    normalized), which is verified to 1e-10.
    """
    p = validate_weights(p, sites.n)
    if not np.all(p > 0):
        raise NotInterior("covariance model needs strictly positive weights")
    A = multinomial_covariance(p)
    B = dual_sensitivity(z, p, R, sites)
    Sigma = B.T @ A @ B
    Sigma = 0.5 * (Sigma + Sigma.T)
    ones = np.ones(sites.n)
    if sites.n > 1 and np.max(np.abs(Sigma @ ones)) > 1e-10 * max(
        1.0, float(np.max(np.abs(Sigma)))
    ):
        raise ValueError("covariance does not annihilate the all-ones direction")
    return CovarianceModel(A=A, B=B, Sigma=Sigma)


def psd_sqrt(Sigma, clip=PSD_CLIP):
    """Symmetric PSD square root by eigendecomposition.

    Eigenvalues below ``clip`` are set to zero; materially negative
    eigenvalues raise :class:`NotPSD`.
    """
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.size == 0:
        return Sigma.copy()
    vals, vecs = np.linalg.eigh(0.5 * (Sigma + Sigma.T))
    scale = max(1.0, float(vals.max(initial=0.0)))
    if vals.min() < -1e-8 * scale:
        raise NotPSD(f"matrix has eigenvalue {vals.min():.3e}")
    vals = np.where(vals < clip, 0.0, vals)
    return (vecs * np.sqrt(vals)) @ vecs.T


@dataclass(frozen=True)
class LimitLawSample:
    """Draws from a limit law (or bootstrap draws targeting one).

    ``kind`` is "delta" or "gamma"; ``meta`` carries exclusion counts for
    bootstrap draws.  Identical seeds give identical draws.
    """

    draws: np.ndarray
    kind: str
    s: float = None
    seed: int = None
    n_draws: int = 0
    meta: dict = field(default_factory=dict)


def sample_limit_delta(model, facet_masses, sites, s, n_draws, seed):
    """Monte Carlo draws of the delta_s limit law.

    Draws ``W ~ N(0, Sigma)`` through the symmetric square root and
    evaluates ``sum_{i<j} |x_i - x_j|^(s-1) R+(D_ij) |W_i - W_j|``;
    nonnegative by construction.
    """
    S = psd_sqrt(model.Sigma)
    rng = np.random.default_rng(seed)
    seed_tag = seed if isinstance(seed, int) else None
    W = rng.standard_normal((n_draws, sites.n)) @ S
    dist = sites.pairwise_distances()
    pairs = sorted(facet_masses)
    if not pairs:
        return LimitLawSample(np.zeros(n_draws), "delta", s, seed_tag, n_draws)
    ii = np.array([i for i, _ in pairs])
    jj = np.array([j for _, j in pairs])
    coef = np.array([dist[i, j] ** (s - 1.0) * facet_masses[(i, j)] for i, j in pairs])
    draws = np.abs(W[:, ii] - W[:, jj]) @ coef
    return LimitLawSample(draws, "delta", s, seed_tag, n_draws)


def gamma_limit_coefficients(facet_integrals, sites):
    """Linear coefficients c with limit statistic ``<c, W>`` for gamma_phi."""
    dist = sites.pairwise_distances()
    c = np.zeros(sites.n)
    for (i, j), integral in facet_integrals.items():
        w = integral / dist[i, j]
        c[i] += w
        c[j] -= w
    return c


def limit_variance_gamma(model, facet_integrals, sites):
    """Variance of the Gaussian limit of the linear functional."""
    c = gamma_limit_coefficients(facet_integrals, sites)
    return max(0.0, float(c @ model.Sigma @ c))


def sample_limit_gamma(model, facet_integrals, sites, n_draws, seed):
    """Draws of the Gaussian limit ``<c, W>`` of the linear functional."""
    S = psd_sqrt(model.Sigma)
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((n_draws, sites.n)) @ S
    c = gamma_limit_coefficients(facet_integrals, sites)
    return LimitLawSample(W @ c, "gamma", None,
                          seed if isinstance(seed, int) else None, n_draws)


@dataclass(frozen=True)
class PluginResult:
    """Plug-in potential with its provenance.

    ``used_fallback`` marks samples whose empirical frequencies left the
    open simplex; then ``z`` is the caller-supplied fallback vector.
    """

    z: np.ndarray
    p_hat: np.ndarray
    interior: bool
    used_fallback: bool
    report: object = None


def plugin_estimate(sample, R, sites, z0=None, **solve_options):
    """Dual potential at the empirical frequencies, with fallback.

    Solves the dual when every category was observed; otherwise returns
    the fixed fallback ``z0`` (default 0) flagged as such.  Solver errors
    propagate.
    """
    p_hat = empirical_frequencies(sample, sites.n)
    if not np.all(p_hat > 0):
        z0 = np.zeros(sites.n) if z0 is None else np.asarray(z0, dtype=float)
        return PluginResult(z0, p_hat, interior=False, used_fallback=True)
    report = solve_dual(p_hat, R, sites, **solve_options)
    return PluginResult(report.z, p_hat, interior=True, used_fallback=False,
                        report=report)


def _seed_sequence(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _bootstrap_run(R, sites, p_hat, n, z_hat, kind, s, phi, seeds, solve_options):
    """One contiguous block of bootstrap replications (order-preserving)."""
    root_n = np.sqrt(n)
    draws = []
    n_fallback = 0
    n_failed = 0
    for seed_b in seeds:
        rng_b = np.random.default_rng(seed_b)
        counts_b = rng_b.multinomial(n, p_hat)
        if np.any(counts_b == 0):
            n_fallback += 1
            continue
        try:
            z_b = solve_dual(counts_b / n, R, sites, init=z_hat, **solve_options).z
            if kind == "delta":
                stat = delta_s(z_b, z_hat, s, R, sites)
            else:
                stat = gamma_phi_diff(z_hat, z_b, phi, R, sites)
        except Exception:
            n_failed += 1
            continue
        draws.append(root_n * stat)
    return draws, n_fallback, n_failed


def _bootstrap_common(sample, R, sites, n_reps, seed, z_hat, kind, s, phi,
                      solve_options, n_jobs=1):
    counts = _counts_of(sample, sites.n)
    n = int(counts.sum())
    p_hat = counts / n
    if z_hat is None:
        if not np.all(p_hat > 0):
            raise NotInterior(
                "bootstrap needs an interior empirical frequency vector"
            )
        z_hat = solve_dual(p_hat, R, sites, **solve_options).z
    seeds = _seed_sequence(seed).spawn(n_reps)
    if n_jobs <= 1 or n_reps < 2 * n_jobs:
        draws, n_fallback, n_failed = _bootstrap_run(
            R, sites, p_hat, n, z_hat, kind, s, phi, seeds, solve_options
        )
    else:
        from concurrent.futures import ProcessPoolExecutor

        chunks = np.array_split(np.arange(n_reps), n_jobs)
        args = [
            (R, sites, p_hat, n, z_hat, kind, s, phi,
             [seeds[k] for k in chunk], solve_options)
            for chunk in chunks
            if len(chunk)
        ]
        draws = []
        n_fallback = 0
        n_failed = 0
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            for part, nf, ne in pool.map(_bootstrap_run_star, args):
                draws.extend(part)
                n_fallback += nf
                n_failed += ne
    meta = {"n_reps": n_reps, "n_fallback": n_fallback, "n_failed": n_failed}
    return np.asarray(draws), meta, z_hat


def _bootstrap_run_star(args):
    return _bootstrap_run(*args)


def bootstrap_delta(sample, R, sites, s, n_reps, seed, z_hat=None, n_jobs=1,
                    **solve_options):
    """Bootstrap draws of ``sqrt(n) * delta_s(boot potential, plug-in)``.

    Resamples category counts multinomially, re-solves the dual (warm
    started at the plug-in potential), and records the scaled error
    functional.  Replications with a zero category (fallback) or a solver
    failure are excluded; counts are reported in ``meta``.  ``n_jobs > 1``
    runs replications in a process pool; draws are identical to the
    sequential run.
    """
    draws, meta, _ = _bootstrap_common(
        sample, R, sites, n_reps, seed, z_hat, "delta", s, None,
        solve_options, n_jobs,
    )
    seed_tag = seed if isinstance(seed, int) else None
    return LimitLawSample(draws, "delta", s, seed_tag, n_reps, meta)


def bootstrap_gamma(sample, R, sites, phi, n_reps, seed, z_hat=None, n_jobs=1,
                    **solve_options):
    """Bootstrap draws of ``sqrt(n) * (gamma_phi(boot) - gamma_phi(plug-in))``."""
    draws, meta, _ = _bootstrap_common(
        sample, R, sites, n_reps, seed, z_hat, "gamma", None, phi,
        solve_options, n_jobs,
    )
    seed_tag = seed if isinstance(seed, int) else None
    return LimitLawSample(draws, "gamma", None, seed_tag, n_reps, meta)


def confidence_set_radius(draws, alpha):
    """Empirical (1 - alpha)-quantile of bootstrap draws, higher
    interpolation: the smallest draw of rank at least ceil((1-alpha) B).

    Defines the L1 confidence set
    ``{ T : sqrt(n) | plug-in map - T |_{L1(R)} <= radius }``.
    """
    draws = np.asarray(getattr(draws, "draws", draws), dtype=float)
    if draws.size == 0:
        raise EmptyDraws("no draws to take a quantile of")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    ordered = np.sort(draws)
    rank = int(np.ceil((1.0 - alpha) * len(ordered)))
    return float(ordered[max(rank, 1) - 1])


@dataclass(frozen=True)
class ConfidenceBand:
    """Pointwise band around the plug-in map with average-coverage
    semantics.

    At each grid point the band is the ball of the stated radius around
    the plug-in map value; ``members[m, i]`` states whether site i lies
    in the ball at grid point m (the discrete band).  Coverage holds on
    average over y ~ R, not uniformly.
    """

    grid: np.ndarray
    radius: float
    map_values: np.ndarray
    members: np.ndarray
    alpha: float
    n: int


def confidence_band(z_hat, tau_half, n, alpha, grid, sites):
    """Band of radius ``tau_half / sqrt(n) * 2 / alpha`` around the plug-in
    map, intersected with the site set.

    ``tau_half`` must be the bootstrap quantile at level 1 - alpha/2.
    The plug-in map value always belongs to its own ball, so the discrete
    band is never empty.
    """
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if grid.shape[1] != sites.dim:
        raise DimensionMismatch("grid points and sites disagree on dimension")
    radius = tau_half / np.sqrt(n) * 2.0 / alpha
    values = transport_map(np.asarray(z_hat, dtype=float), grid, sites)
    dists = np.linalg.norm(values[:, None, :] - sites.points[None, :, :], axis=-1)
    return ConfidenceBand(
        grid=grid, radius=float(radius), map_values=values,
        members=dists <= radius, alpha=alpha, n=n,
    )


@dataclass(frozen=True)
class ProbeResult:
    fraction: float
    n_points: int
    applicable: bool


def super_consistency_probe(z_hat, z_star, sites, support, margin,
                            grid_per_cell=200):
    """Fraction of deep-interior grid points where the plug-in map equals
    the population map.

    Each cell contributes the grid points of its bounding box that lie in
    the support and at geometric distance at least ``margin`` from every
    facet hyperplane of the cell.  Expected to be 1.0 for large samples.
    When the margin empties every grid, the probe is not applicable.
    """
    z_hat = np.asarray(z_hat, dtype=float)
    z_star = np.asarray(z_star, dtype=float)
    diagram = build_diagram(sites, z_star, support)
    b = pairwise_offsets(sites, z_star)
    pts = sites.points
    total = 0
    matches = 0
    for i in range(sites.n):
        if diagram.empty[i]:
            continue
        if sites.dim == 1:
            lo, hi = diagram.cells[i]
            grid = np.linspace(lo, hi, grid_per_cell)[:, None]
        elif sites.dim == 2:
            cell = diagram.cells[i]
            if len(cell) < 3:
                continue
            m = max(2, int(np.ceil(np.sqrt(grid_per_cell))))
            gx = np.linspace(cell[:, 0].min(), cell[:, 0].max(), m)
            gy = np.linspace(cell[:, 1].min(), cell[:, 1].max(), m)
            grid = np.stack(np.meshgrid(gx, gy), axis=-1).reshape(-1, 2)
        else:
            lo, hi = support.bbox[:, 0], support.bbox[:, 1]
            m = max(2, int(np.ceil(grid_per_cell ** (1.0 / sites.dim))))
            axes = [np.linspace(lo[k], hi[k], m) for k in range(sites.dim)]
            grid = np.stack(np.meshgrid(*axes), axis=-1).reshape(-1, sites.dim)
        keep = support.contains(grid)
        for j in range(sites.n):
            if j == i:
                continue
            nrm = np.linalg.norm(pts[i] - pts[j])
            keep &= (grid @ (pts[i] - pts[j]) - b[i, j]) / nrm >= margin
        kept = grid[keep]
        if len(kept) == 0:
            continue
        total += len(kept)
        matches += int(np.sum(locate(sites, z_hat, kept) == i))
    if total == 0:
        return ProbeResult(float("nan"), 0, applicable=False)
    return ProbeResult(matches / total, total, applicable=True)
