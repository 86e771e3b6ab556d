"""Semidiscrete optimal transport onto a finite target, with statistical
inference for the transport map.

The package solves the semidiscrete dual problem for a known absolutely
continuous reference measure, evaluates the transport map and its error /
linear functionals together with their directional derivatives, and runs
the downstream inference pipeline: limit-law simulation, nonparametric
bootstrap, confidence sets, average-coverage bands, and a
super-consistency diagnostic.
"""

from .dual import (
    DualSolveReport,
    dual_gradient,
    dual_hessian_reduced,
    dual_objective,
    dual_sensitivity,
    is_interior,
    normalize_potential,
    solve_dual,
    validate_weights,
)
from .errors import (
    ConfigError,
    DegenerateConfiguration,
    DimensionMismatch,
    EmptyCell,
    EmptyDraws,
    EmptyFacet,
    MaxIterationsExceeded,
    NoSampler,
    NotBuiltAgainstSupport,
    NotInterior,
    NotPSD,
    SemidiscreteError,
    SingularHessian,
    UnsupportedExactDimension,
)
from .functionals import (
    DerivativeBreakdown,
    VectorField,
    constant_field,
    coordinate_field,
    delta_s,
    fd_directional_quotient,
    gamma_deriv,
    gamma_phi,
    gamma_phi_diff,
    hadamard_delta_deriv,
    smoothed_indicator_field,
    transport_map,
)
from .geometry import (
    FacetGeometry,
    LaguerreDiagram,
    SiteSet,
    SupportRegion,
    build_diagram,
    cell_clip,
    locate,
    pairwise_offsets,
)
from .inference import (
    ConfidenceBand,
    CovarianceModel,
    LimitLawSample,
    PluginResult,
    ProbeResult,
    SampleData,
    bootstrap_delta,
    bootstrap_gamma,
    confidence_band,
    confidence_set_radius,
    covariance_model,
    draw_sample,
    empirical_frequencies,
    gamma_limit_coefficients,
    limit_variance_gamma,
    multinomial_covariance,
    plugin_estimate,
    psd_sqrt,
    sample_limit_delta,
    sample_limit_gamma,
    super_consistency_probe,
)
from .measure import (
    FacetMeasureRecord,
    ReferenceMeasure,
    cell_mass,
    cell_masses,
    facet_integral_dict,
    facet_mass_dict,
    facet_mass_thin_slab,
    facet_records,
    facet_surface_mass,
    facet_weighted_integral,
    intersection_mass,
    mc_cell_mass,
    symmetric_difference_mass,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
