"""Planar 2-Wasserstein coupling via a quasi-linear elliptic Dirichlet solve."""

from .conditional import (
    FIRST_GIVEN_SECOND,
    SECOND_GIVEN_FIRST,
    ConditionalQuantile,
    ellipticity_margin,
)
from .cost import (
    CandidateQ,
    CornerPerturbation,
    Instance,
    M_closed_form_residual,
    M_field,
    apply_perturbation,
    build_instance,
    density_moments,
    krw_1d_distance,
    make_candidate,
    objective,
    product_candidate,
    reconstruct_coupling,
    sample_candidate,
    shift_cost_relation,
    split_check,
)
from .grids import (
    Density2D,
    Grid1D,
    Marginal1D,
    ScalarField2D,
    cumulative_along,
    diff1,
    diff2,
    interp1_monotone,
    marginal,
    mixed_xy,
    normalize,
    trapz2d,
)
from .oracle import (
    AtomizedMeasure,
    TransportPlan,
    atomize,
    exact_ot,
    exact_ot_1d,
    minimize_objective_direct,
)
from .pde import (
    DistributionF,
    PdeCoefficients,
    SolveReport,
    SolverConfig,
    assemble_coefficients,
    hh_residual,
    linear_elliptic_solve,
    picard_solve,
    recover_density,
    residual_window_max,
)
from .presets import build_preset

__version__ = "0.1.0"

__all__ = [
    "AtomizedMeasure",
    "CandidateQ",
    "ConditionalQuantile",
    "CornerPerturbation",
    "Density2D",
    "DistributionF",
    "FIRST_GIVEN_SECOND",
    "Grid1D",
    "Instance",
    "M_closed_form_residual",
    "M_field",
    "Marginal1D",
    "PdeCoefficients",
    "ScalarField2D",
    "SECOND_GIVEN_FIRST",
    "SolveReport",
    "SolverConfig",
    "TransportPlan",
    "apply_perturbation",
    "assemble_coefficients",
    "atomize",
    "build_instance",
    "build_preset",
    "cumulative_along",
    "density_moments",
    "diff1",
    "diff2",
    "ellipticity_margin",
    "exact_ot",
    "exact_ot_1d",
    "hh_residual",
    "interp1_monotone",
    "krw_1d_distance",
    "linear_elliptic_solve",
    "make_candidate",
    "marginal",
    "minimize_objective_direct",
    "mixed_xy",
    "normalize",
    "objective",
    "picard_solve",
    "product_candidate",
    "reconstruct_coupling",
    "recover_density",
    "residual_window_max",
    "sample_candidate",
    "shift_cost_relation",
    "split_check",
    "trapz2d",
]
