"""Spectral analysis toolkit for the near-critical planar Ising magnetization field.

The package bundles the analytic side (mass spectral measures and the
covariance kernels they generate), a critical/near-critical 2-d Ising
Monte-Carlo engine, estimators that extract the renormalized field's
covariance structure from spin configurations, an exact Gaussian-process
sampler for the limiting field, and an exponential-sum mass fitter.
"""

from .measures import (
    MassSpectralMeasure,
    covariance_measure,
    first_moment,
    parse_measure,
    format_measure,
    read_measure,
    write_measure,
)
from .bessel import bessel_k0, bessel_k0_scaled, UnderflowWarning
from .kernels import (
    KernelContext,
    QuadratureError,
    RadialPoint,
    field_covariance,
    field_covariance_grid,
    process_covariance,
    process_covariance_grid,
    laplace_transform,
    laplace_increment,
    covariance_increment,
    short_distance_ratio,
    oz_field_ratio,
    oz_process_ratio,
    oz_transverse_ratios,
)
from .lattice import (
    LatticeSpec,
    SpinConfiguration,
    critical_coupling,
    wolff_ghost_update,
    metropolis_sweep,
    random_configuration,
    aligned_configuration,
    block_site_count,
    write_snapshot,
    read_snapshot,
)
from .chains import (
    ChainStats,
    PackedConfigurations,
    run_chain,
    run_ensemble,
    sample_configurations,
    two_point,
    pooled_two_point,
    integrated_autocorr_time,
    blocked_stderr,
)
from .scans import (
    ExponentFit,
    IsothermPoint,
    MassGapPoint,
    critical_isotherm_scan,
    mass_gap_scan,
    effective_mass_profile,
)
from .fields import (
    BlockIndicator,
    StripMollifier,
    GaussianTime,
    FieldSample,
    LineAverageSamples,
    FieldCovarianceEstimate,
    SyntheticCovarianceTable,
    ProcessCovarianceRow,
    SusceptibilityResult,
    CltRow,
    pair_field,
    pair_field_values,
    line_average_samples,
    line_average_matrix,
    estimate_field_covariance,
    estimate_process_covariance,
    susceptibility,
    clt_diagnostics,
)
from .gp import (
    GPSpec,
    DiscreteMeasure,
    PathSample,
    CovRow,
    RoughnessFit,
    discretize_measure,
    build_nodes,
    sample_path,
    sample_paths,
    empirical_cov,
    roughness_exponent,
    analytic_roughness_exponent,
    integrate_path,
    integrated_variance,
)
from .fitting import (
    ExpSumModel,
    FitResult,
    GapCheck,
    LowestMassFit,
    RankDeficiencyError,
    fit_exponentials,
    gap_check,
    fit_lowest_mass,
    E8_SECOND_MASS_RATIO,
    E8_THIRD_MASS_RATIO,
)

__version__ = "0.1.0"

__all__ = [
    "MassSpectralMeasure",
    "covariance_measure",
    "first_moment",
    "parse_measure",
    "format_measure",
    "read_measure",
    "write_measure",
    "bessel_k0",
    "bessel_k0_scaled",
    "UnderflowWarning",
    "KernelContext",
    "QuadratureError",
    "RadialPoint",
    "field_covariance",
    "field_covariance_grid",
    "process_covariance",
    "process_covariance_grid",
    "laplace_transform",
    "laplace_increment",
    "covariance_increment",
    "short_distance_ratio",
    "oz_field_ratio",
    "oz_process_ratio",
    "oz_transverse_ratios",
    "LatticeSpec",
    "SpinConfiguration",
    "critical_coupling",
    "wolff_ghost_update",
    "metropolis_sweep",
    "random_configuration",
    "aligned_configuration",
    "block_site_count",
    "write_snapshot",
    "read_snapshot",
    "ChainStats",
    "PackedConfigurations",
    "run_chain",
    "run_ensemble",
    "sample_configurations",
    "two_point",
    "pooled_two_point",
    "integrated_autocorr_time",
    "blocked_stderr",
    "ExponentFit",
    "IsothermPoint",
    "MassGapPoint",
    "critical_isotherm_scan",
    "mass_gap_scan",
    "effective_mass_profile",
    "BlockIndicator",
    "StripMollifier",
    "GaussianTime",
    "FieldSample",
    "LineAverageSamples",
    "FieldCovarianceEstimate",
    "SyntheticCovarianceTable",
    "ProcessCovarianceRow",
    "SusceptibilityResult",
    "CltRow",
    "pair_field",
    "pair_field_values",
    "line_average_samples",
    "line_average_matrix",
    "estimate_field_covariance",
    "estimate_process_covariance",
    "susceptibility",
    "clt_diagnostics",
    "GPSpec",
    "DiscreteMeasure",
    "PathSample",
    "CovRow",
    "RoughnessFit",
    "discretize_measure",
    "build_nodes",
    "sample_path",
    "sample_paths",
    "empirical_cov",
    "roughness_exponent",
    "analytic_roughness_exponent",
    "integrate_path",
    "integrated_variance",
    "ExpSumModel",
    "FitResult",
    "GapCheck",
    "LowestMassFit",
    "RankDeficiencyError",
    "fit_exponentials",
    "gap_check",
    "fit_lowest_mass",
    "E8_SECOND_MASS_RATIO",
    "E8_THIRD_MASS_RATIO",
    "__version__",
]
