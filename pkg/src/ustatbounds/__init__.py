"""Partition norms, moment and tail bounds for canonical U-statistics and chaoses.

The package evaluates the right-hand sides of moment and tail inequalities
for decoupled U-statistics with canonical kernels on finite spaces, for
decoupled Gaussian chaoses and for multiple integrals against compensated
Poisson processes, and checks them against exact laws or seeded Monte Carlo.
"""
from __future__ import annotations

from .bounds import (
    BoundReport,
    BoundTerm,
    ChaosEstimate,
    dominant_regime,
    gaussian_chaos_estimate,
    iid_sup_norms,
    iid_tail_bound,
    moment_bound,
    operator_norm_rhs,
    sup_norms,
    tail_bound,
    tail_from_norms,
)
from .exceptions import (
    BudgetExceededError,
    CanonicalityError,
    DomainError,
    InvalidPartitionError,
    ShapeError,
    UnsupportedMethodError,
    UStatBoundsError,
    ValidationError,
)
from .kernels import (
    DiscreteSpace,
    Estimate,
    KernelEnsemble,
    OutcomeAssignment,
    canonicalize,
    conditional_partition_norm,
    expected_max_conditional_norm,
    is_canonical,
    random_ensemble,
    require_canonical,
    sup_conditional_norm,
    weighted_embedding,
)
from .montecarlo import (
    ExactLaw,
    FitResult,
    NormCheck,
    SampleRun,
    ascend_ratio,
    exact_distribution,
    fit_constant,
    fit_tail_constant,
    gaussian_matrix_norm_check,
    sample_gaussian_chaos,
    sample_ustatistic,
    verify_moment_bound,
    verify_tail_bound,
)
from .partitions import Partition, enumerate_partitions, partition_coarsens
from .poisson import (
    ProcessSpec,
    StepKernel,
    fit_poisson_constant,
    isometry_value,
    poisson_threshold_bound,
    sample_multiple_integral,
    stepkernel_norm,
    verify_poisson_bound,
)
from .tensor import (
    MultiIndexArray,
    NormCertificate,
    NormConfig,
    all_partition_norms,
    frobenius_norm,
    partition_norm,
)

__version__ = "0.1.0"

__all__ = [
    "Partition",
    "enumerate_partitions",
    "partition_coarsens",
    "all_partition_norms",
    "ascend_ratio",
    "BoundReport",
    "BoundTerm",
    "BudgetExceededError",
    "CanonicalityError",
    "canonicalize",
    "ChaosEstimate",
    "conditional_partition_norm",
    "DiscreteSpace",
    "DomainError",
    "dominant_regime",
    "Estimate",
    "exact_distribution",
    "ExactLaw",
    "expected_max_conditional_norm",
    "fit_constant",
    "fit_poisson_constant",
    "fit_tail_constant",
    "FitResult",
    "frobenius_norm",
    "gaussian_chaos_estimate",
    "gaussian_matrix_norm_check",
    "iid_sup_norms",
    "iid_tail_bound",
    "InvalidPartitionError",
    "is_canonical",
    "isometry_value",
    "KernelEnsemble",
    "moment_bound",
    "MultiIndexArray",
    "NormCertificate",
    "NormCheck",
    "NormConfig",
    "operator_norm_rhs",
    "OutcomeAssignment",
    "partition_norm",
    "poisson_threshold_bound",
    "ProcessSpec",
    "random_ensemble",
    "require_canonical",
    "sample_gaussian_chaos",
    "sample_multiple_integral",
    "sample_ustatistic",
    "SampleRun",
    "ShapeError",
    "StepKernel",
    "stepkernel_norm",
    "sup_conditional_norm",
    "sup_norms",
    "tail_bound",
    "tail_from_norms",
    "UnsupportedMethodError",
    "UStatBoundsError",
    "ValidationError",
    "verify_moment_bound",
    "verify_poisson_bound",
    "verify_tail_bound",
    "weighted_embedding",
]
