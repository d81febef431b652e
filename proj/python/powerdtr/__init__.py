"""Power divergences on Q-functions and minimum-divergence policy estimators."""

from ._core import (
    ConsistencyError,
    DegenerateError,
    Error,
    EvaluationError,
    HarnessError,
    InvalidRecordError,
    SingularIndexError,
    StructuralError,
    TabularQ,
    __version__,
    beta_divergence,
    ekl_divergence,
    fit,
    generate,
    gamma_divergence,
    gm_limit_divergence,
    nkl_divergence,
    policy_equivalent,
    simulate,
)

__all__ = [
    "ConsistencyError",
    "DegenerateError",
    "Error",
    "EvaluationError",
    "HarnessError",
    "InvalidRecordError",
    "SingularIndexError",
    "StructuralError",
    "TabularQ",
    "beta_divergence",
    "ekl_divergence",
    "fit",
    "generate",
    "gamma_divergence",
    "gm_limit_divergence",
    "nkl_divergence",
    "policy_equivalent",
    "simulate",
]
