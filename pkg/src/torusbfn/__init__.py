"""Periodic Bayesian flow networks on the hyper-torus."""

__version__ = "0.1.0"

from torusbfn.kernels import BACKEND  # noqa: E402
from torusbfn.schedule import (  # noqa: E402
    AccuracySchedule,
    DiscreteScheduleParams,
    GaussianScheduleParams,
    SolverError,
    discrete_alpha,
    gaussian_alpha,
    gaussian_gamma,
    solve_vm_schedule,
)
from torusbfn.special import (  # noqa: E402
    DomainError,
    angle_to_frac,
    bessel_i0_log,
    bessel_ratio_i1_i0,
    frac_to_angle,
    wrap,
)
from torusbfn.torus_flow import (  # noqa: E402
    SenderDraw,
    TorusBelief,
    bayesian_update,
    demonstrate_nonadditivity,
    flow_sample_fast,
    flow_sample_iterated,
    posterior_oracle,
)
from torusbfn.von_mises import VonMises, entropy, kl_divergence, log_pdf, sample  # noqa: E402

__all__ = [
    "AccuracySchedule", "BACKEND", "DiscreteScheduleParams", "DomainError", "GaussianScheduleParams",
    "SenderDraw", "SolverError", "TorusBelief", "VonMises", "angle_to_frac", "bayesian_update",
    "bessel_i0_log", "bessel_ratio_i1_i0", "demonstrate_nonadditivity", "discrete_alpha", "entropy",
    "flow_sample_fast", "flow_sample_iterated", "frac_to_angle", "gaussian_alpha", "gaussian_gamma",
    "kl_divergence", "log_pdf", "posterior_oracle", "sample", "solve_vm_schedule", "wrap",
]
