"""Adaptive operator transformation PDE surrogates."""

from ._core import (
    FamilySpec,
    FormatError,
    Model,
    ModelConfig,
    NumericError,
    TrainConfig,
    UndefinedMetricError,
    fft2,
    gaussian_random_field,
    generate_trajectory,
    l2re,
    one_cycle_lr,
    read_aotd,
    resolved_config,
    sinkhorn,
    solve_dr,
    solve_heat,
    solve_ns_vorticity,
    train,
    write_aotd,
)

__all__ = [
    "FamilySpec",
    "FormatError",
    "Model",
    "ModelConfig",
    "NumericError",
    "TrainConfig",
    "UndefinedMetricError",
    "fft2",
    "gaussian_random_field",
    "generate_trajectory",
    "l2re",
    "one_cycle_lr",
    "read_aotd",
    "resolved_config",
    "sinkhorn",
    "solve_dr",
    "solve_heat",
    "solve_ns_vorticity",
    "train",
    "write_aotd",
]
