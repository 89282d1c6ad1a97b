"""Flow emulators + energy-based likelihood models for Boltzmann reweighting.

The heavy lifting lives in the C++ extension; this package re-exports it.
"""

from ._boltznce import (  # noqa: F401
    BoltznceIoError,
    EnergyModel,
    FlowModel,
    InterpolantSchedule,
    NumericalError,
    TargetDensity,
    UsageError,
    angle_w2,
    default_config,
    endpoint_coefficient,
    energy_w2,
    ess,
    hungarian_couple,
    interpolate,
    load_energy_model,
    load_flow_model,
    log_partition,
    make_target,
    run_ablation,
    run_pipeline,
    von_mises_weight,
)

__all__ = [
    "BoltznceIoError",
    "EnergyModel",
    "FlowModel",
    "InterpolantSchedule",
    "NumericalError",
    "TargetDensity",
    "UsageError",
    "angle_w2",
    "default_config",
    "endpoint_coefficient",
    "energy_w2",
    "ess",
    "hungarian_couple",
    "interpolate",
    "load_energy_model",
    "load_flow_model",
    "log_partition",
    "make_target",
    "run_ablation",
    "run_pipeline",
    "von_mises_weight",
]
