"""Random dynamical systems lab: noise paths, integrators and synchronization diagnostics."""

from ._core import (
    BlowUpError,
    BudgetError,
    ChannelKind,
    ConfigurationError,
    Error,
    GridError,
    NoisePath,
    ParameterError,
    ParseError,
    System,
    TimeGrid,
    build_system,
    certify_ball_image,
    folded_normal_mean,
    integrate,
    lyapunov_spectrum,
    run_experiment,
    sample_path,
    sample_two_sided,
    scenario_names,
    sync_probability,
    system_names,
    two_point_distance,
)

__version__ = "0.1.0"
