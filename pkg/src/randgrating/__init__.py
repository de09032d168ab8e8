"""Random periodic fluid-solid interfaces: forward scattering, multi-frequency
Monte Carlo reconstruction and ensemble statistics."""

from .config import ExperimentConfig, load_config
from .estimators import EnsembleStatistics, InterfaceReconstructor
from .exceptions import ArtifactMismatchError, ConfigError, NumericalError, WoodAnomalyError
from .forward import ForwardSolution, ScatterRecord, forward_solve, synthesize_dataset
from .inverse import reconstruct_sample, run_tsmcc
from .modes import LineHeights, MediumParams, Schedule, make_mode_table
from .stats import ensemble_stats
from .surface import FourierProfile, SurfaceSpec, preset_profile

__version__ = "0.1.0"

__all__ = [
    "ArtifactMismatchError",
    "ConfigError",
    "EnsembleStatistics",
    "ExperimentConfig",
    "ForwardSolution",
    "FourierProfile",
    "InterfaceReconstructor",
    "LineHeights",
    "MediumParams",
    "NumericalError",
    "Schedule",
    "ScatterRecord",
    "SurfaceSpec",
    "WoodAnomalyError",
    "ensemble_stats",
    "forward_solve",
    "load_config",
    "make_mode_table",
    "preset_profile",
    "reconstruct_sample",
    "run_tsmcc",
    "synthesize_dataset",
]
