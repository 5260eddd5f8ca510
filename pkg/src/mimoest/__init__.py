"""mimoest: link-level MIMO channel estimation workbench.

Synthetic Kronecker-correlated Rayleigh channels, LS / LMMSE / neural channel
estimators, QPSK link simulation, and reproducible sweep experiments.
"""

__version__ = "0.1.0"

from .channel import (
    ChannelConfig,
    doppler_coefficient,
    draw_channel,
    evolve_channel,
    generate_pilots,
    transmit_pilots,
)
from .dataset import ChannelSample, Dataset, generate_dataset, load, save, split
from .errors import MimoestError
from .estimators import (
    DnnEstimator,
    EstimatorKind,
    LeastSquaresEstimator,
    LmmseEstimator,
    LmmsePrior,
    estimate,
    lmmse_estimate,
    ls_estimate,
)
from .metrics import ErrorStats, error_stats, nmse, nmse_aggregate_db
from .neural import MlpConfig, MlpModel, TrainReport, count_flops, count_params
from .numerics import RngStream

__all__ = [
    "ChannelConfig",
    "ChannelSample",
    "Dataset",
    "DnnEstimator",
    "ErrorStats",
    "EstimatorKind",
    "LeastSquaresEstimator",
    "LmmseEstimator",
    "LmmsePrior",
    "MimoestError",
    "MlpConfig",
    "MlpModel",
    "RngStream",
    "TrainReport",
    "__version__",
    "count_flops",
    "count_params",
    "doppler_coefficient",
    "draw_channel",
    "error_stats",
    "estimate",
    "evolve_channel",
    "generate_dataset",
    "generate_pilots",
    "lmmse_estimate",
    "load",
    "ls_estimate",
    "nmse",
    "nmse_aggregate_db",
    "save",
    "split",
    "transmit_pilots",
]
