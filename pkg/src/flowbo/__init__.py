"""Batch Bayesian optimisation by Stein and Wasserstein particle gradient flows."""

__version__ = "0.1.0"

from .domain import BoxDomain  # noqa: E402
from .engine import RunConfig, RunRecord, log_regret, run_batch_bo, run_experiment, run_from_config  # noqa: E402
from .experiments import PRESETS, experiment_config  # noqa: E402
from .flows import ParticleEnsemble, SteinConfig, WassersteinConfig  # noqa: E402
from .gp import Dataset, fit_gp, joint_posterior, sample_joint  # noqa: E402
from .kernels import InvalidInputError, KernelParams  # noqa: E402

__all__ = [
    "__version__", "BoxDomain", "Dataset", "InvalidInputError", "KernelParams", "PRESETS",
    "ParticleEnsemble", "RunConfig", "RunRecord", "SteinConfig", "WassersteinConfig",
    "experiment_config", "fit_gp", "joint_posterior", "log_regret", "run_batch_bo",
    "run_experiment", "run_from_config", "sample_joint",
]
