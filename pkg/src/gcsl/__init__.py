"""Softmax classifier and shared-covariance Gaussian model,
trained together under a coupling prior."""

from ._backend import BACKEND
from .calibration import CalibrationReport, PredictionRecord, Predictions, confidence_histogram, ece, reliability_bins
from .data import Dataset, MaskRule, apply_mask, gen_two_gaussians, parse_mask, read_csv, write_csv
from .ebm import SampleBuffer, SgldConfig, ebm_grad, energy_input_grad, generate, sgld_chain, total_energy
from .errors import ContractError, CsvParseError, SamplerDivergence, TrainingDiverged
from .layer import (
    DiscriminativeParams,
    GenerativeParams,
    associate,
    joint_log_density,
    marginal_log_density,
    posterior_disc,
    posterior_gen,
)
from .model import HybridModel
from .numerics import CholFactor
from .objectives import LossBreakdown, association_residual, semi_supervised_loss, supervised_hybrid_loss
from .trainer import FeatureNetConfig, TrainConfig, evaluate, grad_check, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CalibrationReport",
    "CholFactor",
    "ContractError",
    "CsvParseError",
    "Dataset",
    "DiscriminativeParams",
    "FeatureNetConfig",
    "GenerativeParams",
    "HybridModel",
    "LossBreakdown",
    "MaskRule",
    "PredictionRecord",
    "Predictions",
    "SampleBuffer",
    "SamplerDivergence",
    "SgldConfig",
    "TrainConfig",
    "TrainingDiverged",
    "apply_mask",
    "associate",
    "association_residual",
    "confidence_histogram",
    "ebm_grad",
    "ece",
    "energy_input_grad",
    "evaluate",
    "gen_two_gaussians",
    "generate",
    "grad_check",
    "joint_log_density",
    "marginal_log_density",
    "parse_mask",
    "posterior_disc",
    "posterior_gen",
    "read_csv",
    "reliability_bins",
    "semi_supervised_loss",
    "sgld_chain",
    "supervised_hybrid_loss",
    "total_energy",
    "train",
    "write_csv",
]
