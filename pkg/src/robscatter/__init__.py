"""Robust scatter estimation with proper-scoring-rule GANs."""

from .baselines import depth_1d, sample_covariance, scaled_kendall_tau, tyler_m
from .distributions import ContaminationScenario, Rng, ar_matrix, sample_contaminated
from .gan import EstimationResult, TrainConfig, calibrate_elliptical, train, train_joint, train_ustat
from .linalg import operator_norm, sym_eig, sym_sqrt
from .scoring import ScoringRule

__version__ = "0.1.0"
