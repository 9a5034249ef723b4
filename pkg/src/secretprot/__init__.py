"""Secret-protection calibration, training and attack simulation."""

from .accountant import DiscretePMF, RoundMechanism, composed_kl, pld_blowup_diagnostic, poisson_binomial, round_kl
from .attack import GameResult, ReconstructionGame, certified_bound, simulate_game
from .divergence import KLBudget, bern_kl, budget_from_targets, invert_posterior
from .domain import (DatasetError, ExampleRecord, RunConfig, SecretMap, SecretSpec, filter_secretless,
                     load_config, load_dataset)
from .lp import WeightLP, WeightVector, build_lp, solve
from .pipeline import CalibrationReport, SamplingPlan, calibrate, calibrate_secret_sigma, sampling_probs
from .trainer import LinearRegression, LogisticRegression, ModelAdapter, TrainTrace, clip, make_synthetic, train

__version__ = "0.1.0"
