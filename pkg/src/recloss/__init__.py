"""Recommendation loss functions: biased and debiased contrastive, pairwise and
pointwise losses, MINE-style estimators, closed-form iALS / EASE, and tools to
certify their bounds and equivalences numerically."""

from .data import InteractionDataset, PopularityTable, SplitSpec, load_interactions, popularity, split, synthetic
from .evaluation import EvalReport, evaluate, popularity_baseline
from .kernels import BACKEND, available_backends
from .linear import EaseConfig, IalsConfig, LinearModel, ease_fit, ials_fit
from .losses import FAMILIES, LossOutput, LossSpec, ScoreBatch, grad_check
from .model import MfModel
from .sampling import Sampler, SamplerConfig, TauPolicy
from .trainer import TrainConfig, TrainHistory, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "FAMILIES", "EaseConfig", "EvalReport", "IalsConfig", "InteractionDataset",
    "LinearModel", "LossOutput", "LossSpec", "MfModel", "PopularityTable", "Sampler",
    "SamplerConfig", "ScoreBatch", "SplitSpec", "TauPolicy", "TrainConfig", "TrainHistory",
    "available_backends", "ease_fit", "evaluate", "grad_check", "ials_fit", "load_interactions",
    "popularity", "popularity_baseline", "split", "synthetic", "train",
]
