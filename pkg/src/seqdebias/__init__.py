"""Popularity-debiased sequential recommendation toolkit."""

from .config import (
    EvalProtocol,
    ExperimentSpec,
    LossWeights,
    ModelConfig,
    TrainConfig,
)
from .data import (
    InteractionDataset,
    PropensityTable,
    RawInteraction,
    compute_propensities,
    gini_index,
    load_raw,
    popularity_buckets,
    preprocess,
    synthetic_dataset,
)
from .estimator import SequenceRecommender
from .evaluation import (
    EvalReport,
    evaluate_unbiased,
    exposure_analysis,
    rank_metrics,
    sample_negatives,
    significance_test,
)
from .model import (
    BaselineNet,
    DCRNet,
    ForwardOutputs,
    build_model,
    counterfactual_score,
    score_candidates,
)
from .training import TrainState, fit, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "EvalProtocol",
    "ExperimentSpec",
    "LossWeights",
    "ModelConfig",
    "TrainConfig",
    "InteractionDataset",
    "PropensityTable",
    "RawInteraction",
    "compute_propensities",
    "gini_index",
    "load_raw",
    "popularity_buckets",
    "preprocess",
    "synthetic_dataset",
    "SequenceRecommender",
    "EvalReport",
    "evaluate_unbiased",
    "exposure_analysis",
    "rank_metrics",
    "sample_negatives",
    "significance_test",
    "BaselineNet",
    "DCRNet",
    "ForwardOutputs",
    "build_model",
    "counterfactual_score",
    "score_candidates",
    "TrainState",
    "fit",
    "load_checkpoint",
    "save_checkpoint",
]
