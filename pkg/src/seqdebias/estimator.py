"""Scikit-learn style estimator facade over the training and scoring stack.

``SequenceRecommender`` follows the sklearn estimator contract (constructor
stores hyperparameters verbatim, ``fit`` learns state into ``*_`` attributes,
``get_params``/``set_params`` work for grid search) so the model composes with
the wider ecosystem.
"""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .config import EvalProtocol, LossWeights, ModelConfig, TrainConfig
from .data import InteractionDataset, compute_propensities
from .evaluation import evaluate_unbiased
from .model import build_model, score_candidates
from .training import fit as _fit


class SequenceRecommender(BaseEstimator):
    """Next-item recommender with popularity-bias correction.

    Parameters mirror the model/training configuration; ``mode`` selects the
    full counterfactual model ("dcr"), an ablation variant or a baseline.
    """

    def __init__(
        self,
        mode="dcr",
        backbone="self_attention",
        embedding_dim=50,
        max_len=200,
        dropout=0.2,
        alpha=2e-2,
        beta=2e-2,
        gamma=5e-1,
        c=0.0,
        learning_rate=1e-3,
        batch_size=128,
        max_epochs=200,
        patience=40,
        omega=0.5,
        rho=0.5,
        propensity_eps=1e-3,
        eval_negatives=100,
        eval_k=10,
        seed=0,
    ):
        self.mode = mode
        self.backbone = backbone
        self.embedding_dim = embedding_dim
        self.max_len = max_len
        self.dropout = dropout
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.c = c
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.omega = omega
        self.rho = rho
        self.propensity_eps = propensity_eps
        self.eval_negatives = eval_negatives
        self.eval_k = eval_k
        self.seed = seed

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            mode=self.mode,
            backbone=self.backbone,
            embedding_dim=self.embedding_dim,
            max_len=self.max_len,
            dropout=self.dropout,
            inference_c=self.c,
        ).validate()

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=self.seed,
            weights=LossWeights(self.alpha, self.beta, self.gamma),
            omega=self.omega,
            rho=self.rho,
            propensity_eps=self.propensity_eps,
        ).validate()

    def _protocol(self) -> EvalProtocol:
        return EvalProtocol(
            k=self.eval_k, num_negatives=self.eval_negatives, seed=self.seed
        ).validate()

    def fit(self, X: InteractionDataset, y=None):
        """Train on the dataset's train+validation split (test is never read)."""
        torch.manual_seed(self.seed)
        self.model_ = build_model(self._model_config(), X.num_items, X.num_users)
        self.train_state_ = _fit(self.model_, X, self._train_config(), self._protocol())
        self.propensities_ = compute_propensities(
            X.train_counts(), self.omega, self.rho, self.propensity_eps
        )
        self.num_items_ = X.num_items
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before scoring")

    def score_items(self, history, candidates, c=None):
        """Adjusted scores for candidate items, in candidate order."""
        self._check_fitted()
        candidates = np.asarray(candidates, dtype=np.int64)
        ranked, scores = score_candidates(
            self.model_, history, candidates, c=self.c if c is None else c
        )
        back = {int(i): s for i, s in zip(ranked, scores)}
        return np.array([back[int(i)] for i in candidates])

    def recommend(self, history, candidates=None, k=10, c=None):
        """Top-k candidate items for one history, best first."""
        self._check_fitted()
        if candidates is None:
            candidates = np.setdiff1d(
                np.arange(self.num_items_), np.asarray(history, dtype=np.int64)
            )
        ranked, _ = score_candidates(
            self.model_, history, candidates, c=self.c if c is None else c
        )
        return ranked[:k]

    def evaluate(self, X: InteractionDataset, split="test", c=None):
        """Unbiased IPW-reweighted ranking metrics on the held-out split."""
        self._check_fitted()
        return evaluate_unbiased(
            self.model_,
            X,
            self._protocol(),
            self.propensities_,
            split=split,
            c=self.c if c is None else c,
        )

    def score(self, X: InteractionDataset, y=None) -> float:
        """sklearn scoring hook: unbiased NDCG@k on the test split."""
        return self.evaluate(X).ndcg_at_k
