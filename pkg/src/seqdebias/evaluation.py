"""Sampled-negative ranking evaluation with inverse-propensity reweighting,
popularity-exposure analysis and multi-run significance testing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .config import EvalProtocol
from .data import InteractionDataset, PropensityTable, gini_index
from .model import score_candidates

REPORT_SCHEMA_VERSION = 1


class EvalError(ValueError):
    pass


def sample_negatives(rng: np.random.Generator, num_items: int, excluded, n: int):
    """Uniform sample without replacement from items outside ``excluded``."""
    pool = np.setdiff1d(np.arange(num_items), np.asarray(list(excluded)))
    if pool.size < n:
        raise EvalError(f"candidate pool ({pool.size}) smaller than requested {n}")
    return rng.choice(pool, size=n, replace=False)


def rank_of_positive(scores: np.ndarray, candidate_ids: np.ndarray, pos_index: int) -> int:
    """1-based rank under descending score with lower-item-index tie-break."""
    s = scores[pos_index]
    cid = candidate_ids[pos_index]
    better = (scores > s) | ((scores == s) & (candidate_ids < cid))
    return int(better.sum()) + 1


def rank_metrics(rank: int, k: int) -> tuple[float, float]:
    """(ndcg, hit) for a single relevant item at the given 1-based rank."""
    if rank <= k:
        return 1.0 / math.log2(rank + 1), 1.0
    return 0.0, 0.0


@dataclass
class EvalReport:
    ndcg_at_k: float
    hit_rate_at_k: float
    k: int
    num_users: int
    reweighting: str
    seed: int
    exposure_shares: list = field(default_factory=list)
    gini: float = float("nan")
    config_hash: str = ""

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "ndcg_at_k": self.ndcg_at_k,
            "hit_rate_at_k": self.hit_rate_at_k,
            "k": self.k,
            "num_users": self.num_users,
            "reweighting": self.reweighting,
            "seed": self.seed,
            "exposure_shares": list(self.exposure_shares),
            "gini": self.gini,
            "config_hash": self.config_hash,
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def _ipw_weight(item: int, propensities: PropensityTable, raw_counts: bool) -> float:
    if raw_counts:
        return 1.0 / max(int(propensities.counts[item]), 1)
    return 1.0 / propensities.theta_plus[item]


def evaluate_unbiased(
    model,
    dataset: InteractionDataset,
    protocol: EvalProtocol,
    propensities: PropensityTable | None = None,
    split: str = "test",
    c: float | None = None,
) -> EvalReport:
    """Weighted-mean NDCG@K / HR@K over sampled candidate sets.

    Each test instance is weighted by the inverse propensity of its positive
    item (self-normalized), so the estimate targets a uniform item exposure.
    The negative pool excludes the user's full interaction history.
    """
    protocol.validate()
    if protocol.reweighting == "ipw" and propensities is None:
        raise EvalError("ipw reweighting requires a propensity table")
    if dataset.num_users == 0:
        raise EvalError("empty evaluation split")
    rng = np.random.default_rng(protocol.seed)
    wsum = 0.0
    ndcg_sum = 0.0
    hit_sum = 0.0
    for u in range(dataset.num_users):
        seq = dataset.sequences[u]
        if split == "test":
            positive = dataset.test_item(u)
            history = seq[:-1]
        elif split == "validation":
            positive = dataset.validation_item(u)
            history = seq[:-2]
        else:
            raise EvalError(f"unknown split {split!r}")
        if history.size == 0:
            continue
        excluded = set(seq.tolist())
        negatives = sample_negatives(
            rng, dataset.num_items, excluded, protocol.num_negatives
        )
        candidates = np.concatenate([[positive], negatives])
        ranked, _ = score_candidates(model, history, candidates, c=c)
        rank = int(np.nonzero(ranked == positive)[0][0]) + 1
        ndcg, hit = rank_metrics(rank, protocol.k)
        w = 1.0
        if protocol.reweighting == "ipw":
            w = _ipw_weight(positive, propensities, protocol.ipw_raw_counts)
        wsum += w
        ndcg_sum += w * ndcg
        hit_sum += w * hit
    if wsum == 0.0:
        raise EvalError("no evaluable users in split")
    return EvalReport(
        ndcg_at_k=ndcg_sum / wsum,
        hit_rate_at_k=hit_sum / wsum,
        k=protocol.k,
        num_users=dataset.num_users,
        reweighting=protocol.reweighting,
        seed=protocol.seed,
    )


def exposure_analysis(
    model,
    dataset: InteractionDataset,
    k: int,
    bucket_assignment: np.ndarray,
    c: float | None = None,
) -> np.ndarray:
    """Share of top-k recommendation slots falling into each popularity bucket.

    Recommends over the full catalog excluding the user's train history.
    Shares sum to 1 across buckets.
    """
    n_buckets = int(bucket_assignment.max()) + 1
    slot_counts = np.zeros(n_buckets, dtype=np.int64)
    total = 0
    for u in range(dataset.num_users):
        history = dataset.train_sequence(u)
        if history.size == 0:
            continue
        candidates = np.setdiff1d(np.arange(dataset.num_items), history)
        ranked, _ = score_candidates(model, history, candidates, c=c)
        top = ranked[:k]
        np.add.at(slot_counts, bucket_assignment[top], 1)
        total += top.size
    if total == 0:
        raise EvalError("no users with train history")
    return slot_counts / total


def recommendation_gini(model, dataset: InteractionDataset, k: int, c=None) -> float:
    """Gini index over how often each item appears in top-k recommendations."""
    counts = np.zeros(dataset.num_items, dtype=np.int64)
    for u in range(dataset.num_users):
        history = dataset.train_sequence(u)
        if history.size == 0:
            continue
        candidates = np.setdiff1d(np.arange(dataset.num_items), history)
        ranked, _ = score_candidates(model, history, candidates, c=c)
        np.add.at(counts, ranked[:k], 1)
    return gini_index(counts)


def significance_test(runs_a, runs_b) -> float:
    """One-tailed Welch t-test p-value for mean(runs_a) > mean(runs_b)."""
    runs_a = np.asarray(runs_a, dtype=np.float64)
    runs_b = np.asarray(runs_b, dtype=np.float64)
    if runs_a.size < 2 or runs_b.size < 2:
        raise EvalError("significance test requires at least 2 runs per side")
    if runs_a.var() == 0.0 and runs_b.var() == 0.0:
        # degenerate zero-variance case: t is 0/0; resolve by mean comparison
        diff = runs_a.mean() - runs_b.mean()
        return 0.5 if diff == 0 else (0.0 if diff > 0 else 1.0)
    result = stats.ttest_ind(runs_a, runs_b, equal_var=False, alternative="greater")
    return float(result.pvalue)
