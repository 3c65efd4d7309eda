"""Interaction-log ingestion, k-core filtering, splits and popularity statistics.

All interactions are implicit feedback: the presence of a rating/review counts
as a positive. Per-user sequences are ordered chronologically (stable sort, so
file order breaks timestamp ties) and split leave-one-out: last item is test,
second-to-last is validation, the rest is the train prefix.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

DATASET_SCHEMA_VERSION = 1

FORMATS = ("movielens_dat", "amazon_csv", "steam_json")


class DataError(ValueError):
    pass


class RawInteraction(NamedTuple):
    user: str
    item: str
    timestamp: int


def load_raw(path, format: str) -> list[RawInteraction]:
    """Parse a raw interaction log. No filtering is applied."""
    if format not in FORMATS:
        raise DataError(f"unknown format {format!r}; expected one of {FORMATS}")
    parse = {
        "movielens_dat": _parse_movielens,
        "amazon_csv": _parse_amazon,
        "steam_json": _parse_steam,
    }[format]
    records = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(parse(line))
            except Exception as exc:
                raise DataError(f"{path}: malformed line {lineno}: {exc}") from exc
    return records


def _parse_movielens(line):
    parts = line.split("::")
    if len(parts) != 4:
        raise ValueError(f"expected 4 '::'-separated fields, got {len(parts)}")
    user, item, _rating, ts = parts
    return RawInteraction(user, item, int(ts))


def _parse_amazon(line):
    parts = line.split(",")
    if len(parts) != 4:
        raise ValueError(f"expected 4 comma-separated fields, got {len(parts)}")
    user, item, _rating, ts = parts
    return RawInteraction(user, item, int(float(ts)))


def _parse_steam(line):
    rec = json.loads(line)
    user = rec.get("username", rec.get("user_id"))
    item = rec.get("product_id", rec.get("item_id"))
    if user is None or item is None:
        raise ValueError("missing username/product_id")
    if "timestamp" in rec:
        ts = int(rec["timestamp"])
    elif "date" in rec:
        ts = int(time.mktime(time.strptime(rec["date"], "%Y-%m-%d")))
    else:
        raise ValueError("missing timestamp/date")
    if ts < 0:
        raise ValueError("negative timestamp")
    return RawInteraction(str(user), str(item), ts)


@dataclass
class InteractionDataset:
    """Dense-indexed per-user item sequences with a leave-one-out split."""

    user_ids: list  # dense user index -> raw id
    item_ids: list  # dense item index -> raw id
    sequences: list  # per-user int64 arrays, chronological
    max_len: int = 200

    @property
    def num_users(self) -> int:
        return len(self.user_ids)

    @property
    def num_items(self) -> int:
        return len(self.item_ids)

    @property
    def num_interactions(self) -> int:
        return int(sum(len(s) for s in self.sequences))

    def train_sequence(self, u: int) -> np.ndarray:
        return self.sequences[u][:-2]

    def validation_item(self, u: int) -> int:
        return int(self.sequences[u][-2])

    def test_item(self, u: int) -> int:
        return int(self.sequences[u][-1])

    def train_counts(self) -> np.ndarray:
        """Per-item interaction counts over train prefixes only."""
        counts = np.zeros(self.num_items, dtype=np.int64)
        for u in range(self.num_users):
            np.add.at(counts, self.train_sequence(u), 1)
        return counts

    def total_counts(self) -> np.ndarray:
        counts = np.zeros(self.num_items, dtype=np.int64)
        for seq in self.sequences:
            np.add.at(counts, seq, 1)
        return counts


def preprocess(
    raw: list[RawInteraction], min_count: int = 5, max_len: int = 200
) -> InteractionDataset:
    """Iterative k-core filter, dense re-indexing and leave-one-out split.

    Filtering repeats until every remaining user and item has at least
    ``min_count`` interactions. Users left with fewer than 3 interactions are
    dropped (one train, one validation, one test item are required).
    """
    if not raw:
        raise DataError("no interactions to preprocess")

    by_user: dict[str, list[tuple[int, int, str]]] = {}
    for order, rec in enumerate(raw):
        by_user.setdefault(rec.user, []).append((rec.timestamp, order, rec.item))

    while True:
        item_counts: dict[str, int] = {}
        for recs in by_user.values():
            for _, _, item in recs:
                item_counts[item] = item_counts.get(item, 0) + 1
        bad_items = {i for i, c in item_counts.items() if c < min_count}
        changed = False
        if bad_items:
            for user in list(by_user):
                kept = [r for r in by_user[user] if r[2] not in bad_items]
                if len(kept) != len(by_user[user]):
                    changed = True
                    by_user[user] = kept
        bad_users = [u for u, recs in by_user.items() if len(recs) < min_count]
        for u in bad_users:
            changed = True
            del by_user[u]
        if not changed:
            break

    by_user = {u: recs for u, recs in by_user.items() if len(recs) >= 3}
    if not by_user:
        raise DataError(f"dataset empty after {min_count}-core filtering")

    user_ids = sorted(by_user)
    item_ids = sorted({item for recs in by_user.values() for _, _, item in recs})
    item_index = {item: j for j, item in enumerate(item_ids)}

    sequences = []
    for user in user_ids:
        recs = sorted(by_user[user], key=lambda r: (r[0], r[1]))
        sequences.append(np.array([item_index[item] for _, _, item in recs], dtype=np.int64))

    return InteractionDataset(user_ids, item_ids, sequences, max_len=max_len)


@dataclass
class PropensityTable:
    """Per-item observation propensities for positives and negatives.

    theta_plus = (n_i / max n)^omega, theta_minus = (1 - n_i / max n)^rho,
    both clamped below at eps so IPW weights stay bounded.
    """

    counts: np.ndarray
    theta_plus: np.ndarray
    theta_minus: np.ndarray
    omega: float
    rho: float
    eps: float


def compute_propensities(
    counts: np.ndarray, omega: float = 0.5, rho: float = 0.5, eps: float = 1e-3
) -> PropensityTable:
    counts = np.asarray(counts, dtype=np.int64)
    if not (0 <= omega <= 1 and 0 <= rho <= 1):
        raise DataError("omega and rho must lie in [0, 1]")
    if eps <= 0:
        raise DataError("eps must be > 0")
    if counts.sum() == 0:
        raise DataError("cannot compute propensities from zero interactions")
    frac = counts / counts.max()
    theta_plus = np.maximum(frac**omega, eps)
    theta_minus = np.maximum((1.0 - frac) ** rho, eps)
    return PropensityTable(counts, theta_plus, theta_minus, omega, rho, eps)


def gini_index(counts) -> float:
    """Gini coefficient of the item-count distribution.

    Uses the sorted formulation G = 2 * sum_i i*x_(i) / (n * sum x) - (n+1)/n
    with 1-based ranks over ascending-sorted counts.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0 or counts.sum() <= 0:
        raise DataError("gini requires at least one positive count")
    if (counts < 0).any():
        raise DataError("counts must be non-negative")
    x = np.sort(counts)
    n = x.size
    ranks = np.arange(1, n + 1)
    return float(2.0 * (ranks * x).sum() / (n * x.sum()) - (n + 1) / n)


def popularity_buckets(counts, boundaries) -> tuple[np.ndarray, np.ndarray]:
    """Assign items to popularity buckets via half-open count ranges.

    Bucket b holds items with boundaries[b-1] <= count < boundaries[b].
    Returns (per-item bucket index, per-bucket item-count ratio).
    """
    counts = np.asarray(counts)
    boundaries = np.asarray(boundaries)
    if boundaries.size and not (np.diff(boundaries) > 0).all():
        raise DataError("bucket boundaries must be strictly ascending")
    assignment = np.searchsorted(boundaries, counts, side="right")
    n_buckets = boundaries.size + 1
    ratios = np.bincount(assignment, minlength=n_buckets) / counts.size
    return assignment, ratios


def save_dataset(dataset: InteractionDataset, path) -> None:
    """Serialize as npz: concatenated sequences + offsets + id tables."""
    lengths = np.array([len(s) for s in dataset.sequences], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    flat = (
        np.concatenate(dataset.sequences)
        if dataset.sequences
        else np.array([], dtype=np.int64)
    )
    meta = json.dumps(
        {"schema_version": DATASET_SCHEMA_VERSION, "max_len": dataset.max_len}
    )
    np.savez_compressed(
        path,
        flat=flat,
        offsets=offsets,
        user_ids=np.array(dataset.user_ids, dtype=object),
        item_ids=np.array(dataset.item_ids, dtype=object),
        meta=np.array(meta),
    )


def load_dataset(path) -> InteractionDataset:
    with np.load(path, allow_pickle=True) as arc:
        meta = json.loads(str(arc["meta"]))
        if meta["schema_version"] != DATASET_SCHEMA_VERSION:
            raise DataError(f"unsupported dataset schema {meta['schema_version']}")
        offsets = arc["offsets"]
        flat = arc["flat"]
        sequences = [
            flat[offsets[i] : offsets[i + 1]].copy() for i in range(len(offsets) - 1)
        ]
        return InteractionDataset(
            list(arc["user_ids"]), list(arc["item_ids"]), sequences, meta["max_len"]
        )


def save_propensities(table: PropensityTable, path) -> None:
    np.savez_compressed(
        path,
        counts=table.counts,
        theta_plus=table.theta_plus,
        theta_minus=table.theta_minus,
        params=np.array([table.omega, table.rho, table.eps]),
    )


def load_propensities(path) -> PropensityTable:
    with np.load(path) as arc:
        omega, rho, eps = arc["params"]
        return PropensityTable(
            arc["counts"].copy(),
            arc["theta_plus"].copy(),
            arc["theta_minus"].copy(),
            float(omega),
            float(rho),
            float(eps),
        )


def synthetic_dataset(
    num_users: int = 200,
    num_items: int = 60,
    num_clusters: int = 4,
    seq_len_range: tuple[int, int] = (12, 28),
    conformity_prob: float = 0.5,
    popular_fraction: float = 0.2,
    seed: int = 0,
    max_len: int = 50,
) -> InteractionDataset:
    """Generate a popularity-skewed interaction log for desk-scale experiments.

    Each user belongs to one interest cluster. Every interaction is either
    conformity-driven (drawn from a global Zipf-like exposure distribution over
    the popular head) or interest-driven (drawn uniformly from the user's
    cluster). This plants a direct popularity effect that counterfactual
    adjustment can remove.
    """
    rng = np.random.default_rng(seed)
    n_popular = max(2, int(num_items * popular_fraction))
    head_weights = 1.0 / np.arange(1, n_popular + 1)
    head_weights /= head_weights.sum()
    cluster_items = np.array_split(np.arange(num_items), num_clusters)

    sequences = []
    for u in range(num_users):
        cluster = cluster_items[u % num_clusters]
        length = int(rng.integers(seq_len_range[0], seq_len_range[1] + 1))
        seq = np.where(
            rng.random(length) < conformity_prob,
            rng.choice(n_popular, size=length, p=head_weights),
            rng.choice(cluster, size=length),
        )
        sequences.append(seq.astype(np.int64))

    user_ids = [f"u{u}" for u in range(num_users)]
    item_ids = [f"i{j}" for j in range(num_items)]
    return InteractionDataset(user_ids, item_ids, sequences, max_len=max_len)
