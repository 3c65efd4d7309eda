"""Multi-task training loop with early stopping and checkpointing.

Training never sees the test item: ``fit`` immediately drops the last
interaction of every user and works on the train+validation view only.
"""

from __future__ import annotations

import copy
import dataclasses
import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from . import losses
from .config import EvalProtocol, ModelConfig, TrainConfig
from .data import InteractionDataset, PropensityTable, compute_propensities
from .evaluation import evaluate_unbiased
from .model import build_model

CHECKPOINT_SCHEMA_VERSION = 1

log = logging.getLogger(__name__)


@dataclass
class TrainState:
    epoch: int = 0
    best_metric: float = float("-inf")
    best_epoch: int = -1
    epochs_since_improvement: int = 0
    history: list = field(default_factory=list)  # per-epoch records


class Batcher:
    """Per-user next-step training rows with per-epoch negative resampling.

    Each user contributes one row: input items s_1..s_{m-1} (right-padded) and
    per-position positives s_2..s_m, truncated to the most recent max_len
    steps. One uniform negative per position, never equal to its positive.
    """

    def __init__(self, train_sequences, num_items, max_len, pad_index, batch_size):
        self.num_items = num_items
        self.pad_index = pad_index
        self.batch_size = batch_size
        self.rows = []
        for u, items in enumerate(train_sequences):
            if len(items) < 2:
                continue
            inp = np.asarray(items[:-1])[-max_len:]
            pos = np.asarray(items[1:])[-max_len:]
            self.rows.append((u, inp, pos))
        if not self.rows:
            raise ValueError("no user has enough train interactions to form examples")

    def num_examples(self) -> int:
        return sum(len(pos) for _, _, pos in self.rows)

    def epoch_batches(self, epoch_seed: int):
        rng = np.random.default_rng(epoch_seed)
        order = rng.permutation(len(self.rows))
        for start in range(0, len(order), self.batch_size):
            chunk = [self.rows[i] for i in order[start : start + self.batch_size]]
            width = max(len(pos) for _, _, pos in chunk)
            n = len(chunk)
            seq = np.full((n, width), self.pad_index, dtype=np.int64)
            pos = np.full((n, width), self.pad_index, dtype=np.int64)
            neg = np.full((n, width), self.pad_index, dtype=np.int64)
            mask = np.zeros((n, width), dtype=np.float32)
            users = np.zeros(n, dtype=np.int64)
            for r, (u, inp, p) in enumerate(chunk):
                m = len(p)
                seq[r, :m] = inp
                pos[r, :m] = p
                sampled = rng.integers(0, self.num_items - 1, size=m)
                sampled = np.where(sampled >= p, sampled + 1, sampled)
                neg[r, :m] = sampled
                mask[r, :m] = 1.0
                users[r] = u
            yield {
                "seq": torch.from_numpy(seq),
                "pos": torch.from_numpy(pos),
                "neg": torch.from_numpy(neg),
                "mask": torch.from_numpy(mask),
                "users": torch.from_numpy(users),
            }


def _gather_valid(tensor, flat_mask):
    return tensor.reshape(-1)[flat_mask]


def batch_loss(model, batch, weights, propensities, variant):
    """Total loss and per-component sums for one batch, mean over examples."""
    mask = batch["mask"]
    flat_mask = mask.reshape(-1).bool()
    n_examples = int(flat_mask.sum()) * 2  # positives and negatives
    dtype = next(model.parameters()).dtype
    users = batch["users"] if getattr(model.config, "use_user_embedding", False) else None
    out_pos, out_neg = model.forward_train(
        batch["seq"], batch["pos"], batch["neg"], mask.to(dtype), users
    )

    def valid_pair(attr):
        return torch.cat(
            [
                _gather_valid(getattr(out_pos, attr), flat_mask),
                _gather_valid(getattr(out_neg, attr), flat_mask),
            ]
        )

    ones = torch.ones(n_examples // 2, dtype=dtype)
    labels = torch.cat([ones, torch.zeros_like(ones)])
    components = {}
    mode = model.config.mode

    if model.config.is_disentangled:
        th_plus = torch.as_tensor(propensities.theta_plus, dtype=dtype)
        th_minus = torch.as_tensor(propensities.theta_minus, dtype=dtype)
        items = torch.cat(
            [
                _gather_valid(batch["pos"], flat_mask),
                _gather_valid(batch["neg"], flat_mask),
            ]
        )
        components["main"] = losses.bce(valid_pair("y"), labels)
        components["interest"] = losses.ipw_bce(
            valid_pair("y_m_int"), labels, th_plus[items], th_minus[items]
        )
        components["conformity"] = losses.bce(valid_pair("y_m_con"), labels)
        components["item"] = losses.bce(valid_pair("y_i"), labels)
        d = out_pos.pref_con.size(-1)
        if model.config.use_user_embedding:
            e_con_u, e_int_u = model.disentangle_user(batch["users"])
            components["ortho_user"] = losses.orthogonality(e_con_u, e_int_u)
        else:
            # no explicit user embedding: apply the independence pressure to
            # the mined preference pair instead
            components["ortho_user"] = losses.orthogonality(
                out_pos.pref_con.reshape(-1, d)[flat_mask],
                out_pos.pref_int.reshape(-1, d)[flat_mask],
            )
        components["ortho_item"] = losses.orthogonality(
            torch.cat(
                [
                    out_pos.e_pop_i.reshape(-1, d)[flat_mask],
                    out_neg.e_pop_i.reshape(-1, d)[flat_mask],
                ]
            ),
            torch.cat(
                [
                    out_pos.e_int_i.reshape(-1, d)[flat_mask],
                    out_neg.e_int_i.reshape(-1, d)[flat_mask],
                ]
            ),
        )
        total = losses.total_loss(
            components["main"] / n_examples,
            components["interest"] / n_examples,
            components["conformity"] / n_examples,
            components["item"] / n_examples,
            components["ortho_user"],
            components["ortho_item"],
            weights,
            variant=mode,
        )
    elif mode in ("base_bpr", "ipw_bpr"):
        pos_scores = _gather_valid(out_pos.y, flat_mask)
        neg_scores = _gather_valid(out_neg.y, flat_mask)
        w = None
        if mode == "ipw_bpr":
            th_plus = torch.as_tensor(propensities.theta_plus, dtype=dtype)
            w = th_plus[_gather_valid(batch["pos"], flat_mask)]
        components["main"] = losses.bpr_pairwise(pos_scores, neg_scores, w)
        total = components["main"] / (n_examples // 2)
    elif mode == "ipw_bce":
        th_plus = torch.as_tensor(propensities.theta_plus, dtype=dtype)
        th_minus = torch.as_tensor(propensities.theta_minus, dtype=dtype)
        items = torch.cat(
            [
                _gather_valid(batch["pos"], flat_mask),
                _gather_valid(batch["neg"], flat_mask),
            ]
        )
        components["main"] = losses.ipw_bce(
            valid_pair("y"), labels, th_plus[items], th_minus[items]
        )
        total = components["main"] / n_examples
    elif mode == "macr":
        components["main"] = losses.bce(valid_pair("y"), labels)
        components["item"] = losses.bce(valid_pair("y_i"), labels)
        components["user"] = losses.bce(valid_pair("y_u"), labels)
        total = (
            components["main"]
            + weights.beta * (components["item"] + components["user"])
        ) / n_examples
    else:  # base_bce, bias_tower
        components["main"] = losses.bce(valid_pair("y"), labels)
        total = components["main"] / n_examples
    return total, {k: float(v.detach()) for k, v in components.items()}


def train_epoch(model, batcher, optimizer, config: TrainConfig, propensities, epoch: int):
    """One optimizer step per batch; returns epoch-mean loss components."""
    model.train()
    sums: dict[str, float] = {}
    n_batches = 0
    for batch_id, batch in enumerate(batcher.epoch_batches(config.seed * 100003 + epoch)):
        optimizer.zero_grad()
        total, components = batch_loss(
            model, batch, config.weights, propensities, model.config.mode
        )
        if not torch.isfinite(total):
            raise RuntimeError(
                f"non-finite loss at epoch {epoch} batch {batch_id}: {components}"
            )
        total.backward()
        if config.grad_clip_norm > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip_norm)
        optimizer.step()
        components["total"] = float(total.detach())
        for k, v in components.items():
            sums[k] = sums.get(k, 0.0) + v
        n_batches += 1
    return {k: v / n_batches for k, v in sums.items()}


def fit(
    model,
    dataset: InteractionDataset,
    config: TrainConfig,
    protocol: EvalProtocol | None = None,
    propensities: PropensityTable | None = None,
    log_file=None,
):
    """Train with early stopping on validation unbiased NDCG@K.

    Returns the final TrainState; the model is left holding the best
    parameters seen during training.
    """
    config.validate()
    protocol = protocol or EvalProtocol()
    # drop each user's held-out test item up front; nothing below sees it
    fit_view = InteractionDataset(
        dataset.user_ids,
        dataset.item_ids,
        [s[:-1] for s in dataset.sequences],
        max_len=dataset.max_len,
    )
    if propensities is None:
        # counts over train prefixes only (no validation/test leakage)
        counts = np.zeros(fit_view.num_items, dtype=np.int64)
        for s in fit_view.sequences:
            np.add.at(counts, s[:-1], 1)
        propensities = compute_propensities(
            counts, config.omega, config.rho, config.propensity_eps
        )
    torch.manual_seed(config.seed)
    batcher = Batcher(
        [s[:-1] for s in fit_view.sequences],
        fit_view.num_items,
        model.config.max_len,
        model.pad_index,
        config.batch_size,
    )
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    state = TrainState()
    best_params = None
    if config.max_epochs == 0:
        warnings.warn("max_epochs=0: returning the initialized model")
        return state
    for epoch in range(config.max_epochs):
        t0 = time.time()
        components = train_epoch(model, batcher, optimizer, config, propensities, epoch)
        report = evaluate_unbiased(
            model, fit_view, protocol, propensities, split="test"
        )
        record = {
            "epoch": epoch,
            **{f"loss_{k}": v for k, v in components.items()},
            "val_ndcg": report.ndcg_at_k,
            "val_hit_rate": report.hit_rate_at_k,
            "wall_time": time.time() - t0,
        }
        state.history.append(record)
        state.epoch = epoch
        if log_file is not None:
            import json

            print(json.dumps(record), file=log_file, flush=True)
        if report.ndcg_at_k > state.best_metric:
            state.best_metric = report.ndcg_at_k
            state.best_epoch = epoch
            state.epochs_since_improvement = 0
            best_params = copy.deepcopy(model.state_dict())
        else:
            state.epochs_since_improvement += 1
            if state.epochs_since_improvement >= config.patience:
                break
    if best_params is not None:
        model.load_state_dict(best_params)
    return state


def save_checkpoint(model, path) -> None:
    torch.save(
        {
            "schema_version": CHECKPOINT_SCHEMA_VERSION,
            "model_config": dataclasses.asdict(model.config),
            "num_items": model.item_emb.num_items,
            "num_users": getattr(getattr(model, "user_emb", None), "num_embeddings", 0),
            "state_dict": model.state_dict(),
        },
        path,
    )


def load_checkpoint(path):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload["schema_version"] != CHECKPOINT_SCHEMA_VERSION:
        raise ValueError(f"unsupported checkpoint schema {payload['schema_version']}")
    cfg = payload["model_config"]
    cfg["dilations"] = tuple(cfg["dilations"])
    config = ModelConfig(**cfg)
    model = build_model(config, payload["num_items"], payload["num_users"])
    model.load_state_dict(payload["state_dict"])
    return model
