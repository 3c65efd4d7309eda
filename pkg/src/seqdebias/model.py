"""Disentangled counterfactual scoring model, its ablation variants and the
single-tower baselines.

The full model ("dcr") disentangles item embeddings into popularity/interest
representations and the sequence context into conformity/interest preferences,
matches each pair with a dot product, blends the two match scores with a
learned attention weight, multiplies in the direct popularity and conformity
effects, and at inference subtracts the counterfactual reference term
c * sigmoid(y_u) * sigmoid(y_i) to remove the direct popularity path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .config import ConfigError, ModelConfig
from .encoders import ItemEmbeddings, PreferenceMerge, last_state, make_encoder


@dataclass
class ForwardOutputs:
    """All intermediate scores of one scoring pass. Tensors share a shape."""

    y: torch.Tensor
    y_m: torch.Tensor | None = None
    y_m_int: torch.Tensor | None = None
    y_m_con: torch.Tensor | None = None
    y_i: torch.Tensor | None = None
    y_u: torch.Tensor | None = None
    w_int: torch.Tensor | None = None
    e_pop_i: torch.Tensor | None = None
    e_int_i: torch.Tensor | None = None
    pref_con: torch.Tensor | None = None
    pref_int: torch.Tensor | None = None


def _mlp(in_dim: int, hidden: int, out_dim: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(in_dim, hidden), nn.ReLU(), nn.Linear(hidden, out_dim))


class DCRNet(nn.Module):
    """Disentangled counterfactual model (modes dcr / var0 / var1 / var2)."""

    def __init__(self, config: ModelConfig, num_items: int, num_users: int = 0):
        super().__init__()
        config.validate()
        if not config.is_disentangled:
            raise ConfigError(f"DCRNet does not implement mode {config.mode!r}")
        self.config = config
        d = config.embedding_dim
        self.item_emb = ItemEmbeddings(num_items, d)
        # item heads are shared between targets and sequence positions
        self.interest_head = _mlp(d, 150, 50)
        self.popularity_head = _mlp(d, 100, 50)
        if config.use_user_embedding:
            if num_users <= 0:
                raise ConfigError("user embeddings require num_users > 0")
            self.user_emb = nn.Embedding(num_users, config.user_dim)
            nn.init.normal_(self.user_emb.weight, std=0.02)
            self.user_conformity_head = _mlp(config.user_dim, 100, 50)
            self.user_interest_head = _mlp(config.user_dim, 150, 50)
        self.seq_con = make_encoder(config)
        self.seq_int = make_encoder(config)
        self.merge_con = PreferenceMerge(config.merge_mode, d, config.user_dim)
        self.merge_int = PreferenceMerge(config.merge_mode, d, config.user_dim)
        self.atten_net = _mlp(4 * 50, 50, 1)
        self.item_score = nn.Linear(50, 1)
        self.user_score = nn.Linear(50, 1)

    @property
    def pad_index(self) -> int:
        return self.item_emb.pad_index

    def disentangle_user(self, user_idx: torch.Tensor):
        e_u = self.user_emb(user_idx)
        return self.user_conformity_head(e_u), self.user_interest_head(e_u)

    def disentangle_item(self, e_i: torch.Tensor):
        return self.popularity_head(e_i), self.interest_head(e_i)

    def mine_preferences(self, seq: torch.Tensor, mask: torch.Tensor, user_idx=None):
        """Per-position conformity/interest preferences from the history."""
        e_seq = self.item_emb(seq)
        pad_keep = mask.unsqueeze(-1)
        e_pop_seq = self.popularity_head(e_seq) * pad_keep
        e_int_seq = self.interest_head(e_seq) * pad_keep
        e_con_u = e_int_u = None
        if self.config.use_user_embedding and user_idx is not None:
            e_con_u, e_int_u = self.disentangle_user(user_idx)
        pref_con = self.merge_con(self.seq_con(e_pop_seq, mask), e_con_u)
        pref_int = self.merge_int(self.seq_int(e_int_seq, mask), e_int_u)
        return pref_con, pref_int

    def match_and_fuse(self, pref_con, pref_int, e_pop_i, e_int_i):
        y_con = (e_pop_i * pref_con).sum(-1)
        y_int = (e_int_i * pref_int).sum(-1)
        mode = self.config.mode
        if mode in ("var1", "var2"):
            return y_con, y_int, None, y_con + y_int
        if mode == "var0":
            w = torch.ones_like(y_int)
        else:
            feats = torch.cat(
                [
                    e_int_i,
                    pref_int.expand_as(e_int_i),
                    e_pop_i,
                    pref_con.expand_as(e_pop_i),
                ],
                dim=-1,
            )
            w = torch.sigmoid(self.atten_net(feats).squeeze(-1))
        y_m = w * y_int + (1.0 - w) * y_con
        return y_con, y_int, w, y_m

    def score_targets(self, pref_con, pref_int, items) -> ForwardOutputs:
        e_i = self.item_emb(items)
        e_pop_i, e_int_i = self.disentangle_item(e_i)
        y_con, y_int, w, y_m = self.match_and_fuse(pref_con, pref_int, e_pop_i, e_int_i)
        y_i = self.item_score(e_pop_i).squeeze(-1)
        y_u = self.user_score(pref_con).squeeze(-1)
        if y_u.shape != y_i.shape:
            y_u = y_u.expand_as(y_i)
        y = y_m * torch.sigmoid(y_u) * torch.sigmoid(y_i)
        return ForwardOutputs(
            y=y,
            y_m=y_m,
            y_m_int=y_int,
            y_m_con=y_con,
            y_i=y_i,
            y_u=y_u,
            w_int=w,
            e_pop_i=e_pop_i,
            e_int_i=e_int_i,
            pref_con=pref_con,
            pref_int=pref_int,
        )

    def forward_train(self, seq, pos, neg, mask, user_idx=None):
        """Per-position outputs for positive and negative targets."""
        pref_con, pref_int = self.mine_preferences(seq, mask, user_idx)
        return (
            self.score_targets(pref_con, pref_int, pos),
            self.score_targets(pref_con, pref_int, neg),
        )

    def score(self, seq, lengths, candidates, user_idx=None) -> ForwardOutputs:
        """Score candidate items (B, C) at each sequence's next step."""
        mask = sequence_mask(seq, self.pad_index)
        pref_con, pref_int = self.mine_preferences(seq, mask, user_idx)
        pref_con = last_state(pref_con, lengths).unsqueeze(1)
        pref_int = last_state(pref_int, lengths).unsqueeze(1)
        return self.score_targets(pref_con, pref_int, candidates)


class BaselineNet(nn.Module):
    """Single-tower sequential model for the non-disentangled modes.

    base_bce/base_bpr/ipw_bce/ipw_bpr score with a plain dot product.
    bias_tower adds a learned per-item scalar during training only. macr keeps
    the multiplicative three-branch fusion but feeds raw embeddings to every
    branch.
    """

    def __init__(self, config: ModelConfig, num_items: int, num_users: int = 0):
        super().__init__()
        config.validate()
        if config.is_disentangled:
            raise ConfigError(f"BaselineNet does not implement mode {config.mode!r}")
        self.config = config
        d = config.embedding_dim
        self.item_emb = ItemEmbeddings(num_items, d)
        self.encoder = make_encoder(config)
        if config.use_user_embedding:
            if num_users <= 0:
                raise ConfigError("user embeddings require num_users > 0")
            self.user_emb = nn.Embedding(num_users, config.user_dim)
            nn.init.normal_(self.user_emb.weight, std=0.02)
        self.merge = PreferenceMerge(config.merge_mode, d, config.user_dim)
        if config.mode == "bias_tower":
            self.item_bias = nn.Embedding(num_items + 1, 1, padding_idx=num_items)
            nn.init.zeros_(self.item_bias.weight)
        if config.mode == "macr":
            self.user_score = nn.Linear(d, 1)
            self.item_score = nn.Linear(d, 1)

    @property
    def pad_index(self) -> int:
        return self.item_emb.pad_index

    def preferences(self, seq, mask, user_idx=None):
        e_seq = self.item_emb(seq)
        e_u = None
        if self.config.use_user_embedding and user_idx is not None:
            e_u = self.user_emb(user_idx)
        return self.merge(self.encoder(e_seq, mask), e_u)

    def score_targets(self, pref, items, training: bool) -> ForwardOutputs:
        e_i = self.item_emb(items)
        dot = (e_i * pref).sum(-1)
        mode = self.config.mode
        if mode == "bias_tower":
            y = dot + self.item_bias(items).squeeze(-1) if training else dot
            return ForwardOutputs(y=y)
        if mode == "macr":
            y_u = self.user_score(pref).squeeze(-1)
            if y_u.shape != dot.shape:
                y_u = y_u.expand_as(dot)
            y_i = self.item_score(e_i).squeeze(-1)
            y = dot * torch.sigmoid(y_u) * torch.sigmoid(y_i)
            return ForwardOutputs(y=y, y_m=dot, y_i=y_i, y_u=y_u)
        return ForwardOutputs(y=dot)

    def forward_train(self, seq, pos, neg, mask, user_idx=None):
        pref = self.preferences(seq, mask, user_idx)
        return (
            self.score_targets(pref, pos, training=True),
            self.score_targets(pref, neg, training=True),
        )

    def score(self, seq, lengths, candidates, user_idx=None) -> ForwardOutputs:
        mask = sequence_mask(seq, self.pad_index)
        pref = self.preferences(seq, mask, user_idx)
        pref = last_state(pref, lengths).unsqueeze(1)
        return self.score_targets(pref, candidates, training=False)


def build_model(config: ModelConfig, num_items: int, num_users: int = 0) -> nn.Module:
    config.validate()
    if config.is_disentangled:
        return DCRNet(config, num_items, num_users)
    return BaselineNet(config, num_items, num_users)


def sequence_mask(seq: torch.Tensor, pad_index: int) -> torch.Tensor:
    return (seq != pad_index).to(seq.device, dtype=torch.get_default_dtype())


def counterfactual_score(outputs: ForwardOutputs, c: float) -> torch.Tensor:
    """Adjusted ranking score y - c * sigmoid(y_u) * sigmoid(y_i).

    Modes without direct-effect branches ignore c (their biased score is the
    final score).
    """
    if c < 0:
        raise ValueError("reference constant c must be >= 0")
    if c == 0 or outputs.y_u is None or outputs.y_i is None:
        return outputs.y
    return outputs.y - c * torch.sigmoid(outputs.y_u) * torch.sigmoid(outputs.y_i)


@torch.no_grad()
def score_candidates(model, history, candidates, c: float | None = None, user_idx=None):
    """Rank candidate items for one user history.

    Returns (ranked candidate ids, their adjusted scores in ranked order).
    Ties break toward the lower item index. The history is truncated to the
    model's most recent ``max_len`` items.
    """
    history = np.asarray(history, dtype=np.int64)
    candidates = np.ascontiguousarray(candidates, dtype=np.int64)
    if candidates.size == 0:
        raise ValueError("candidate set must be non-empty")
    num_items = model.item_emb.num_items
    if (candidates >= num_items).any() or (candidates < 0).any():
        raise IndexError("candidate item index out of range")
    if history.size == 0:
        raise ValueError("history must contain at least one item")
    if c is None:
        c = model.config.inference_c
    history = history[-model.config.max_len :]
    device = next(model.parameters()).device
    seq = torch.as_tensor(history, device=device).unsqueeze(0)
    lengths = torch.tensor([history.size], device=device)
    cand = torch.as_tensor(candidates, device=device).unsqueeze(0)
    was_training = model.training
    model.eval()
    try:
        uidx = None
        if user_idx is not None:
            uidx = torch.tensor([user_idx], device=device)
        outputs = model.score(seq, lengths, cand, uidx)
        scores = counterfactual_score(outputs, c).squeeze(0).cpu().numpy()
    finally:
        if was_training:
            model.train()
    order = np.lexsort((candidates, -scores))
    return candidates[order], scores[order]
