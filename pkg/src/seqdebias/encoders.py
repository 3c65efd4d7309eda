"""Sequential backbones: recurrent, dilated causal conv and self-attention.

All encoders map an embedded sequence (B, L, d) plus a validity mask to
per-position states (B, L, d), where the state at position t summarizes items
1..t and is used to predict the item at t+1. Sequences are right-padded;
trailing pad positions produce garbage states that callers must never read.
Causality is exact: the state at position t never depends on positions > t.
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from .config import ConfigError, ModelConfig


def last_state(states: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    """Gather the state at each sequence's last valid position."""
    if (lengths < 1).any():
        raise ValueError("encoders require at least one history item")
    idx = (lengths - 1).view(-1, 1, 1).expand(-1, 1, states.size(-1))
    return states.gather(1, idx).squeeze(1)


class RecurrentEncoder(nn.Module):
    """Two stacked GRU layers; per-step top-layer states."""

    def __init__(self, dim: int, num_layers: int = 2, dropout: float = 0.2):
        super().__init__()
        self.gru = nn.GRU(
            dim,
            dim,
            num_layers=num_layers,
            batch_first=True,
            dropout=dropout if num_layers > 1 else 0.0,
        )

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        out, _ = self.gru(x)
        return out


class CausalConvBlock(nn.Module):
    """Residual block with two causal dilated convs (dilation d, then 2d)."""

    def __init__(self, channels: int, kernel_size: int, dilation: int):
        super().__init__()
        self.conv1 = nn.Conv1d(channels, channels, kernel_size, dilation=dilation)
        self.ln1 = nn.LayerNorm(channels, eps=1e-8)
        self.conv2 = nn.Conv1d(channels, channels, kernel_size, dilation=dilation * 2)
        self.ln2 = nn.LayerNorm(channels, eps=1e-8)
        self.kernel_size = kernel_size
        self.dilation = dilation

    def _causal_conv(self, conv, x, dilation):
        # left-pad so the conv at position t only sees positions <= t
        pad = (self.kernel_size - 1) * dilation
        h = F.pad(x.transpose(1, 2), (pad, 0))
        return conv(h).transpose(1, 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.ln1(self._causal_conv(self.conv1, x, self.dilation)))
        h = F.relu(self.ln2(self._causal_conv(self.conv2, h, self.dilation * 2)))
        return x + h


class DilatedConvEncoder(nn.Module):
    """Stack of residual causal conv blocks with repeated dilation cycle."""

    def __init__(
        self,
        dim: int,
        kernel_size: int = 3,
        dilations=(1, 2, 4, 8, 1, 2, 4, 8),
        dropout: float = 0.2,
    ):
        super().__init__()
        self.blocks = nn.ModuleList(
            CausalConvBlock(dim, kernel_size, d) for d in dilations
        )
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        h = x
        for block in self.blocks:
            h = block(h)
        return self.dropout(h)


class SelfAttentionBlock(nn.Module):
    def __init__(self, dim: int, num_heads: int, dropout: float):
        super().__init__()
        self.attn = nn.MultiheadAttention(dim, num_heads, dropout=dropout, batch_first=True)
        self.ln1 = nn.LayerNorm(dim, eps=1e-8)
        self.ln2 = nn.LayerNorm(dim, eps=1e-8)
        self.ff = nn.Sequential(
            nn.Linear(dim, dim),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(dim, dim),
            nn.Dropout(dropout),
        )

    def forward(self, x: torch.Tensor, causal_mask: torch.Tensor) -> torch.Tensor:
        h, _ = self.attn(x, x, x, attn_mask=causal_mask, need_weights=False)
        x = self.ln1(x + h)
        return self.ln2(x + self.ff(x))


class SelfAttentionEncoder(nn.Module):
    """Transformer encoder with a lower-triangular mask and learned positions."""

    def __init__(
        self,
        dim: int,
        max_len: int,
        num_layers: int = 2,
        num_heads: int = 1,
        dropout: float = 0.2,
    ):
        super().__init__()
        self.pos_emb = nn.Embedding(max_len, dim)
        self.emb_dropout = nn.Dropout(dropout)
        self.blocks = nn.ModuleList(
            SelfAttentionBlock(dim, num_heads, dropout) for _ in range(num_layers)
        )
        self.max_len = max_len

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        length = x.size(1)
        if length > self.max_len:
            raise ValueError(f"sequence length {length} exceeds max_len {self.max_len}")
        positions = torch.arange(length, device=x.device)
        h = x + self.pos_emb(positions)
        h = self.emb_dropout(h) * mask.unsqueeze(-1)
        causal = torch.triu(
            torch.ones(length, length, dtype=torch.bool, device=x.device), diagonal=1
        )
        for block in self.blocks:
            h = block(h, causal) * mask.unsqueeze(-1)
        return h


def make_encoder(config: ModelConfig) -> nn.Module:
    """Fresh encoder instance of the configured backbone kind."""
    d = config.embedding_dim
    if config.backbone == "recurrent":
        return RecurrentEncoder(d, config.num_layers, config.dropout)
    if config.backbone == "dilated_conv":
        return DilatedConvEncoder(
            d, config.kernel_size, config.dilations, config.dropout
        )
    if config.backbone == "self_attention":
        return SelfAttentionEncoder(
            d, config.max_len, config.num_layers, config.num_heads, config.dropout
        )
    raise ConfigError(f"unknown backbone {config.backbone!r}")


class ItemEmbeddings(nn.Module):
    """Shared item/sequence embedding table with a frozen zero padding row.

    Dense item indices are 0..M-1; the padding index is M.
    """

    def __init__(self, num_items: int, dim: int):
        super().__init__()
        self.num_items = num_items
        self.pad_index = num_items
        self.table = nn.Embedding(num_items + 1, dim, padding_idx=self.pad_index)
        nn.init.normal_(self.table.weight, std=0.02)
        with torch.no_grad():
            self.table.weight[self.pad_index].zero_()

    def forward(self, indices: torch.Tensor) -> torch.Tensor:
        if (indices > self.pad_index).any() or (indices < 0).any():
            raise IndexError("item index out of range")
        return self.table(indices)


class PreferenceMerge(nn.Module):
    """Combine dynamic sequence preference with a static user vector.

    Identity mode returns the dynamic preference unchanged; mlp mode runs a
    two-layer perceptron over the concatenation.
    """

    def __init__(self, mode: str, dim: int, user_dim: int = 0, hidden: int = 50):
        super().__init__()
        if mode not in ("identity", "mlp"):
            raise ConfigError(f"unknown merge mode {mode!r}")
        self.mode = mode
        if mode == "mlp":
            self.net = nn.Sequential(
                nn.Linear(dim + user_dim, hidden),
                nn.ReLU(),
                nn.Linear(hidden, dim),
            )

    def forward(self, dynamic: torch.Tensor, user_static=None) -> torch.Tensor:
        if self.mode == "identity":
            return dynamic
        if user_static is None:
            raise ConfigError("merge_mode='mlp' requires a user vector")
        if user_static.dim() < dynamic.dim():
            user_static = user_static.unsqueeze(1).expand(*dynamic.shape[:-1], -1)
        return self.net(torch.cat([dynamic, user_static], dim=-1))
