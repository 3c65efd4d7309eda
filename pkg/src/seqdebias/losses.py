"""Training objectives: stabilized BCE, IPW-reweighted BCE, orthogonality
penalties, pairwise ranking loss and the weighted multi-task combination.

Every loss sums over the supplied batch elements; the training loop divides by
the example count so gradients come from the batch mean.
"""

from __future__ import annotations

import torch
from torch.nn import functional as F

from .config import LossWeights

ZERO_NORM_GUARD = 1e-12


def bce(scores: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """-sum[y*ln(sigmoid(s)) + (1-y)*ln(1-sigmoid(s))], numerically stable.

    Shares its exact floating-point path with ``ipw_bce`` so that unit
    propensities reduce that loss to this one bit-for-bit.
    """
    labels = labels.to(scores.dtype)
    pos_term = -F.logsigmoid(scores) * labels
    neg_term = -F.logsigmoid(-scores) * (1.0 - labels)
    return (pos_term + neg_term).sum()


def ipw_bce(
    scores: torch.Tensor,
    labels: torch.Tensor,
    theta_plus: torch.Tensor,
    theta_minus: torch.Tensor,
) -> torch.Tensor:
    """BCE with per-sample inverse-propensity weights for positives/negatives.

    With all-unit propensities this equals ``bce`` bit-for-bit.
    """
    labels = labels.to(scores.dtype)
    pos_term = -F.logsigmoid(scores) * labels / theta_plus
    neg_term = -F.logsigmoid(-scores) * (1.0 - labels) / theta_minus
    return (pos_term + neg_term).sum()


def orthogonality(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean absolute cosine similarity over a batch of vector pairs.

    Pairs where either vector has (near-)zero norm contribute 0, so padding
    rows never produce NaN.
    """
    na = a.norm(dim=-1)
    nb = b.norm(dim=-1)
    valid = (na > ZERO_NORM_GUARD) & (nb > ZERO_NORM_GUARD)
    denom = (na * nb).clamp_min(ZERO_NORM_GUARD)
    cos = (a * b).sum(dim=-1) / denom
    cos = torch.where(valid, cos, torch.zeros_like(cos))
    return cos.abs().mean()


def bpr_pairwise(
    pos_scores: torch.Tensor,
    neg_scores: torch.Tensor,
    pos_theta_plus: torch.Tensor | None = None,
) -> torch.Tensor:
    """-sum ln(sigmoid(s_pos - s_neg)); optional 1/theta+ pair weights."""
    loss = -F.logsigmoid(pos_scores - neg_scores)
    if pos_theta_plus is not None:
        loss = loss / pos_theta_plus
    return loss.sum()


def total_loss(
    main: torch.Tensor,
    interest: torch.Tensor,
    conformity: torch.Tensor,
    item: torch.Tensor,
    ortho_user: torch.Tensor,
    ortho_item: torch.Tensor,
    weights: LossWeights,
    variant: str = "dcr",
) -> torch.Tensor:
    """main + alpha*(interest + conformity) + beta*item + gamma*(orthos).

    var1 disables the two auxiliary match losses by forcing alpha to 0.
    """
    alpha = 0.0 if variant == "var1" else weights.alpha
    return (
        main
        + alpha * (interest + conformity)
        + weights.beta * item
        + weights.gamma * (ortho_user + ortho_item)
    )
