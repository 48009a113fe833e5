"""Attention regularizers: head diversity, word coverage, and a signed
query/support divergence driven by predicted labels.

All three consume attention matrices A (r heads x T words, rows summing
to 1).  The first two accept leading batch axes and return one penalty per
instance; the discriminative penalty is defined per (query, support) pair
because it pads distributions to a common length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

SMOOTH_EPS = 1e-8


@dataclass(frozen=True)
class RegularizerWeights:
    alpha: float
    beta: float
    gamma: float
    kl_cap: float = 10.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("regularizer weights must be non-negative")
        if not self.kl_cap > 0:
            raise ValueError("kl_cap must be positive")


def self_attn_penalty(A: Tensor) -> Tensor:
    """|| A A^T - I ||_F^2 per instance: 0 iff heads attend orthonormally."""
    r = A.shape[-2]
    axes = tuple(range(A.ndim - 2)) + (A.ndim - 1, A.ndim - 2)
    G = ad.matmul(A, ad.transpose(A, axes)) - Tensor(np.eye(r))
    return ad.sum_(G * G, axis=(-2, -1))


def word_distribution(A: Tensor) -> Tensor:
    """Head-averaged attention: p = (sum_i A[i, :]) / r, a distribution over words."""
    return ad.mean(A, axis=-2)


def uniform_penalty(A: Tensor) -> Tensor:
    """KL(p || U_T) for the head-averaged word distribution; in [0, ln T]."""
    T = A.shape[-1]
    p = word_distribution(A)
    return ad.sum_(ad.xlogx(p), axis=-1) + math.log(T)


def _smoothed(p: Tensor, width: int) -> Tensor:
    if p.shape[-1] < width:
        p = ad.concat([p, Tensor(np.zeros(width - p.shape[-1]))], axis=-1)
    p = p + SMOOTH_EPS
    return p / ad.sum_(p)


def discr_penalty(A_q: Tensor, A_s: Tensor, same_label: bool, kl_cap: float) -> Tensor:
    """Signed, capped KL between query and support word distributions.

    The two distributions are zero-padded to a common length, smoothed by
    1e-8 and renormalized; d = min(KL(p_q || p_s), kl_cap).  Returns +d when
    the pair shares a label (pull together) and -d otherwise (push apart).
    """
    width = max(A_q.shape[-1], A_s.shape[-1])
    p_q = _smoothed(word_distribution(A_q), width)
    p_s = _smoothed(word_distribution(A_s), width)
    kl = ad.sum_(p_q * (ad.log(p_q) - ad.log(p_s)))
    d = ad.minimum(kl, Tensor(np.array(kl_cap))) if math.isfinite(kl_cap) else kl
    return d if same_label else -d


def episode_discr_loss(query_A, predicted_labels, support_A, support_labels,
                       kl_cap: float) -> Tensor:
    """Mean signed divergence over every (query, support instance) pair.

    `predicted_labels` are the classifier's current episode predictions
    (already detached — no gradient flows through the argmax); a pair is
    "same" when the query's predicted label equals the support's true label.
    """
    if len(query_A) == 0 or len(support_A) == 0:
        raise ValueError("episode_discr_loss needs at least one query and one support")
    terms = []
    for A_q, pred in zip(query_A, predicted_labels):
        for A_s, true in zip(support_A, support_labels):
            terms.append(discr_penalty(A_q, A_s, bool(pred == true), kl_cap))
    return ad.mean(ad.stack(terms))
