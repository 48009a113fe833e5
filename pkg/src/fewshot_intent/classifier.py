"""Attentive support aggregation and the shared-weight class scorer.

For a query Q and class supports S_1..S_K: each pair is enhanced by the
matcher, the per-pair query vectors average into a class-conditioned query
Q_c, supports are pooled by attention weights alpha_k = W9^T ReLU(W10 [S_k
(+) Q_c]), and the class score reuses the same W9/W10 on [pooled (+) Q_c].
Episode probabilities are a softmax over class scores; the loss is the
negative log-probability of the true class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .encoder import EncodedInstance
from .matching import enhance_pair


def init_classifier_params(store: ParamStore, rng, d_h: int):
    b9 = 1.0 / np.sqrt(d_h)
    store.add("cls.W9", rng.uniform(-b9, b9, size=(d_h,)))
    b10 = 1.0 / np.sqrt(4 * d_h)
    store.add("cls.W10", rng.uniform(-b10, b10, size=(d_h, 4 * d_h)))


def scorer(x: Tensor, store: ParamStore) -> Tensor:
    """W9^T ReLU(W10 x) for x (..., 4*d_h) -> (...); used by both Eq. levels."""
    h = ad.relu(ad.matmul(x, ad.transpose(store["cls.W10"])))
    return ad.matmul(h, store["cls.W9"])


def pool_supports(s_hats: Tensor, q_hat_c: Tensor, store: ParamStore):
    """Attention-pool enhanced supports (..., K, 2d_h) against q_hat_c (..., 2d_h).

    Returns (score (...,), pooled support (..., 2d_h), weights (..., K)).
    """
    qb = ad.broadcast_to(q_hat_c[..., None, :], s_hats.shape)
    alpha = scorer(ad.concat([s_hats, qb], axis=-1), store)
    w = ad.softmax(alpha, axis=-1)
    s_pool = ad.sum_(w[..., None] * s_hats, axis=-2)
    score = scorer(ad.concat([s_pool, q_hat_c], axis=-1), store)
    return score, s_pool, w


def score_class(query: EncodedInstance, supports: list[EncodedInstance],
                store: ParamStore, matchers, level: str = "head"):
    """One class's score for one query; returns (score, pooled S, class query)."""
    if not supports:
        raise ValueError("score_class needs at least one support instance")
    pairs = [enhance_pair(S, query, store, matchers, level) for S in supports]
    s_hats = ad.stack([s for s, _ in pairs], axis=0)  # (K, 2*d_h)
    q_hat_c = ad.mean(ad.stack([q for _, q in pairs], axis=0), axis=0)
    score, s_pool, _ = pool_supports(s_hats, q_hat_c, store)
    return score, s_pool, q_hat_c


@dataclass
class ClassScore:
    scores: Tensor  # (C,)
    probabilities: Tensor  # (C,), softmax of scores
    predicted: int  # argmax, lowest index on ties


def classify_episode(query: EncodedInstance, support_sets, store: ParamStore,
                     matchers, level: str = "head") -> ClassScore:
    if len(support_sets) < 2:
        raise ValueError("an episode needs at least 2 classes")
    scores = ad.stack([score_class(query, sup, store, matchers, level)[0]
                       for sup in support_sets])
    return ClassScore(scores=scores, probabilities=ad.softmax(scores, axis=-1),
                      predicted=int(np.argmax(scores.data)))


def classification_loss(score: ClassScore, true_label_index: int) -> Tensor:
    C = score.scores.shape[-1]
    if not 0 <= true_label_index < C:
        raise ValueError(f"true label index {true_label_index} out of range for {C} classes")
    return -ad.log_softmax(score.scores, axis=-1)[true_label_index]


def episode_loss(scores: Tensor, labels) -> Tensor:
    """Mean cross-entropy for batched scores (NQ, C) and integer labels (NQ,)."""
    labels = np.asarray(labels)
    log_probs = ad.log_softmax(scores, axis=-1)
    picked = log_probs[np.arange(len(labels)), labels]
    return -ad.mean(picked)
