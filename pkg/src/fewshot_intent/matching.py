"""Multi-perspective matching between encoded instances and Bi-LSTM
aggregation of the match sequences into fixed-size enhanced vectors.

Matching is directional (source -> target) and per direction of the
encoder (forward/backward halves of the head vectors).  Four matchers are
supported; each contributes l weighted-cosine components per head, laid out
head_wise | max_attentive | attentive | max_pool.  Disabling matchers
shrinks the row width to (#enabled)*l.  Every function takes leading batch
axes, so one code path serves both single pairs and batched episodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .encoder import EncodedInstance

GUARD_EPS = 1e-8

# column-block order within a match row, and the W-slot pair (fwd, bwd)
# each matcher reads
MATCHER_ORDER = ("head_wise", "max_attentive", "attentive", "max_pool")
WEIGHT_SLOTS = {"head_wise": (1, 2), "max_pool": (3, 4),
                "attentive": (5, 6), "max_attentive": (7, 8)}


@dataclass
class MatchSequence:
    forward: Tensor   # (..., rows, width)
    backward: Tensor  # (..., rows, width)


def normalize_matchers(matchers) -> tuple[str, ...]:
    chosen = tuple(m for m in MATCHER_ORDER if m in set(matchers))
    if len(chosen) != len(set(matchers)):
        unknown = set(matchers) - set(MATCHER_ORDER)
        raise ValueError(f"unknown matchers: {sorted(unknown)}")
    if not chosen:
        raise ValueError("at least one matcher must be enabled")
    return chosen


def init_matching_params(store: ParamStore, rng, l: int, d_h: int, matchers):
    bound = 1.0 / np.sqrt(d_h)
    for matcher in normalize_matchers(matchers):
        for slot in WEIGHT_SLOTS[matcher]:
            store.add(f"match.W{slot}", rng.uniform(-bound, bound, size=(l, d_h)))


def init_aggregator_params(store: ParamStore, rng, in_width: int, d_h: int):
    bound = 1.0 / np.sqrt(d_h)
    for direction in ("fwd", "bwd"):
        W = rng.uniform(-bound, bound, size=(in_width + d_h, 4 * d_h))
        b = rng.uniform(-bound, bound, size=4 * d_h)
        b[d_h:2 * d_h] = 1.0
        store.add(f"agg.{direction}.W", W)
        store.add(f"agg.{direction}.b", b)


def multi_perspective(v1: Tensor, v2: Tensor, W: Tensor) -> Tensor:
    """Component k = cosine(W_k o v1, W_k o v2); (..., d) x (..., d) -> (..., l)."""
    return ad.cosine(W * v1[..., None, :], W * v2[..., None, :])


def attentive_reps(s_set: Tensor, q_set: Tensor) -> Tensor:
    """Cosine-weighted sums of target vectors, one representative per source row.

    beta[i, j] = cosine(s_i, q_j); rep_i = sum_j beta[i, j] q_j / sum_j beta[i, j],
    the denominator nudged by +/- 1e-8 away from zero (sign-preserving) since
    cosines may cancel.
    """
    beta = ad.cosine(s_set[..., :, None, :], q_set[..., None, :, :])  # (..., n_s, n_q)
    num = ad.matmul(beta, q_set)
    den = ad.sum_(beta, axis=-1, keepdims=True)
    guard = Tensor(np.where(den.data >= 0, GUARD_EPS, -GUARD_EPS))
    return num / (den + guard)


def match_direction(s_set: Tensor, q_set: Tensor, hw_target: Tensor,
                    weights: dict[str, Tensor], matchers) -> Tensor:
    """One direction's match rows: (..., n_s, d) vs (..., n_q, d) -> (..., n_s, width).

    `hw_target` is what head_wise compares row-for-row against: the aligned
    target rows at head level, or a single broadcast vector at word level.
    """
    blocks = []
    reps = None
    for matcher in matchers:
        W = weights[matcher]
        if matcher == "head_wise":
            blocks.append(multi_perspective(s_set, hw_target, W))
        elif matcher == "max_pool":
            pairwise = multi_perspective(s_set[..., :, None, :], q_set[..., None, :, :], W)
            blocks.append(ad.max_reduce(pairwise, axis=-2))
        else:
            if reps is None:
                reps = attentive_reps(s_set, q_set)
            if matcher == "attentive":
                blocks.append(multi_perspective(s_set, reps, W))
            else:  # max_attentive
                pairwise = multi_perspective(s_set[..., :, None, :], reps[..., None, :, :], W)
                blocks.append(ad.max_reduce(pairwise, axis=-2))
    return ad.concat(blocks, axis=-1)


def _direction_weights(store: ParamStore, matchers, direction: int) -> dict[str, Tensor]:
    return {m: store[f"match.W{WEIGHT_SLOTS[m][direction]}"] for m in matchers}


def match_heads(source_fwd, source_bwd, target_fwd, target_bwd,
                store: ParamStore, matchers) -> MatchSequence:
    """Head-level matching on direction halves of M; rows = source heads."""
    matchers = normalize_matchers(matchers)
    return MatchSequence(
        forward=match_direction(source_fwd, target_fwd, target_fwd,
                                _direction_weights(store, matchers, 0), matchers),
        backward=match_direction(source_bwd, target_bwd, target_bwd,
                                 _direction_weights(store, matchers, 1), matchers))


def match_all(source: EncodedInstance, target: EncodedInstance,
              store: ParamStore, matchers) -> MatchSequence:
    if source.A.shape[-2] != target.A.shape[-2]:
        raise ValueError("source and target must share the head count r")
    return match_heads(source.m_forward, source.m_backward,
                       target.m_forward, target.m_backward, store, matchers)


def match_words(source: EncodedInstance, target: EncodedInstance,
                store: ParamStore, matchers) -> MatchSequence:
    """Word-level variant: rows are source words; head_wise compares every
    source word against the target's final forward / first backward state."""
    matchers = normalize_matchers(matchers)
    return MatchSequence(
        forward=match_direction(source.h_forward, target.h_forward,
                                target.h_forward[..., -1:, :],
                                _direction_weights(store, matchers, 0), matchers),
        backward=match_direction(source.h_backward, target.h_backward,
                                 target.h_backward[..., :1, :],
                                 _direction_weights(store, matchers, 1), matchers))


def aggregate(seq: MatchSequence, store: ParamStore) -> Tensor:
    """Bi-LSTM over match rows -> (..., 2*d_h) enhanced vector.

    The forward LSTM reads rows 1..n, the backward LSTM reads n..1; the
    output concatenates the two final hidden states.
    """
    fwd_states = ad.lstm_scan(seq.forward, store["agg.fwd.W"], store["agg.fwd.b"])
    bwd_states = ad.lstm_scan(seq.backward, store["agg.bwd.W"], store["agg.bwd.b"],
                              reverse=True)
    return ad.concat([fwd_states[..., -1, :], bwd_states[..., 0, :]], axis=-1)


def enhance_pair(S: EncodedInstance, Q: EncodedInstance, store: ParamStore,
                 matchers, level: str = "head") -> tuple[Tensor, Tensor]:
    """(S_hat, Q_hat): S matched against Q and Q against S, shared parameters."""
    matcher_fn = match_all if level == "head" else match_words
    s_hat = aggregate(matcher_fn(S, Q, store, matchers), store)
    q_hat = aggregate(matcher_fn(Q, S, store, matchers), store)
    return s_hat, q_hat
