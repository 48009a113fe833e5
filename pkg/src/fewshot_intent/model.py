"""Model assembly: configuration, parameter initialization, and episode
scoring over tokenized utterances.

The episode forward pass comes in two equivalent shapes: a batched path
that matches every (query, support) pair in one tensor program (head level
only — head counts are fixed, so pairs stack), and a per-query loop used at
word level, where row counts vary with utterance length.  A test pins their
equality; the batched path is the default for speed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .classifier import (classify_episode, init_classifier_params,
                         pool_supports)
from .embeddings import EmbeddingTable, Vocabulary, embed_tokens
from .encoder import EncodedInstance, encode, init_encoder_params
from .matching import (MATCHER_ORDER, MatchSequence, aggregate,
                       _direction_weights, match_direction,
                       init_aggregator_params, init_matching_params,
                       normalize_matchers)

MATCH_LEVELS = ("head", "word")


@dataclass(frozen=True)
class ModelConfig:
    d_w: int
    d_h: int = 64
    d_a: int = 20
    r: int = 4
    perspectives: int = 5
    match_level: str = "head"
    matchers: tuple[str, ...] = MATCHER_ORDER

    def __post_init__(self):
        object.__setattr__(self, "matchers", normalize_matchers(self.matchers))
        if self.match_level not in MATCH_LEVELS:
            raise ValueError(f"match_level must be one of {MATCH_LEVELS}")
        for name in ("d_w", "d_h", "d_a", "r", "perspectives"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def match_width(self) -> int:
        return len(self.matchers) * self.perspectives

    def to_dict(self) -> dict:
        return {"d_w": self.d_w, "d_h": self.d_h, "d_a": self.d_a, "r": self.r,
                "perspectives": self.perspectives, "match_level": self.match_level,
                "matchers": list(self.matchers)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{**d, "matchers": tuple(d["matchers"])})


def init_params(config: ModelConfig, seed: int, dtype=np.float64) -> ParamStore:
    """Fresh trainable parameters; creation order fixes the flat layout."""
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    store = ParamStore(dtype=dtype)
    init_encoder_params(store, rng, config.d_w, config.d_h, config.d_a, config.r)
    init_matching_params(store, rng, config.perspectives, config.d_h, config.matchers)
    init_aggregator_params(store, rng, config.match_width, config.d_h)
    init_classifier_params(store, rng, config.d_h)
    return store


@dataclass
class EpisodeOutput:
    scores: Tensor  # (NQ, C)
    predictions: np.ndarray  # (NQ,) argmax class indices, first index on ties
    query_encodings: list[EncodedInstance]
    support_encodings: list[list[EncodedInstance]]  # C lists of K


class Model:
    """Bundles config, parameters, and the frozen embedding table."""

    def __init__(self, config: ModelConfig, params: ParamStore,
                 table: EmbeddingTable, vocab: Vocabulary):
        if table.d_w != config.d_w:
            raise ValueError(f"embedding dim {table.d_w} != config d_w {config.d_w}")
        self.config = config
        self.params = params
        self.table = table
        self.vocab = vocab

    def encode_utterances(self, token_seqs) -> list[EncodedInstance]:
        """Encode a batch of token sequences, bucketing by length so
        equal-length utterances share one tensor program."""
        buckets: dict[int, list[int]] = {}
        for i, toks in enumerate(token_seqs):
            buckets.setdefault(len(toks), []).append(i)
        out: list[EncodedInstance | None] = [None] * len(token_seqs)
        for T in sorted(buckets):
            members = buckets[T]
            X = Tensor(np.stack([
                embed_tokens(token_seqs[i], self.table, self.vocab).data
                for i in members]))
            enc = encode(X, self.params)
            for j, i in enumerate(members):
                out[i] = EncodedInstance(H=enc.H[j], A=enc.A[j], M=enc.M[j])
        return out

    def episode_scores(self, support_encs, query_encs) -> Tensor:
        if self.config.match_level == "head":
            return self._batched_scores(support_encs, query_encs)
        return self._looped_scores(support_encs, query_encs)

    def _looped_scores(self, support_encs, query_encs) -> Tensor:
        rows = [classify_episode(q, support_encs, self.params, self.config.matchers,
                                 self.config.match_level).scores for q in query_encs]
        return ad.stack(rows, axis=0)

    def _batched_scores(self, support_encs, query_encs) -> Tensor:
        C, K = len(support_encs), len(support_encs[0])
        if C < 2:
            raise ValueError("an episode needs at least 2 classes")
        d_h = self.config.d_h
        matchers = self.config.matchers
        store = self.params
        Sm = ad.stack([s.M for row in support_encs for s in row], axis=0)  # (CK, r, 2d)
        Qm = ad.stack([q.M for q in query_encs], axis=0)  # (NQ, r, 2d)
        NQ = Qm.shape[0]
        # pair grid: queries broadcast along axis 0, supports along axis 1
        sup = (Sm[None, :, :, :d_h], Sm[None, :, :, d_h:])  # (1, CK, r, d_h) each
        qry = (Qm[:, None, :, :d_h], Qm[:, None, :, d_h:])  # (NQ, 1, r, d_h) each
        w_dir = (_direction_weights(store, matchers, 0),
                 _direction_weights(store, matchers, 1))

        def pair_grid(src, tgt):
            # match src rows against tgt rows for every (query, support) pair
            seq = MatchSequence(
                forward=match_direction(src[0], tgt[0], tgt[0], w_dir[0], matchers),
                backward=match_direction(src[1], tgt[1], tgt[1], w_dir[1], matchers))
            return aggregate(seq, store)  # (NQ, CK, 2*d_h)

        s_hat = pair_grid(sup, qry)
        q_hat = pair_grid(qry, sup)
        s_hat = ad.reshape(s_hat, (NQ, C, K, 2 * d_h))
        q_c = ad.mean(ad.reshape(q_hat, (NQ, C, K, 2 * d_h)), axis=-2)  # (NQ, C, 2d)
        scores, _, _ = pool_supports(s_hat, q_c, store)
        return scores  # (NQ, C)

    def run_episode(self, support_tokens, query_tokens) -> EpisodeOutput:
        """Encode raw token sequences and score every query against C classes."""
        C, K = len(support_tokens), len(support_tokens[0])
        flat = [toks for row in support_tokens for toks in row] + list(query_tokens)
        encs = self.encode_utterances(flat)
        support_encs = [encs[c * K:(c + 1) * K] for c in range(C)]
        query_encs = encs[C * K:]
        scores = self.episode_scores(support_encs, query_encs)
        return EpisodeOutput(scores=scores,
                             predictions=np.argmax(scores.data, axis=-1),
                             query_encodings=query_encs,
                             support_encodings=support_encs)


def save_checkpoint(model: Model, params_path, meta_path, extra: dict | None = None):
    model.params.save(params_path)
    meta = {"model": model.config.to_dict()}
    if extra:
        meta.update(extra)
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
