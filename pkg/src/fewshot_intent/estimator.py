"""scikit-learn estimator facade.

`fit` meta-trains on episodes sampled from the labeled utterances, `adapt`
retargets the label space with a fresh K-shot support set (no weight
updates), and `predict` / `predict_proba` score utterances against the
current supports.  Inputs are raw strings or pre-tokenized sequences.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from . import autodiff as ad
from .corpus import LabeledUtterance, tokenize
from .embeddings import Vocabulary, synthesize_vectors
from .matching import MATCHER_ORDER
from .model import Model, ModelConfig
from .regularizers import RegularizerWeights
from .trainer import TrainConfig, train


def _as_tokens(x) -> tuple[str, ...]:
    if isinstance(x, str):
        return tokenize(x)
    tokens = tuple(str(t) for t in x)
    if not tokens:
        raise ValueError("utterances must contain at least one token")
    return tokens


class FewShotIntentClassifier(BaseEstimator, ClassifierMixin):
    """Few-shot intent detector with the scikit-learn estimator API.

    Parameters mirror the training configuration: model shape (d_h, d_a,
    r, perspectives, match_level, matchers), regularizer weights (alpha,
    beta, gamma, kl_cap), episode geometry (C, K, NQ), and optimization
    (lr, n_episodes, seed).  Word vectors are synthesized deterministically
    from the vocabulary (embedding_dim, embedding_seed).
    """

    def __init__(self, d_h=16, d_a=8, r=3, perspectives=3, match_level="head",
                 matchers=MATCHER_ORDER, alpha=1.0, beta=1e-2, gamma=1e-2,
                 kl_cap=10.0, C=2, K=2, NQ=8, lr=1e-3, n_episodes=100,
                 seed=0, precision=64, embedding_dim=16, embedding_seed=0):
        self.d_h = d_h
        self.d_a = d_a
        self.r = r
        self.perspectives = perspectives
        self.match_level = match_level
        self.matchers = matchers
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.kl_cap = kl_cap
        self.C = C
        self.K = K
        self.NQ = NQ
        self.lr = lr
        self.n_episodes = n_episodes
        self.seed = seed
        self.precision = precision
        self.embedding_dim = embedding_dim
        self.embedding_seed = embedding_seed

    def _pool(self, X, y) -> list[LabeledUtterance]:
        X = list(X)
        y = list(y)
        if len(X) != len(y):
            raise ValueError(f"X has {len(X)} utterances but y has {len(y)} labels")
        if not X:
            raise ValueError("cannot fit on an empty dataset")
        return [LabeledUtterance(tokens=_as_tokens(x), label=str(label))
                for x, label in zip(X, y)]

    def fit(self, X, y):
        pool = self._pool(X, y)
        labels = sorted({u.label for u in pool})
        if len(labels) < 2:
            raise ValueError("fit needs at least 2 intent classes")
        counts = {lab: sum(u.label == lab for u in pool) for lab in labels}
        thin = [lab for lab, n in counts.items() if n < self.K + 1]
        if thin:
            raise ValueError(f"classes {thin} have fewer than K+1={self.K + 1} "
                             "utterances; reduce K or add data")

        vocab = Vocabulary.from_utterances(pool)
        table = synthesize_vectors(vocab, self.embedding_dim, self.embedding_seed)
        config = TrainConfig(
            model=ModelConfig(d_w=self.embedding_dim, d_h=self.d_h, d_a=self.d_a,
                              r=self.r, perspectives=self.perspectives,
                              match_level=self.match_level,
                              matchers=tuple(self.matchers)),
            reg=RegularizerWeights(self.alpha, self.beta, self.gamma, self.kl_cap),
            lr=self.lr, n_episodes=self.n_episodes,
            C=min(self.C, len(labels)), K=self.K, NQ=self.NQ,
            seed=self.seed, precision=self.precision)
        self.model_, self.train_log_ = train(config, pool, table, vocab)
        # default supports: first K utterances per class, in input order
        taken = {lab: 0 for lab in labels}
        shots = []
        for u in pool:
            if taken[u.label] < self.K:
                taken[u.label] += 1
                shots.append(u)
        self.adapt([u.tokens for u in shots], [u.label for u in shots])
        return self

    def adapt(self, X, y):
        """Point the classifier at a (possibly novel) label space: equal-size
        support sets built from the given utterances, no parameter updates."""
        if not hasattr(self, "model_"):
            raise NotFittedError("fit the estimator before adapt/predict")
        pool = self._pool(X, y)
        groups: dict[str, list[tuple[str, ...]]] = {}
        for u in pool:
            groups.setdefault(u.label, []).append(u.tokens)
        labels = sorted(groups)
        if len(labels) < 2:
            raise ValueError("adapt needs at least 2 classes")
        sizes = {len(v) for v in groups.values()}
        if len(sizes) != 1:
            raise ValueError("adapt needs the same number of support "
                             f"utterances per class, got {sorted(sizes)}")
        self.classes_ = np.array(labels)
        with ad.no_grad():
            self._support_encs = [self.model_.encode_utterances(groups[lab])
                                  for lab in labels]
        return self

    def predict_proba(self, X) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise NotFittedError("fit the estimator before adapt/predict")
        token_seqs = [_as_tokens(x) for x in X]
        if not token_seqs:
            return np.zeros((0, len(self.classes_)))
        with ad.no_grad():
            encs = self.model_.encode_utterances(token_seqs)
            scores = self.model_.episode_scores(self._support_encs, encs)
            probs = ad.softmax(scores, axis=-1)
        return probs.data.copy()

    def predict(self, X) -> np.ndarray:
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=-1)]
