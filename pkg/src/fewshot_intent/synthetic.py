"""Synthetic keyword-separable corpora for desk-scale experiments.

Each class owns a few exclusive keyword tokens; every utterance mixes one
to three of its class keywords with shared filler tokens.  The task is
fully learnable from token identity, which makes it a good optimization
sanity check for the whole pipeline.
"""

from __future__ import annotations

import numpy as np

from .corpus import LabeledUtterance


def make_synthetic_corpus(n_classes: int = 8, per_class: int = 40,
                          keywords_per_class: int = 3, n_fillers: int = 12,
                          seed: int = 0) -> list[LabeledUtterance]:
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    fillers = [f"filler{j}" for j in range(n_fillers)]
    corpus: list[LabeledUtterance] = []
    for c in range(n_classes):
        label = f"intent{c}"
        keywords = [f"kw{c}x{i}" for i in range(keywords_per_class)]
        for _ in range(per_class):
            # at least two class keywords per utterance (when available), so
            # any two same-class utterances share evidence even at 1-shot
            lo = min(2, keywords_per_class)
            n_kw = int(rng.integers(lo, keywords_per_class + 1))
            n_fill = int(rng.integers(2, 5))
            kw_idx = rng.choice(keywords_per_class, size=n_kw, replace=False)
            fill_idx = rng.choice(n_fillers, size=n_fill, replace=True)
            tokens = [keywords[i] for i in kw_idx] + [fillers[i] for i in fill_idx]
            order = rng.permutation(len(tokens))
            corpus.append(LabeledUtterance(
                tokens=tuple(tokens[i] for i in order), label=label))
    return corpus
