"""Episode sampling for meta-training and evaluation.

Training episodes are C-way K-shot draws from the seen-class pool; GFSL
evaluation episodes draw classes from the joint label space (forcing a
seen/novel mix whenever both are available), take novel supports from the
pre-sampled shots, and queries from the joint test pool.  Non-episodic
evaluation uses the fixed shots as supports over a sorted label list.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import DatasetSplits, LabeledUtterance

LABEL_POOLS = ("seen", "novel", "joint")
GFSL_MAX_ATTEMPTS = 100


@dataclass(frozen=True)
class EpisodeSpec:
    C: int
    K: int
    NQ: int = 20
    label_pool: str = "seen"
    seed: int = 0

    def __post_init__(self):
        if self.C < 2:
            raise ValueError("C must be >= 2")
        if self.K < 1 or self.NQ < 1:
            raise ValueError("K and NQ must be >= 1")
        if self.label_pool not in LABEL_POOLS:
            raise ValueError(f"label_pool must be one of {LABEL_POOLS}")


@dataclass
class Episode:
    classes: list[str]
    support: list[list[LabeledUtterance]]  # C lists of K
    queries: list[tuple[LabeledUtterance, int]]  # (utterance, class index)


def episode_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, episode index) for reproducible sampling."""
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _group_by_label(pool) -> dict[str, list[LabeledUtterance]]:
    groups: dict[str, list[LabeledUtterance]] = {}
    for utt in pool:
        groups.setdefault(utt.label, []).append(utt)
    return groups


def sample_training_episode(train_pool, spec: EpisodeSpec,
                            rng: np.random.Generator) -> Episode:
    """C-way K-shot episode from the seen pool; queries come from the
    remaining utterances of the sampled classes, disjoint from supports."""
    groups = _group_by_label(train_pool)
    labels = sorted(groups)
    if spec.C > len(labels):
        raise ValueError(f"episode needs C={spec.C} classes, pool has {len(labels)}")
    picked = rng.choice(len(labels), size=spec.C, replace=False)
    classes = [labels[i] for i in picked]

    support: list[list[LabeledUtterance]] = []
    remaining: list[tuple[LabeledUtterance, int]] = []
    for ci, label in enumerate(classes):
        utts = groups[label]
        if len(utts) < spec.K + 1:
            raise ValueError(f"class {label!r} has {len(utts)} utterances, needs K+1={spec.K + 1}")
        order = rng.permutation(len(utts))
        support.append([utts[j] for j in order[:spec.K]])
        remaining.extend((utts[j], ci) for j in order[spec.K:])
    if len(remaining) < spec.NQ:
        raise ValueError(f"only {len(remaining)} query candidates for NQ={spec.NQ}")
    q_idx = rng.choice(len(remaining), size=spec.NQ, replace=False)
    return Episode(classes=classes, support=support,
                   queries=[remaining[j] for j in q_idx])


def sample_gfsl_episode(train_pool, splits: DatasetSplits, spec: EpisodeSpec,
                        rng: np.random.Generator) -> Episode:
    """Episode over the joint label space for generalized few-shot evaluation.

    Classes are uniform over C-subsets of Y_j subject to containing at least
    one seen and one novel class when both exist (rejection sampling, which
    is exactly the constrained-uniform distribution).  Novel supports are the
    fixed shots; seen supports are drawn from train_pool; queries come from
    joint_test.  Class sets whose joint-test utterances cannot fill NQ
    queries are resampled, up to 100 attempts.
    """
    seen = set(splits.seen_labels)
    novel = set(splits.novel_labels)
    labels = sorted(seen | novel)
    if spec.C > len(labels):
        raise ValueError(f"episode needs C={spec.C} classes, joint space has {len(labels)}")
    train_groups = _group_by_label(train_pool)
    query_groups = _group_by_label(splits.joint_test)
    need_mix = bool(seen) and bool(novel)

    for _ in range(GFSL_MAX_ATTEMPTS):
        picked = rng.choice(len(labels), size=spec.C, replace=False)
        classes = [labels[i] for i in picked]
        if need_mix and (not any(c in seen for c in classes)
                         or not any(c in novel for c in classes)):
            continue
        candidates = [(utt, ci) for ci, label in enumerate(classes)
                      for utt in query_groups.get(label, [])]
        if len(candidates) < spec.NQ:
            continue
        support = []
        for label in classes:
            if label in novel:
                shots = splits.support_shots[label]
                if len(shots) != spec.K:
                    raise ValueError(f"splits carry {len(shots)} shots for {label!r}, episode needs K={spec.K}")
                support.append(list(shots))
            else:
                utts = train_groups.get(label, [])
                if len(utts) < spec.K:
                    raise ValueError(f"seen class {label!r} has {len(utts)} training utterances, needs K={spec.K}")
                order = rng.permutation(len(utts))
                support.append([utts[j] for j in order[:spec.K]])
        q_idx = rng.choice(len(candidates), size=spec.NQ, replace=False)
        return Episode(classes=classes, support=support,
                       queries=[candidates[j] for j in q_idx])
    raise ValueError(f"could not assemble a GFSL episode with NQ={spec.NQ} queries "
                     f"after {GFSL_MAX_ATTEMPTS} attempts")


def nonepisodic_tasks(splits: DatasetSplits, space: str):
    """Fixed-label-space evaluation task: (sorted labels, K-shot supports,
    test pool in file order).  space selects Y_n or Y_j."""
    if space == "novel":
        labels = splits.novel_labels
        test = splits.novel_test
    elif space == "joint":
        labels = sorted(set(splits.seen_labels) | set(splits.novel_labels))
        test = splits.joint_test
    else:
        raise ValueError("space must be 'novel' or 'joint'")
    supports = {}
    K = splits.spec.shots_K
    for label in labels:
        shots = splits.support_shots.get(label, [])
        if len(shots) != K:
            raise ValueError(f"label {label!r} has {len(shots)} shots, splits were built with K={K}")
        supports[label] = list(shots)
    return labels, supports, test
