"""Labeled utterance parsing and seen/novel/joint split construction.

A corpus is a list of (tokens, label) records.  Splitting carves a fixed
fraction of every seen class into the joint test pool, removes K support
shots per class (seen shots come out of the training remainder, novel shots
out of the novel pool), and leaves the rest as train_pool / novel_test.
Splits are a pure, seed-deterministic function of (corpus, spec) and can be
persisted to a text manifest of record indices.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LabeledUtterance:
    tokens: tuple[str, ...]
    label: str


@dataclass(frozen=True)
class SplitSpec:
    novel_labels: frozenset[str]
    shots_K: int
    seed: int
    joint_fraction: float = 0.20

    def __post_init__(self):
        object.__setattr__(self, "novel_labels", frozenset(self.novel_labels))
        if not self.novel_labels:
            raise ValueError("novel_labels must be non-empty")
        if not 0.0 < self.joint_fraction < 1.0:
            raise ValueError("joint_fraction must be in (0, 1)")
        if self.shots_K < 1:
            raise ValueError("shots_K must be positive")


@dataclass
class DatasetSplits:
    """Split pools plus the index partition they were built from.

    `indices` maps pool name -> sorted record indices into the source corpus;
    pools are `train`, `joint` (the seen carve-out), `novel` (novel test
    utterances), and `shot`.  joint_test is the composed evaluation pool:
    seen carve-out plus novel_test, in corpus order.
    """

    spec: SplitSpec
    corpus: list[LabeledUtterance]
    indices: dict[str, list[int]]
    support_shots: dict[str, list[LabeledUtterance]] = field(init=False)

    def __post_init__(self):
        shot_by_label: dict[str, list[LabeledUtterance]] = {}
        for i in self.indices["shot"]:
            shot_by_label.setdefault(self.corpus[i].label, []).append(self.corpus[i])
        self.support_shots = shot_by_label

    def _pool(self, name: str) -> list[LabeledUtterance]:
        return [self.corpus[i] for i in self.indices[name]]

    @property
    def train_pool(self) -> list[LabeledUtterance]:
        return self._pool("train")

    @property
    def novel_test(self) -> list[LabeledUtterance]:
        return self._pool("novel")

    @property
    def joint_test(self) -> list[LabeledUtterance]:
        merged = sorted(self.indices["joint"] + self.indices["novel"])
        return [self.corpus[i] for i in merged]

    @property
    def seen_labels(self) -> list[str]:
        return sorted({u.label for u in self.corpus} - self.spec.novel_labels)

    @property
    def novel_labels(self) -> list[str]:
        return sorted(self.spec.novel_labels)


def tokenize(text: str) -> tuple[str, ...]:
    return tuple(text.lower().split())


def parse_dataset(path, format: str) -> list[LabeledUtterance]:
    """Parse a TSV (`text<TAB>label`) or JSONL ({"text","label"}) corpus."""
    if format not in ("tsv", "jsonl"):
        raise ValueError(f"unknown corpus format: {format!r}")
    records: list[LabeledUtterance] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if format == "tsv":
                parts = line.split("\t")
                if len(parts) != 2:
                    raise ValueError(f"{path}:{lineno}: expected text<TAB>label, got {len(parts)} fields")
                text, label = parts
            else:
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as e:
                    raise ValueError(f"{path}:{lineno}: invalid JSON: {e}") from None
                if not isinstance(obj, dict) or not isinstance(obj.get("text"), str) \
                        or not isinstance(obj.get("label"), str):
                    raise ValueError(f"{path}:{lineno}: record needs string fields 'text' and 'label'")
                text, label = obj["text"], obj["label"]
            tokens = tokenize(text)
            if not tokens:
                raise ValueError(f"{path}:{lineno}: empty text after tokenization")
            if not label.strip():
                raise ValueError(f"{path}:{lineno}: empty label")
            records.append(LabeledUtterance(tokens=tokens, label=label))
    return records


def infer_format(path) -> str:
    name = str(path).lower()
    if name.endswith(".jsonl") or name.endswith(".json"):
        return "jsonl"
    return "tsv"


def build_splits(corpus: list[LabeledUtterance], spec: SplitSpec) -> DatasetSplits:
    """Deterministically partition a corpus into train/joint/novel/shot pools.

    Per seen class: floor(joint_fraction * count) utterances go to the joint
    carve-out, K shots are then drawn from the remainder, and the rest stays
    in train_pool.  Per novel class: K shots are drawn, the rest is
    novel_test.  Everything is driven by one seeded RNG over classes in
    sorted label order, so identical (corpus, spec) gives identical splits.
    """
    by_label: dict[str, list[int]] = {}
    for i, utt in enumerate(corpus):
        by_label.setdefault(utt.label, []).append(i)

    unknown = spec.novel_labels - set(by_label)
    if unknown:
        raise ValueError(f"novel labels not present in corpus: {sorted(unknown)}")
    if not set(by_label) - spec.novel_labels:
        raise ValueError("corpus has no seen classes left after removing novel labels")

    min_seen = math.ceil(1.0 / spec.joint_fraction)
    pools: dict[str, list[int]] = {"train": [], "joint": [], "novel": [], "shot": []}
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed]))
    for label in sorted(by_label):
        positions = by_label[label]
        count = len(positions)
        if count < spec.shots_K + 1:
            raise ValueError(f"class {label!r} has {count} utterances; needs at least K+1={spec.shots_K + 1}")
        order = rng.permutation(count)
        shuffled = [positions[j] for j in order]
        if label in spec.novel_labels:
            pools["shot"] += shuffled[:spec.shots_K]
            pools["novel"] += shuffled[spec.shots_K:]
        else:
            if count < min_seen:
                raise ValueError(f"seen class {label!r} has {count} utterances; needs at least {min_seen} "
                                 f"for joint_fraction={spec.joint_fraction}")
            carve = math.floor(spec.joint_fraction * count)
            remainder = shuffled[carve:]
            if len(remainder) < spec.shots_K + 1:
                raise ValueError(f"seen class {label!r} too small for K={spec.shots_K} after the joint carve-out")
            pools["joint"] += shuffled[:carve]
            pools["shot"] += remainder[:spec.shots_K]
            pools["train"] += remainder[spec.shots_K:]

    indices = {name: sorted(ids) for name, ids in pools.items()}
    return DatasetSplits(spec=spec, corpus=corpus, indices=indices)


MANIFEST_POOLS = ("train", "joint", "novel", "shot")


def save_manifest(splits: DatasetSplits, path):
    spec = splits.spec
    lines = [f"# seed={spec.seed} joint_fraction={spec.joint_fraction!r} K={spec.shots_K}"]
    for pool in MANIFEST_POOLS:
        for i in splits.indices[pool]:
            lines.append(f"{pool}\t{i}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_manifest(corpus: list[LabeledUtterance], path) -> DatasetSplits:
    """Rebuild DatasetSplits from a saved manifest over the same corpus."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("# "):
        raise ValueError(f"{path}: missing manifest header")
    header: dict[str, str] = {}
    for item in lines[0][2:].split():
        key, _, value = item.partition("=")
        header[key] = value
    try:
        seed = int(header["seed"])
        joint_fraction = float(header["joint_fraction"])
        shots_K = int(header["K"])
    except (KeyError, ValueError):
        raise ValueError(f"{path}: malformed manifest header: {lines[0]!r}") from None

    indices: dict[str, list[int]] = {pool: [] for pool in MANIFEST_POOLS}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        pool, _, idx_s = line.partition("\t")
        if pool not in indices or not idx_s.isdigit():
            raise ValueError(f"{path}:{lineno}: expected pool<TAB>index, got {line!r}")
        idx = int(idx_s)
        if idx >= len(corpus):
            raise ValueError(f"{path}:{lineno}: index {idx} out of range for corpus of {len(corpus)}")
        indices[pool].append(idx)

    flat = [i for ids in indices.values() for i in ids]
    if len(set(flat)) != len(flat):
        raise ValueError(f"{path}: manifest assigns some record to multiple pools")
    novel_labels = frozenset(corpus[i].label for i in indices["novel"])
    spec = SplitSpec(novel_labels=novel_labels, shots_K=shots_K, seed=seed,
                     joint_fraction=joint_fraction)
    return DatasetSplits(spec=spec, corpus=corpus,
                         indices={k: sorted(v) for k, v in indices.items()})
