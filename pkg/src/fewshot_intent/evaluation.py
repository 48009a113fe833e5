"""Evaluation protocols and metrics.

Two protocols share one metric surface: episodic evaluation averages query
accuracy over freshly sampled episodes (and then over seeds), while
non-episodic evaluation scores every test utterance once against the full
label space with fixed K-shot supports.  Joint and novel accuracies combine
into a harmonic mean so that neither seen-class bias nor novel-class
collapse can hide in an average.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .episodes import (EpisodeSpec, episode_rng, sample_gfsl_episode,
                       sample_training_episode)
from .model import Model

MODES = ("episodic", "nonepisodic")


def harmonic_accuracy(s_j: float, s_n: float) -> float:
    """h = 2 * s_j * s_n / (s_j + s_n); undefined when both are zero."""
    if s_j < 0 or s_n < 0:
        raise ValueError("accuracies must be non-negative")
    if s_j + s_n == 0:
        raise ValueError("harmonic accuracy is undefined when both accuracies are zero")
    return 2.0 * s_j * s_n / (s_j + s_n)


def fsl_episode_source(pool, spec: EpisodeSpec):
    """Episodes whose supports and queries are both drawn from `pool`
    (the standard few-shot protocol over a single label space)."""
    return lambda rng: sample_training_episode(pool, spec, rng)


def gfsl_episode_source(train_pool, splits, spec: EpisodeSpec):
    """Generalized few-shot episodes over the joint label space."""
    return lambda rng: sample_gfsl_episode(train_pool, splits, spec, rng)


def _episode_counts(model: Model, episode) -> tuple[int, int]:
    with ad.no_grad():
        out = model.run_episode([[u.tokens for u in row] for row in episode.support],
                                [u.tokens for u, _ in episode.queries])
    labels = np.array([ci for _, ci in episode.queries])
    return int(np.sum(out.predictions == labels)), len(labels)


@dataclass
class EpisodicResult:
    accuracy: float  # percent, mean over seeds
    per_seed: list[float]  # percent
    n_episodes: int
    seeds: list[int]


def evaluate_episodic(model: Model, episode_source, n_episodes: int,
                      seeds, threads: int = 1) -> EpisodicResult:
    """Query accuracy over `n_episodes` per seed, averaged across seeds.

    `episode_source(rng) -> Episode`; episode i of seed s is drawn from the
    stream episode_rng(s, i), so results are reproducible for any thread
    count (workers only change evaluation order, not the episodes).
    """
    seeds = list(seeds)
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    if not seeds:
        raise ValueError("at least one evaluation seed is required")

    def run_one(seed_index):
        seed, i = seed_index
        return _episode_counts(model, episode_source(episode_rng(seed, i)))

    per_seed = []
    for seed in seeds:
        jobs = [(seed, i) for i in range(n_episodes)]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                counts = list(pool.map(run_one, jobs))
        else:
            counts = [run_one(job) for job in jobs]
        correct = sum(c for c, _ in counts)
        total = sum(n for _, n in counts)
        per_seed.append(100.0 * correct / total)
    return EpisodicResult(accuracy=float(np.mean(per_seed)), per_seed=per_seed,
                          n_episodes=n_episodes, seeds=seeds)


@dataclass
class SpaceResult:
    accuracy: float  # percent
    confusion: np.ndarray  # (L, L); rows true label, columns predicted
    labels: list[str]


def evaluate_nonepisodic(model: Model, labels, supports, test,
                         batch_size: int = 32, threads: int = 1) -> SpaceResult:
    """Score every test utterance once against the whole label space.

    Supports are encoded a single time and shared across query batches.
    The confusion matrix is ordered like `labels`; its row sums are the
    per-class test counts and trace/total is the accuracy.
    """
    labels = list(labels)
    test = list(test)
    if len(labels) < 2:
        raise ValueError("non-episodic evaluation needs at least 2 labels")
    if not test:
        raise ValueError("empty test pool")
    index = {label: i for i, label in enumerate(labels)}
    for utt in test:
        if utt.label not in index:
            raise ValueError(f"test label {utt.label!r} is not in the evaluation space")

    with ad.no_grad():
        support_encs = [model.encode_utterances([u.tokens for u in supports[label]])
                        for label in labels]

    def score_chunk(chunk):
        with ad.no_grad():
            encs = model.encode_utterances([u.tokens for u in chunk])
            scores = model.episode_scores(support_encs, encs)
        preds = np.argmax(scores.data, axis=-1)
        conf = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for utt, p in zip(chunk, preds):
            conf[index[utt.label], int(p)] += 1
        return conf

    chunks = [test[i:i + batch_size] for i in range(0, len(test), batch_size)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            mats = list(pool.map(score_chunk, chunks))
    else:
        mats = [score_chunk(c) for c in chunks]
    confusion = np.sum(mats, axis=0)
    accuracy = 100.0 * np.trace(confusion) / confusion.sum()
    return SpaceResult(accuracy=float(accuracy), confusion=confusion, labels=labels)


@dataclass
class MetricsReport:
    """One evaluation run's metrics; accuracies are percentages.

    Fields that a mode does not produce stay None (episode bookkeeping for
    non-episodic runs, confusion matrices for episodic ones) and serialize
    as JSON null, so the key set is identical across modes.
    """
    mode: str
    shots: int
    s_j: float | None = None
    s_n: float | None = None
    h_acc: float | None = None
    n_episodes: int | None = None
    seeds: list[int] | None = None
    confusion: dict | None = None  # space -> {"labels": [...], "matrix": [[...]]}

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    def to_json(self) -> str:
        def pct(v):
            return None if v is None else round(v, 2)
        payload = {"mode": self.mode, "shots": self.shots,
                   "s_j": pct(self.s_j), "s_n": pct(self.s_n),
                   "h_acc": pct(self.h_acc), "n_episodes": self.n_episodes,
                   "seeds": self.seeds, "confusion": self.confusion}
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        def cell(v):
            return "-" if v is None else f"{v:.2f}"
        lines = [f"mode: {self.mode}   shots: {self.shots}",
                 f"{'S_J':>8} {'S_N':>8} {'H':>8}",
                 f"{cell(self.s_j):>8} {cell(self.s_n):>8} {cell(self.h_acc):>8}"]
        return "\n".join(lines) + "\n"


def build_report(mode: str, shots: int, s_j: float | None = None,
                 s_n: float | None = None, n_episodes: int | None = None,
                 seeds=None, results: dict | None = None) -> MetricsReport:
    """Assemble a MetricsReport; h_acc is filled when both accuracies exist.

    `results` maps space name -> SpaceResult and supplies the confusion
    matrices for non-episodic runs.
    """
    h_acc = None
    if s_j is not None and s_n is not None:
        h_acc = harmonic_accuracy(s_j, s_n)
    confusion = None
    if results:
        confusion = {space: {"labels": res.labels,
                             "matrix": res.confusion.tolist()}
                     for space, res in sorted(results.items())}
    return MetricsReport(mode=mode, shots=shots, s_j=s_j, s_n=s_n, h_acc=h_acc,
                         n_episodes=n_episodes,
                         seeds=list(seeds) if seeds is not None else None,
                         confusion=confusion)
