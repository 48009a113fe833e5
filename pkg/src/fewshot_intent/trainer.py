"""Episodic meta-training: composite loss, Adam, the training loop, and a
finite-difference gradient audit of the full model.

Every episode optimizes

    L = L_class + alpha * L_self + beta * L_uniform + gamma * L_discr

where L_self and L_uniform average over *all* encoded instances in the
episode (supports and queries alike) and L_discr averages the signed
query/support divergence over every pair, driven by the episode's current
predictions.  Components whose weight is zero are skipped and logged as 0,
so the logged identity total = l_class + a*l_self + b*l_uniform + g*l_discr
holds either way.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import GradientCheckReport, ParamStore, gradient_check
from .classifier import episode_loss
from .corpus import LabeledUtterance
from .embeddings import Vocabulary, synthesize_vectors
from .episodes import Episode, EpisodeSpec, episode_rng, sample_training_episode
from .model import Model, ModelConfig, init_params, save_checkpoint
from .regularizers import (RegularizerWeights, episode_discr_loss,
                           self_attn_penalty, uniform_penalty)

PRECISIONS = (32, 64)
DIVERGENCE_LIMIT = 1e6
LOG_COLUMNS = ("episode", "total", "l_class", "l_self_attn", "l_uniform",
               "l_discr", "accuracy")


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig
    reg: RegularizerWeights
    lr: float = 1e-3
    n_episodes: int = 500
    C: int = 2
    K: int = 5
    NQ: int = 20
    seed: int = 0
    precision: int = 64
    checkpoint_every: int = 100

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.n_episodes < 1:
            raise ValueError("n_episodes must be >= 1")
        if self.C < 2:
            raise ValueError("C must be >= 2")
        if self.K < 1 or self.NQ < 1:
            raise ValueError("K and NQ must be >= 1")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {PRECISIONS}")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(),
                "reg": {"alpha": self.reg.alpha, "beta": self.reg.beta,
                        "gamma": self.reg.gamma, "kl_cap": self.reg.kl_cap},
                "lr": self.lr, "n_episodes": self.n_episodes, "C": self.C,
                "K": self.K, "NQ": self.NQ, "seed": self.seed,
                "precision": self.precision,
                "checkpoint_every": self.checkpoint_every}


@dataclass
class LossBreakdown:
    total: ad.Tensor
    components: dict[str, float]  # raw (unweighted) component values
    predictions: np.ndarray
    accuracy: float


def _guarded(name: str, fn):
    # Non-finite values surface as FloatingPointError deep inside an op;
    # re-raise with the loss component's name so aborts are attributable.
    try:
        value = fn()
    except FloatingPointError as exc:
        raise FloatingPointError(f"{name} went non-finite: {exc}") from exc
    if not np.all(np.isfinite(value.data)):
        raise FloatingPointError(f"{name} is non-finite")
    return value


def total_loss(model: Model, episode: Episode, reg: RegularizerWeights) -> LossBreakdown:
    """Composite episode loss with per-component bookkeeping."""
    support_tokens = [[u.tokens for u in row] for row in episode.support]
    query_tokens = [utt.tokens for utt, _ in episode.queries]
    labels = np.array([ci for _, ci in episode.queries])
    out = model.run_episode(support_tokens, query_tokens)

    l_class = _guarded("l_class", lambda: episode_loss(out.scores, labels))
    total = l_class
    comps = {"l_class": float(l_class.data), "l_self_attn": 0.0,
             "l_uniform": 0.0, "l_discr": 0.0}

    flat_sup = [e for row in out.support_encodings for e in row]
    all_encs = flat_sup + list(out.query_encodings)
    if reg.alpha != 0.0:
        l_self = _guarded("l_self_attn", lambda: ad.mean(
            ad.stack([self_attn_penalty(e.A) for e in all_encs])))
        comps["l_self_attn"] = float(l_self.data)
        total = total + reg.alpha * l_self
    if reg.beta != 0.0:
        l_unif = _guarded("l_uniform", lambda: ad.mean(
            ad.stack([uniform_penalty(e.A) for e in all_encs])))
        comps["l_uniform"] = float(l_unif.data)
        total = total + reg.beta * l_unif
    if reg.gamma != 0.0:
        support_labels = [ci for ci, row in enumerate(episode.support) for _ in row]
        l_discr = _guarded("l_discr", lambda: episode_discr_loss(
            [e.A for e in out.query_encodings], out.predictions,
            [e.A for e in flat_sup], support_labels, reg.kl_cap))
        comps["l_discr"] = float(l_discr.data)
        total = total + reg.gamma * l_discr

    accuracy = float(np.mean(out.predictions == labels))
    return LossBreakdown(total=total, components=comps,
                         predictions=out.predictions, accuracy=accuracy)


class Adam(object):
    """Adam over the flat parameter vector; one step per episode."""

    def __init__(self, params: ParamStore, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(params.size)
        self.v = np.zeros(params.size)
        self.t = 0

    def step(self):
        g = self.params.grad_flat()
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        self.params.set_flat(
            self.params.flat() - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)

    def append(self, episode: int, total: float, components: dict, accuracy: float):
        row = {"episode": episode, "total": total, "accuracy": accuracy}
        row.update(components)
        self.rows.append(row)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: repr(v) if isinstance(v, float) else v
                                 for k, v in row.items()})


def train(config: TrainConfig, train_pool, table, vocab,
          checkpoint_dir=None) -> tuple[Model, TrainLog]:
    """Meta-train on C-way K-shot episodes sampled from `train_pool`.

    One Adam step per episode; raises FloatingPointError if the loss or any
    parameter diverges (NaN or magnitude beyond 1e6).  When `checkpoint_dir`
    is given, parameters are snapshotted every `checkpoint_every` episodes
    and at the end (checkpoint.bin / checkpoint.json).
    """
    dtype = np.float64 if config.precision == 64 else np.float32
    params = init_params(config.model, config.seed, dtype=dtype)
    model = Model(config.model, params, table, vocab)
    spec = EpisodeSpec(C=config.C, K=config.K, NQ=config.NQ,
                       label_pool="seen", seed=config.seed)
    opt = Adam(params, config.lr)
    log = TrainLog()

    for ep in range(config.n_episodes):
        rng = episode_rng(config.seed, ep)
        episode = sample_training_episode(train_pool, spec, rng)
        params.zero_grad()
        breakdown = total_loss(model, episode, config.reg)
        total_val = float(breakdown.total.data)
        log.append(ep, total_val, breakdown.components, breakdown.accuracy)
        if not math.isfinite(total_val) or abs(total_val) > DIVERGENCE_LIMIT:
            raise FloatingPointError(
                f"training diverged at episode {ep}: total loss {total_val!r}")
        breakdown.total.backward()
        opt.step()
        flat = params.flat()
        if not np.all(np.isfinite(flat)) or np.max(np.abs(flat)) > DIVERGENCE_LIMIT:
            raise FloatingPointError(
                f"training diverged at episode {ep}: parameter magnitude "
                f"exceeds {DIVERGENCE_LIMIT:g}")
        if checkpoint_dir is not None and (ep + 1) % config.checkpoint_every == 0 \
                and ep + 1 < config.n_episodes:
            _snapshot(model, config, checkpoint_dir, ep + 1,
                      f"checkpoint_ep{ep + 1:05d}")
    if checkpoint_dir is not None:
        _snapshot(model, config, checkpoint_dir, config.n_episodes, "checkpoint")
    return model, log


def _snapshot(model, config, outdir, episode, stem):
    os.makedirs(outdir, exist_ok=True)
    save_checkpoint(model, os.path.join(outdir, stem + ".bin"),
                    os.path.join(outdir, stem + ".json"),
                    extra={"episode": episode, "train": config.to_dict()})


def tiny_train_config(match_level: str = "head") -> TrainConfig:
    """Smallest configuration that still exercises every code path: used by
    the gradient audit, where full finite differencing must stay cheap."""
    return TrainConfig(
        model=ModelConfig(d_w=7, d_h=8, d_a=5, r=2, perspectives=3,
                          match_level=match_level),
        reg=RegularizerWeights(alpha=1.0, beta=1.0, gamma=1.0),
        lr=1e-3, n_episodes=1, C=2, K=2, NQ=2)


def check_model_gradients(config: TrainConfig | None = None, seed: int = 0,
                          min_coords: int = 64) -> GradientCheckReport:
    """Finite-difference audit of d(total loss)/d(theta) for every parameter
    tensor on one small synthetic episode (all regularizers active)."""
    if config is None:
        config = tiny_train_config()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    words = [f"w{i}" for i in range(12)]

    def make_utt(label: str) -> LabeledUtterance:
        T = int(rng.integers(3, 7))
        idx = rng.integers(0, len(words), size=T)
        return LabeledUtterance(tokens=tuple(words[i] for i in idx), label=label)

    classes = [f"cls{c}" for c in range(config.C)]
    episode = Episode(
        classes=classes,
        support=[[make_utt(c) for _ in range(config.K)] for c in classes],
        queries=[(make_utt(classes[qi % config.C]), qi % config.C)
                 for qi in range(config.NQ)])

    vocab = Vocabulary(words)
    table = synthesize_vectors(vocab, config.model.d_w, seed=seed)
    params = init_params(config.model, config.seed)
    model = Model(config.model, params, table, vocab)
    return gradient_check(lambda p: total_loss(model, episode, config.reg).total,
                          params, min_coords=min_coords)
