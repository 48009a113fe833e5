"""Flat `key = value` run configuration.

One namespace covers data, splits, model shape, regularizer weights,
episode geometry, optimization, and evaluation; a config file sets any
subset and command-line flags override file values.  Unknown keys are
rejected so typos fail loudly, and the effective (fully merged) config is
rendered back out for the audit trail of every run.
"""

from __future__ import annotations

from .corpus import SplitSpec
from .model import ModelConfig
from .regularizers import RegularizerWeights
from .trainer import TrainConfig

DEFAULTS: dict[str, object] = {
    "data.path": "",
    "data.format": "auto",
    "data.novel_labels": "",
    "data.manifest": "",
    "embed.source": "synthetic:16",  # vector file path or synthetic:<d_w>
    "embed.seed": 0,
    "split.k": 5,
    "split.seed": 0,
    "split.joint_fraction": 0.2,
    "model.d_h": 64,
    "model.d_a": 20,
    "model.r": 4,
    "model.perspectives": 5,
    "model.match_level": "head",
    "model.matchers": "head_wise,max_attentive,attentive,max_pool",
    "reg.alpha": 1.0,
    "reg.beta": 1.0,
    "reg.gamma": 1.0,
    "reg.kl_cap": 10.0,
    "episode.c": 2,
    "episode.k": 5,
    "episode.nq": 20,
    "train.lr": 1e-3,
    "train.episodes": 500,
    "train.seed": 0,
    "train.precision": 64,
    "train.checkpoint_every": 100,
    "eval.episodes": 100,
    "eval.seeds": "0,1,2,3,4",
    "eval.batch": 32,
    "out.dir": "runs/default",
}


def _coerce(key: str, value):
    default = DEFAULTS[key]
    if isinstance(value, str) and not isinstance(default, str):
        try:
            return type(default)(value)
        except ValueError:
            raise ValueError(f"config key {key!r} expects "
                             f"{type(default).__name__}, got {value!r}") from None
    if isinstance(default, float) and isinstance(value, int):
        return float(value)
    if not isinstance(value, type(default)):
        raise ValueError(f"config key {key!r} expects {type(default).__name__}, "
                         f"got {type(value).__name__}")
    return value


def parse_config_file(path) -> dict:
    """Read `key = value` lines; '#' starts a comment, blanks are skipped."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line.strip()!r}")
            key, raw = text.split("=", 1)
            key = key.strip()
            if key in values:
                raise ValueError(f"{path}:{lineno}: duplicate config key {key!r}")
            values[key] = raw.strip()
    return values


def parse_overrides(pairs) -> dict:
    """key=value strings from the command line."""
    values: dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"override {pair!r} is not of the form key=value")
        key, raw = pair.split("=", 1)
        values[key.strip()] = raw.strip()
    return values


def make_config(*layers) -> dict:
    """Merge DEFAULTS with override layers (later layers win)."""
    cfg = dict(DEFAULTS)
    for layer in layers:
        for key, value in layer.items():
            if key not in DEFAULTS:
                raise ValueError(f"unknown config key: {key!r}")
            cfg[key] = _coerce(key, value)
    return cfg


def render_config(cfg: dict) -> str:
    return "".join(f"{key} = {cfg[key]}\n" for key in sorted(cfg))


def comma_list(raw: str) -> list[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


def int_list(raw: str) -> list[int]:
    return [int(item) for item in comma_list(raw)]


# object builders -------------------------------------------------------


def split_spec_from(cfg: dict) -> SplitSpec:
    novel = comma_list(cfg["data.novel_labels"])
    if not novel:
        raise ValueError("data.novel_labels must name at least one label")
    return SplitSpec(novel_labels=frozenset(novel), shots_K=cfg["split.k"],
                     seed=cfg["split.seed"],
                     joint_fraction=cfg["split.joint_fraction"])


def model_config_from(cfg: dict, d_w: int) -> ModelConfig:
    return ModelConfig(d_w=d_w, d_h=cfg["model.d_h"], d_a=cfg["model.d_a"],
                       r=cfg["model.r"], perspectives=cfg["model.perspectives"],
                       match_level=cfg["model.match_level"],
                       matchers=tuple(comma_list(cfg["model.matchers"])))


def reg_weights_from(cfg: dict) -> RegularizerWeights:
    return RegularizerWeights(alpha=cfg["reg.alpha"], beta=cfg["reg.beta"],
                              gamma=cfg["reg.gamma"], kl_cap=cfg["reg.kl_cap"])


def train_config_from(cfg: dict, model: ModelConfig) -> TrainConfig:
    return TrainConfig(model=model, reg=reg_weights_from(cfg),
                       lr=cfg["train.lr"], n_episodes=cfg["train.episodes"],
                       C=cfg["episode.c"], K=cfg["episode.k"],
                       NQ=cfg["episode.nq"], seed=cfg["train.seed"],
                       precision=cfg["train.precision"],
                       checkpoint_every=cfg["train.checkpoint_every"])
