"""Command-line entry points.

Every command reads an optional flat config file, applies `-o key=value`
overrides and dedicated flags (flags win), writes the fully merged config
into the output directory, and keeps all artifacts under that directory.
Failures exit nonzero with a one-line diagnostic on stderr.
"""

from __future__ import annotations

import csv
import functools
import json
import os
import sys

import click
import numpy as np

from . import autodiff as ad
from . import config as cfgmod
from .autodiff import ParamStore
from .corpus import (build_splits, infer_format, load_manifest, parse_dataset,
                     save_manifest, tokenize)
from .embeddings import Vocabulary, load_vectors, synthesize_vectors
from .episodes import EpisodeSpec, nonepisodic_tasks
from .evaluation import (build_report, evaluate_episodic,
                         evaluate_nonepisodic, fsl_episode_source,
                         gfsl_episode_source)
from .matching import match_all, match_words
from .model import Model, ModelConfig
from .trainer import check_model_gradients, tiny_train_config, train

SPACES = ("novel", "joint", "both")


def _fail(message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValueError, OSError, FloatingPointError) as exc:
            _fail(str(exc))
    return wrapper


def common_options(fn):
    fn = click.option("--outdir", default=None,
                      help="output directory (config key out.dir)")(fn)
    fn = click.option("-o", "--opt", "opts", multiple=True, metavar="KEY=VALUE",
                      help="override any config key")(fn)
    fn = click.option("--config", "config_path", default=None,
                      help="flat key = value config file")(fn)
    return fn


def load_cfg(command: str, config_path, opts, flags: dict) -> dict:
    layers = []
    if config_path:
        layers.append(cfgmod.parse_config_file(config_path))
    layers.append(cfgmod.parse_overrides(opts))
    layers.append({k: v for k, v in flags.items() if v is not None})
    cfg = cfgmod.make_config(*layers)
    outdir = cfg["out.dir"]
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, f"effective.{command}.cfg"), "w",
              encoding="utf-8") as fh:
        fh.write(cfgmod.render_config(cfg))
    return cfg


def load_corpus(cfg):
    path = cfg["data.path"]
    if not path:
        raise ValueError("data.path is required (set it in the config file or with -o data.path=...)")
    fmt = cfg["data.format"]
    if fmt == "auto":
        fmt = infer_format(path)
    return parse_dataset(path, fmt)


def load_table(cfg, vocab):
    source = cfg["embed.source"]
    if source.startswith("synthetic:"):
        try:
            d_w = int(source.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"embed.source must be a vector file or synthetic:<d_w>, got {source!r}") from None
        return synthesize_vectors(vocab, d_w, cfg["embed.seed"])
    return load_vectors(source, vocab)


def get_splits(cfg, corpus, outdir=None):
    manifest = cfg["data.manifest"]
    if manifest:
        return load_manifest(corpus, manifest)
    splits = build_splits(corpus, cfgmod.split_spec_from(cfg))
    if outdir is not None:
        save_manifest(splits, os.path.join(outdir, "split.manifest"))
    return splits


def load_model(cfg, checkpoint, corpus) -> Model:
    if checkpoint is None:
        checkpoint = os.path.join(cfg["out.dir"], "checkpoint.bin")
    if not os.path.exists(checkpoint):
        raise ValueError(f"checkpoint not found: {checkpoint}")
    meta_path = os.path.splitext(checkpoint)[0] + ".json"
    if not os.path.exists(meta_path):
        raise ValueError(f"checkpoint metadata not found: {meta_path}")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    params = ParamStore.load(checkpoint)
    vocab = Vocabulary.from_utterances(corpus)
    table = load_table(cfg, vocab)
    return Model(ModelConfig.from_dict(meta["model"]), params, table, vocab)


def episode_spec(cfg, label_pool: str) -> EpisodeSpec:
    return EpisodeSpec(C=cfg["episode.c"], K=cfg["episode.k"],
                       NQ=cfg["episode.nq"], label_pool=label_pool)


def write_text(path, text: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


@click.group()
def main():
    """Few-shot intent detection: matching-based episodic meta-learning."""


# ----------------------------------------------------------------------


@main.command("prepare-splits")
@common_options
@click.option("--data", default=None, help="dataset file (data.path)")
@click.option("--novel-labels", default=None, help="comma-separated novel intents")
@click.option("--k", type=int, default=None, help="support shots per class (split.k)")
@click.option("--seed", type=int, default=None, help="split seed (split.seed)")
@guarded
def prepare_splits(config_path, opts, outdir, data, novel_labels, k, seed):
    """Carve a labeled corpus into train / joint-test / novel-test / shot pools."""
    cfg = load_cfg("prepare-splits", config_path, opts, {
        "out.dir": outdir, "data.path": data, "data.novel_labels": novel_labels,
        "split.k": k, "split.seed": seed})
    corpus = load_corpus(cfg)
    splits = build_splits(corpus, cfgmod.split_spec_from(cfg))
    path = os.path.join(cfg["out.dir"], "split.manifest")
    save_manifest(splits, path)
    sizes = {pool: len(idx) for pool, idx in splits.indices.items()}
    click.echo(f"wrote {path}")
    click.echo(f"pools: {sizes} | seen={len(splits.seen_labels)} novel={len(splits.novel_labels)}")


@main.command("train")
@common_options
@click.option("--episodes", type=int, default=None, help="training episodes (train.episodes)")
@click.option("--seed", type=int, default=None, help="training seed (train.seed)")
@click.option("--lr", type=float, default=None, help="learning rate (train.lr)")
@guarded
def train_cmd(config_path, opts, outdir, episodes, seed, lr):
    """Meta-train on episodes from the seen classes; writes checkpoints + log."""
    cfg = load_cfg("train", config_path, opts, {
        "out.dir": outdir, "train.episodes": episodes, "train.seed": seed,
        "train.lr": lr})
    out = cfg["out.dir"]
    corpus = load_corpus(cfg)
    splits = get_splits(cfg, corpus, outdir=out)
    vocab = Vocabulary.from_utterances(corpus)
    table = load_table(cfg, vocab)
    tcfg = cfgmod.train_config_from(cfg, cfgmod.model_config_from(cfg, table.d_w))
    model, log = train(tcfg, splits.train_pool, table, vocab, checkpoint_dir=out)
    log.to_csv(os.path.join(out, "train_log.csv"))
    last = log.rows[-1]
    click.echo(f"trained {tcfg.n_episodes} episodes: final total={last['total']:.4f} "
               f"accuracy={last['accuracy']:.2f}")
    click.echo(f"checkpoint: {os.path.join(out, 'checkpoint.bin')}")


def _episodic_metrics(cfg, model, splits, space, threads):
    seeds = cfgmod.int_list(cfg["eval.seeds"])
    n_episodes = cfg["eval.episodes"]
    s_j = s_n = None
    if space in ("novel", "both"):
        source = fsl_episode_source(splits.novel_test, episode_spec(cfg, "novel"))
        s_n = evaluate_episodic(model, source, n_episodes, seeds, threads).accuracy
    if space in ("joint", "both"):
        source = gfsl_episode_source(splits.train_pool, splits,
                                     episode_spec(cfg, "joint"))
        s_j = evaluate_episodic(model, source, n_episodes, seeds, threads).accuracy
    return build_report("episodic", shots=cfg["episode.k"], s_j=s_j, s_n=s_n,
                        n_episodes=n_episodes, seeds=seeds)


@main.command("eval-episodic")
@common_options
@click.option("--checkpoint", default=None, help="parameter file (default: <outdir>/checkpoint.bin)")
@click.option("--space", type=click.Choice(SPACES), default="both")
@click.option("--threads", type=int, default=1, show_default=True)
@guarded
def eval_episodic_cmd(config_path, opts, outdir, checkpoint, space, threads):
    """Episodic accuracy: novel-space episodes and/or GFSL joint episodes."""
    cfg = load_cfg("eval-episodic", config_path, opts, {"out.dir": outdir})
    corpus = load_corpus(cfg)
    splits = get_splits(cfg, corpus)
    model = load_model(cfg, checkpoint, corpus)
    report = _episodic_metrics(cfg, model, splits, space, threads)
    path = os.path.join(cfg["out.dir"], f"metrics_episodic_{space}.json")
    write_text(path, report.to_json())
    click.echo(report.to_table(), nl=False)
    click.echo(f"wrote {path}")


def _nonepisodic_metrics(cfg, model, splits, space, threads):
    results = {}
    acc = {}
    for sp in (("novel", "joint") if space == "both" else (space,)):
        labels, supports, test = nonepisodic_tasks(splits, sp)
        results[sp] = evaluate_nonepisodic(model, labels, supports, test,
                                           batch_size=cfg["eval.batch"],
                                           threads=threads)
        acc[sp] = results[sp].accuracy
    return build_report("nonepisodic", shots=cfg["split.k"],
                        s_j=acc.get("joint"), s_n=acc.get("novel"),
                        results=results)


@main.command("eval-nonepisodic")
@common_options
@click.option("--checkpoint", default=None, help="parameter file (default: <outdir>/checkpoint.bin)")
@click.option("--space", type=click.Choice(SPACES), default="both")
@click.option("--threads", type=int, default=1, show_default=True)
@guarded
def eval_nonepisodic_cmd(config_path, opts, outdir, checkpoint, space, threads):
    """Single-pass accuracy over the full novel and/or joint label space."""
    cfg = load_cfg("eval-nonepisodic", config_path, opts, {"out.dir": outdir})
    corpus = load_corpus(cfg)
    splits = get_splits(cfg, corpus)
    model = load_model(cfg, checkpoint, corpus)
    report = _nonepisodic_metrics(cfg, model, splits, space, threads)
    path = os.path.join(cfg["out.dir"], f"metrics_nonepisodic_{space}.json")
    write_text(path, report.to_json())
    click.echo(report.to_table(), nl=False)
    click.echo(f"wrote {path}")


# ----------------------------------------------------------------------

MATCHER_VARIANTS = ("head_wise", "max_attentive", "attentive", "max_pool")
REG_VARIANTS = {"no_self_attn": "reg.alpha", "no_uniform": "reg.beta",
                "no_discr": "reg.gamma"}


@main.command("ablate")
@common_options
@click.option("--seeds", default="0,1,2", show_default=True,
              help="training seeds averaged per variant")
@click.option("--threads", type=int, default=1, show_default=True)
@guarded
def ablate_cmd(config_path, opts, outdir, seeds, threads):
    """Single-matcher and leave-one-regularizer-out grids, shared splits/seeds.

    Trains every variant for each seed, evaluates non-episodically on both
    spaces, and tabulates seed-averaged S_J / S_N / H per variant.
    """
    cfg = load_cfg("ablate", config_path, opts, {"out.dir": outdir})
    out = cfg["out.dir"]
    seed_list = cfgmod.int_list(seeds)
    if not seed_list:
        raise ValueError("ablate needs at least one seed")
    corpus = load_corpus(cfg)
    splits = get_splits(cfg, corpus, outdir=out)
    vocab = Vocabulary.from_utterances(corpus)
    table = load_table(cfg, vocab)

    variants = [("full", {})]
    variants += [(name, {"model.matchers": name}) for name in MATCHER_VARIANTS]
    variants += [(name, {key: 0.0}) for name, key in REG_VARIANTS.items()]

    rows = {}
    for name, tweak in variants:
        vcfg = dict(cfg)
        vcfg.update(tweak)
        accs = []
        for seed in seed_list:
            vcfg["train.seed"] = seed
            tcfg = cfgmod.train_config_from(
                vcfg, cfgmod.model_config_from(vcfg, table.d_w))
            model, _ = train(tcfg, splits.train_pool, table, vocab)
            report = _nonepisodic_metrics(vcfg, model, splits, "both", threads)
            accs.append((report.s_j, report.s_n, report.h_acc))
            click.echo(f"[{name} seed={seed}] S_J={report.s_j:.2f} "
                       f"S_N={report.s_n:.2f} H={report.h_acc:.2f}")
        rows[name] = tuple(float(np.mean(col)) for col in zip(*accs))

    def grid(title, names):
        lines = [title, f"{'variant':<16}{'S_J':>8}{'S_N':>8}{'H':>8}"]
        for name in names:
            s_j, s_n, h = rows[name]
            lines.append(f"{name:<16}{s_j:>8.2f}{s_n:>8.2f}{h:>8.2f}")
        return "\n".join(lines) + "\n"

    text = (grid(f"single-matcher grid (mean over seeds {seed_list})",
                 list(MATCHER_VARIANTS) + ["full"])
            + "\n"
            + grid(f"leave-one-regularizer-out grid (mean over seeds {seed_list})",
                   list(REG_VARIANTS) + ["full"]))
    write_text(os.path.join(out, "ablation.txt"), text)
    with open(os.path.join(out, "ablation.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["grid", "variant", "s_j", "s_n", "h_acc"])
        for name in list(MATCHER_VARIANTS) + ["full"]:
            writer.writerow(["matcher", name] + [f"{v:.2f}" for v in rows[name]])
        for name in list(REG_VARIANTS) + ["full"]:
            writer.writerow(["regularizer", name] + [f"{v:.2f}" for v in rows[name]])
    click.echo(text, nl=False)
    click.echo(f"wrote {os.path.join(out, 'ablation.csv')}")


@main.command("grad-check")
@click.option("--match-level", type=click.Choice(("head", "word")), default="head",
              show_default=True)
@click.option("--min-coords", type=int, default=64, show_default=True)
@guarded
def grad_check_cmd(match_level, min_coords):
    """Finite-difference audit of the full model's gradients (tiny config)."""
    report = check_model_gradients(tiny_train_config(match_level),
                                   min_coords=min_coords)
    click.echo(str(report))
    if not report.passed:
        _fail(f"gradient check failed on {len(report.failures)} coordinate(s)")
    click.echo(f"gradient check passed: {report.coords_checked} coordinates, "
               f"max rel err {report.max_rel_err:.2e}")


@main.command("report")
@common_options
@click.option("--checkpoint", default=None, help="parameter file (default: <outdir>/checkpoint.bin)")
@click.option("--text", "texts", multiple=True, required=True,
              help="utterance to inspect (repeatable)")
@guarded
def report_cmd(config_path, opts, outdir, checkpoint, texts):
    """Dump attention heatmaps and pairwise match scores as CSV files."""
    cfg = load_cfg("report", config_path, opts, {"out.dir": outdir})
    out = cfg["out.dir"]
    corpus = load_corpus(cfg)
    model = load_model(cfg, checkpoint, corpus)
    token_seqs = [tokenize(t) for t in texts]
    for i, toks in enumerate(token_seqs):
        if not toks:
            raise ValueError(f"--text #{i} is empty after tokenization")
    with ad.no_grad():
        encs = model.encode_utterances(token_seqs)

    written = []
    for i, (toks, enc) in enumerate(zip(token_seqs, encs)):
        path = os.path.join(out, f"attention_{i:02d}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["head"] + list(toks))
            for hi, row in enumerate(enc.A.data):
                writer.writerow([hi] + [repr(float(v)) for v in row])
        written.append(path)

    matchers = model.config.matchers
    l = model.config.perspectives
    match_fn = match_all if model.config.match_level == "head" else match_words
    header = [f"{d}:{m}:{p}" for d in ("fwd", "bwd") for m in matchers
              for p in range(l)]
    for i in range(len(encs)):
        for j in range(len(encs)):
            if i == j:
                continue
            with ad.no_grad():
                seq = match_fn(encs[i], encs[j], model.params, matchers)
            block = np.concatenate([seq.forward.data, seq.backward.data], axis=-1)
            path = os.path.join(out, f"match_{i:02d}_{j:02d}.csv")
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["row"] + header)
                for ri, row in enumerate(block):
                    writer.writerow([ri] + [repr(float(v)) for v in row])
            written.append(path)
    for path in written:
        click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
