"""End-to-end command-line runs on a small synthetic corpus: artifacts,
exit codes, metrics schema, and byte-identical reruns."""

import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from fewshot_intent.cli import main
from fewshot_intent.evaluation import harmonic_accuracy
from fewshot_intent.synthetic import make_synthetic_corpus


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def all_output(result) -> str:
    text = result.output
    try:
        text += result.stderr
    except (ValueError, AttributeError):
        pass
    return text


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus = make_synthetic_corpus(n_classes=4, per_class=12,
                                   keywords_per_class=2, n_fillers=6, seed=3)
    data = root / "data.tsv"
    with open(data, "w") as fh:
        for u in corpus:
            fh.write(" ".join(u.tokens) + "\t" + u.label + "\n")
    out = root / "out"
    cfg = root / "run.cfg"
    cfg.write_text(
        f"data.path = {data}\n"
        "data.novel_labels = intent2,intent3\n"
        "split.k = 2\n"
        "split.joint_fraction = 0.25\n"
        "embed.source = synthetic:8\n"
        "model.d_h = 6\n"
        "model.d_a = 4\n"
        "model.r = 2\n"
        "model.perspectives = 2\n"
        "episode.c = 2\n"
        "episode.k = 2\n"
        "episode.nq = 4\n"
        "train.episodes = 6\n"
        "train.lr = 0.005\n"
        "eval.episodes = 3\n"
        "eval.seeds = 0,1\n"
        "eval.batch = 8\n"
        f"out.dir = {out}\n")
    return root


@pytest.fixture(scope="module")
def trained(workdir):
    result = invoke("train", "--config", workdir / "run.cfg")
    assert result.exit_code == 0, all_output(result)
    return workdir / "out"


def test_prepare_splits_artifacts(workdir, tmp_path):
    out = tmp_path / "splits"
    result = invoke("prepare-splits", "--config", workdir / "run.cfg",
                    "--outdir", out)
    assert result.exit_code == 0, all_output(result)
    assert (out / "split.manifest").exists()
    assert (out / "effective.prepare-splits.cfg").exists()
    text = (out / "split.manifest").read_text()
    assert text.startswith("# seed=0")
    assert "novel" in result.output


def test_train_artifacts(workdir, trained):
    for name in ("checkpoint.bin", "checkpoint.json", "train_log.csv",
                 "split.manifest", "effective.train.cfg"):
        assert (trained / name).exists(), name
    with open(trained / "train_log.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6
    meta = json.loads((trained / "checkpoint.json").read_text())
    assert meta["model"]["d_h"] == 6
    assert meta["episode"] == 6
    # effective config reflects the file values
    assert "model.d_h = 6" in (trained / "effective.train.cfg").read_text()


def test_train_zero_episodes_cites_precondition(workdir):
    result = invoke("train", "--config", workdir / "run.cfg", "--episodes", 0)
    assert result.exit_code != 0
    assert "n_episodes must be >= 1" in all_output(result)


def test_unknown_config_key_rejected(workdir):
    result = invoke("train", "--config", workdir / "run.cfg",
                    "-o", "train.leraning_rate=0.1")
    assert result.exit_code != 0
    assert "unknown config key" in all_output(result)


def test_eval_nonepisodic_schema_and_confusion(workdir, trained):
    result = invoke("eval-nonepisodic", "--config", workdir / "run.cfg")
    assert result.exit_code == 0, all_output(result)
    payload = json.loads((trained / "metrics_nonepisodic_both.json").read_text())
    assert set(payload) == {"mode", "shots", "s_j", "s_n", "h_acc",
                            "n_episodes", "seeds", "confusion"}
    assert payload["mode"] == "nonepisodic" and payload["shots"] == 2
    assert payload["n_episodes"] is None and payload["seeds"] is None
    assert payload["h_acc"] == pytest.approx(
        harmonic_accuracy(payload["s_j"], payload["s_n"]), abs=0.05)
    novel = payload["confusion"]["novel"]
    assert novel["labels"] == ["intent2", "intent3"]
    # 12 per class minus 2 shots = 10 novel test utterances per class
    assert [sum(row) for row in novel["matrix"]] == [10, 10]
    joint = payload["confusion"]["joint"]
    assert len(joint["labels"]) == 4
    assert sum(sum(row) for row in joint["matrix"]) == 2 * 10 + 2 * 3


def test_eval_nonepisodic_rerun_is_byte_identical(workdir, trained):
    path = trained / "metrics_nonepisodic_both.json"
    invoke("eval-nonepisodic", "--config", workdir / "run.cfg")
    first = path.read_bytes()
    result = invoke("eval-nonepisodic", "--config", workdir / "run.cfg")
    assert result.exit_code == 0
    assert path.read_bytes() == first


def test_eval_episodic_single_space(workdir, trained):
    result = invoke("eval-episodic", "--config", workdir / "run.cfg",
                    "--space", "novel")
    assert result.exit_code == 0, all_output(result)
    payload = json.loads((trained / "metrics_episodic_novel.json").read_text())
    assert payload["mode"] == "episodic"
    assert payload["s_j"] is None and payload["h_acc"] is None
    assert 0.0 <= payload["s_n"] <= 100.0
    assert payload["n_episodes"] == 3 and payload["seeds"] == [0, 1]
    assert payload["confusion"] is None


def test_eval_requires_checkpoint(workdir, tmp_path):
    result = invoke("eval-nonepisodic", "--config", workdir / "run.cfg",
                    "--outdir", tmp_path / "fresh")
    assert result.exit_code != 0
    assert "checkpoint not found" in all_output(result)


def test_report_writes_heatmaps_and_match_grids(workdir, trained):
    result = invoke("report", "--config", workdir / "run.cfg",
                    "--text", "kw0x0 filler1 filler2", "--text", "kw3x1 filler0")
    assert result.exit_code == 0, all_output(result)
    with open(trained / "attention_00.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["head", "kw0x0", "filler1", "filler2"]
    assert len(rows) == 1 + 2  # header + r=2 heads
    att = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
    np.testing.assert_allclose(att.sum(axis=1), 1.0, atol=1e-9)
    with open(trained / "match_00_01.csv", newline="") as fh:
        header = next(csv.reader(fh))
    assert header[0] == "row"
    # 2 directions x 4 matchers x 2 perspectives
    assert len(header) == 1 + 2 * 4 * 2
    assert (trained / "match_01_00.csv").exists()


def test_grad_check_command_passes():
    result = invoke("grad-check")
    assert result.exit_code == 0, all_output(result)
    assert "gradient check passed" in result.output


def test_ablate_produces_both_grids(workdir, tmp_path):
    out = tmp_path / "ablate"
    result = invoke("ablate", "--config", workdir / "run.cfg",
                    "--seeds", "0", "--outdir", out)
    assert result.exit_code == 0, all_output(result)
    with open(out / "ablation.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["grid", "variant", "s_j", "s_n", "h_acc"]
    grids = [(r[0], r[1]) for r in rows[1:]]
    assert grids == [("matcher", "head_wise"), ("matcher", "max_attentive"),
                     ("matcher", "attentive"), ("matcher", "max_pool"),
                     ("matcher", "full"),
                     ("regularizer", "no_self_attn"),
                     ("regularizer", "no_uniform"),
                     ("regularizer", "no_discr"),
                     ("regularizer", "full")]
    text = (out / "ablation.txt").read_text()
    assert "single-matcher grid" in text
    assert "leave-one-regularizer-out grid" in text
