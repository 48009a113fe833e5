"""Model assembly tests: parameter layout, bucketed encoding equality,
batched-vs-looped episode scoring, end-to-end gradients, checkpointing."""

import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from fewshot_intent import autodiff as ad
from fewshot_intent.autodiff import Tensor
from fewshot_intent.classifier import classify_episode
from fewshot_intent.embeddings import Vocabulary, synthesize_vectors
from fewshot_intent.encoder import encode
from fewshot_intent.model import (Model, ModelConfig, init_params,
                                  save_checkpoint)

TOKENS = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf"]


def tiny_model(seed=0, **overrides) -> Model:
    cfg = ModelConfig(**{"d_w": 5, "d_h": 3, "d_a": 4, "r": 2, "perspectives": 2,
                         **overrides})
    vocab = Vocabulary(TOKENS)
    table = synthesize_vectors(vocab, d_w=cfg.d_w, seed=seed)
    return Model(cfg, init_params(cfg, seed=seed), table, vocab)


def sample_utterances(rng, n, min_len=2, max_len=5):
    return [[TOKENS[j] for j in rng.integers(0, len(TOKENS), size=rng.integers(min_len, max_len + 1))]
            for _ in range(n)]


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError, match="match_level"):
            ModelConfig(d_w=4, match_level="sentence")
        with pytest.raises(ValueError, match="d_h"):
            ModelConfig(d_w=4, d_h=0)
        with pytest.raises(ValueError, match="unknown"):
            ModelConfig(d_w=4, matchers=("bogus",))

    def test_roundtrip(self):
        cfg = ModelConfig(d_w=8, d_h=5, matchers=("max_pool", "head_wise"),
                          match_level="word")
        again = ModelConfig.from_dict(cfg.to_dict())
        assert again == cfg

    def test_match_width(self):
        cfg = ModelConfig(d_w=4, perspectives=3, matchers=("head_wise", "attentive"))
        assert cfg.match_width == 6


class TestInitParams:
    def test_full_parameter_set(self):
        cfg = ModelConfig(d_w=5, d_h=3, d_a=4, r=2, perspectives=2)
        store = init_params(cfg, seed=0)
        expected = {"encoder.fwd.W", "encoder.fwd.b", "encoder.bwd.W", "encoder.bwd.b",
                    "encoder.W_s1", "encoder.W_s2",
                    "match.W1", "match.W2", "match.W3", "match.W4",
                    "match.W5", "match.W6", "match.W7", "match.W8",
                    "agg.fwd.W", "agg.fwd.b", "agg.bwd.W", "agg.bwd.b",
                    "cls.W9", "cls.W10"}
        assert set(store.names()) == expected
        assert store["agg.fwd.W"].shape == (8 + 3, 12)  # input 4*l, hidden d_h
        assert store["cls.W10"].shape == (3, 12)

    def test_matcher_subset_drops_unused_weights(self):
        cfg = ModelConfig(d_w=5, d_h=3, matchers=("attentive",), perspectives=2)
        store = init_params(cfg, seed=0)
        assert "match.W5" in store and "match.W6" in store
        assert "match.W1" not in store and "match.W7" not in store
        assert store["agg.fwd.W"].shape == (2 + 3, 12)

    def test_seed_determinism(self):
        cfg = ModelConfig(d_w=5, d_h=3)
        assert_allclose(init_params(cfg, 9).flat(), init_params(cfg, 9).flat(), rtol=0)
        assert not np.allclose(init_params(cfg, 9).flat(), init_params(cfg, 10).flat())


class TestEncodeUtterances:
    def test_bucketing_matches_per_instance_encoding(self):
        model = tiny_model()
        rng = np.random.default_rng(0)
        utts = sample_utterances(rng, 9)
        encs = model.encode_utterances(utts)
        from fewshot_intent.embeddings import embed_tokens
        for toks, enc in zip(utts, encs):
            X = embed_tokens(toks, model.table, model.vocab)
            direct = encode(X, model.params)
            assert_allclose(enc.H.data, direct.H.data, rtol=1e-12)
            assert_allclose(enc.A.data, direct.A.data, rtol=1e-12)
            assert_allclose(enc.M.data, direct.M.data, rtol=1e-12)

    def test_gradients_flow_through_buckets(self):
        model = tiny_model()
        utts = [["alpha", "bravo"], ["charlie"], ["delta", "echo"]]
        encs = model.encode_utterances(utts)
        loss = ad.sum_(ad.stack([ad.sum_(e.M) for e in encs]))
        loss.backward()
        assert model.params["encoder.fwd.W"].grad is not None


class TestEpisodeScores:
    def test_batched_equals_looped(self):
        model = tiny_model(seed=1)
        rng = np.random.default_rng(2)
        support_tokens = [sample_utterances(rng, 2) for _ in range(3)]  # C=3, K=2
        query_tokens = sample_utterances(rng, 4)
        out = model.run_episode(support_tokens, query_tokens)
        assert out.scores.shape == (4, 3)
        looped = model._looped_scores(out.support_encodings, out.query_encodings)
        assert_allclose(out.scores.data, looped.data, rtol=1e-9)
        for q, row in zip(out.query_encodings, out.scores.data):
            single = classify_episode(q, out.support_encodings, model.params,
                                      model.config.matchers)
            assert_allclose(row, single.scores.data, rtol=1e-9)

    def test_word_level_episode_runs(self):
        model = tiny_model(seed=3, match_level="word")
        rng = np.random.default_rng(4)
        support_tokens = [sample_utterances(rng, 1) for _ in range(2)]
        out = model.run_episode(support_tokens, sample_utterances(rng, 2))
        assert out.scores.shape == (2, 2)
        assert np.isfinite(out.scores.data).all()

    def test_predictions_are_argmax(self):
        model = tiny_model(seed=5)
        rng = np.random.default_rng(6)
        support_tokens = [sample_utterances(rng, 1) for _ in range(2)]
        out = model.run_episode(support_tokens, sample_utterances(rng, 5))
        assert_allclose(out.predictions, np.argmax(out.scores.data, axis=-1))

    def test_single_class_rejected(self):
        model = tiny_model()
        with pytest.raises(ValueError, match="2 classes"):
            model.run_episode([[["alpha"]]], [["bravo"]])


class TestEndToEndGradient:
    def test_tiny_episode_gradient_check(self):
        model = tiny_model(seed=7)
        rng = np.random.default_rng(8)
        support_tokens = [sample_utterances(rng, 2, 2, 3) for _ in range(2)]
        query_tokens = sample_utterances(rng, 2, 2, 3)

        def loss_fn(params):
            out = model.run_episode(support_tokens, query_tokens)
            from fewshot_intent.classifier import episode_loss
            return episode_loss(out.scores, [0, 1])

        report = ad.gradient_check(loss_fn, model.params, min_coords=64)
        assert report.passed, str(report)


class TestCheckpoint:
    def test_save_checkpoint_files(self, tmp_path):
        model = tiny_model(seed=9)
        params_path = tmp_path / "params.bin"
        meta_path = tmp_path / "meta.json"
        save_checkpoint(model, params_path, meta_path, extra={"episode": 42})
        loaded = ad.ParamStore.load(params_path)
        assert_allclose(loaded.flat(), model.params.flat(), rtol=0)
        meta = json.loads(meta_path.read_text())
        assert meta["episode"] == 42
        assert ModelConfig.from_dict(meta["model"]) == model.config
