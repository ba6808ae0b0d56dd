import csv
import math

import numpy as np
import pytest

from latentgraph import autodiff as ad
from latentgraph.autodiff import Tensor
from latentgraph.config import TrainConfig
from latentgraph.data import EOS, gen_synthetic, pad_batch
from latentgraph.graph import temperature
from latentgraph.model import LatentGraphModel, Noise
from latentgraph.training import (
    Adam, Checkpoint, TrainingError, clip_by_global_norm, load_checkpoint, make_state, model_from_checkpoint,
    save_checkpoint, sentence_loss, train, train_step,
)

TINY = dict(hidden_size=8, d_k=8, batch_size=10)


@pytest.fixture(scope="module")
def copy_corpus():
    return gen_synthetic("copy", 50, 10, 6, seed=0)


class TestAdam:
    def test_first_step_moves_by_lr_against_gradient_sign(self):
        p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        opt = Adam({"p": p}, lr=0.1)
        opt.step({"p": np.array([0.5, -4.0, 1e-3])})
        np.testing.assert_allclose(p.data, [0.9, -1.9, 2.9], atol=1e-6)

    def test_zero_lr_leaves_parameters_alone(self, copy_corpus):
        _, state = train(TrainConfig(**TINY, learning_rate=0.0, epochs=1), copy_corpus)
        fresh = LatentGraphModel(state.model.config, *_vocab_sizes(state))
        for k, p in fresh.parameters().items():
            np.testing.assert_array_equal(p.data, state.model.parameters()[k].data)

    def test_missing_gradient_counts_as_zero(self):
        p = Tensor(np.ones(2), requires_grad=True)
        opt = Adam({"p": p}, lr=0.1)
        opt.step({})
        np.testing.assert_array_equal(p.data, 1.0)


def _vocab_sizes(state):
    params = state.model.parameters()
    return params["src_embedding"].data.shape[0], params["decoder.out.bias"].data.shape[0]


def test_clip_by_global_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = clip_by_global_norm(grads, 1.0)
    assert norm == 5.0
    assert math.isclose(np.sqrt(sum((g ** 2).sum() for g in clipped.values())), 1.0)
    same, _ = clip_by_global_norm(grads, 10.0)
    assert same["a"][0] == 3.0


class TestSentenceLoss:
    def _model(self, latent=True):
        return LatentGraphModel(TrainConfig(**TINY, latent_graph=latent), 10, 7)

    def test_uniform_decoder_gives_length_times_log_vocab(self):
        model = self._model()
        model.decoder.out.weight.data[...] = 0.0
        model.decoder.out.bias.data[...] = 0.0
        batch = pad_batch([([4, 5, 6], [4, 5]), ([7, 8], [6, 6, 6, 4])])
        losses = model.sentence_losses(batch, Noise.evaluation())
        np.testing.assert_allclose(losses.data, [3 * math.log(7), 5 * math.log(7)], rtol=1e-12)
        assert sentence_loss(model, batch, Noise.evaluation()).data == pytest.approx(4 * math.log(7))

    def test_certain_decoder_gives_zero(self):
        model = self._model()
        model.decoder.out.weight.data[...] = 0.0
        model.decoder.out.bias.data[...] = 0.0
        model.decoder.out.bias.data[EOS] = 800.0
        batch = pad_batch([([4, 5, 6], [EOS])])
        assert float(sentence_loss(model, batch, Noise.evaluation()).data) == 0.0

    def test_empty_target_rejected(self):
        batch = pad_batch([([4, 5], [4])])
        batch.tgt_mask[...] = False
        with pytest.raises(ValueError, match="target length"):
            self._model().sentence_losses(batch, Noise.evaluation())

    def test_baseline_is_deterministic_under_graph_noise(self):
        model = self._model(latent=False)
        batch = pad_batch([([4, 5, 6, 7], [4, 5]), ([8, 9], [6])])
        rng = np.random.default_rng(0)
        a = sentence_loss(model, batch, Noise.draw(rng, batch, 1.0, 0.0)).data
        b = sentence_loss(model, batch, Noise.draw(rng, batch, 0.1, 0.0)).data
        assert a == b

    def test_gradient_matches_finite_differences(self):
        model = LatentGraphModel(TrainConfig(hidden_size=4, d_k=4, seed=2), 8, 6)
        batch = pad_batch([([4, 5, 6], [4, 5]), ([7, 4], [5])])
        gumbel = np.random.default_rng(1).gumbel(size=(2, 3, 3))
        w = model.graph.w_query

        def loss_of(x):
            model.graph.w_query = x
            try:
                return sentence_loss(model, batch, Noise(gumbel, 0.7))
            finally:
                model.graph.w_query = w

        assert ad.grad_check(loss_of, w.data.copy()) < 1e-4

    def test_graph_parameters_receive_gradient(self):
        model = self._model()
        batch = pad_batch([([4, 5, 6, 7], [4, 5]), ([8, 9, 4], [6])])
        noise = Noise.draw(np.random.default_rng(0), batch, 1.0, 0.0)
        with ad.Tape() as tape:
            loss = sentence_loss(model, batch, noise)
        grads = ad.backward(tape, loss)
        for name in ("w_query", "w_key"):
            g = grads[getattr(model.graph, name)]
            assert np.abs(g).max() > 0


class TestTrainLoop:
    def test_loss_decreases_on_copy_task(self, copy_corpus):
        ckpts, _ = train(TrainConfig(**TINY, epochs=5, learning_rate=1e-2), copy_corpus)
        losses = [c.extra["train_loss"] for c in ckpts[1:]]
        assert losses[-1] < losses[0]

    def test_epochs_zero_gives_only_initial_checkpoint(self, copy_corpus, tmp_path):
        ckpts, state = train(TrainConfig(**TINY, epochs=0), copy_corpus, checkpoint_dir=tmp_path)
        assert len(ckpts) == 1 and state.t == 0
        assert sorted(p.name for p in tmp_path.iterdir()) == ["epoch000.ckpt"]

    def test_same_seed_gives_identical_checkpoints(self, copy_corpus, tmp_path):
        config = TrainConfig(**TINY, epochs=2, dropout=0.2)
        train(config, copy_corpus, checkpoint_dir=tmp_path / "a")
        train(config, copy_corpus, checkpoint_dir=tmp_path / "b")
        for name in ("epoch001.ckpt", "epoch002.ckpt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_metrics_csv(self, copy_corpus, tmp_path):
        path = tmp_path / "m.csv"
        train(TrainConfig(**TINY, epochs=2), copy_corpus, metrics_path=path)
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["t", "loss", "tau", "grad_norm"]
        assert [int(r[0]) for r in rows[1:]] == list(range(1, 11))
        assert all(math.isfinite(float(r[1])) for r in rows[1:])

    def test_temperature_follows_the_update_counter(self, copy_corpus):
        config = TrainConfig(**TINY, epochs=1, decay_steps=2, decay_rate=0.5)
        state = make_state(config, 14, 14, 5)
        batch = pad_batch([([4, 5, 6], [4])])
        taus = [train_step(state, batch, config)["tau"] for _ in range(5)]
        assert taus == [2.0, 2.0, 1.0, 1.0, 0.5]
        assert taus[3] == temperature(state.schedule, 3)

    def test_non_finite_loss_raises(self):
        config = TrainConfig(**TINY)
        state = make_state(config, 10, 10, 1)
        state.model.decoder.out.bias.data[4] = np.nan
        with pytest.raises(TrainingError, match="non-finite loss at update 0"):
            train_step(state, pad_batch([([4, 5], [4])]), config)

    def test_empty_corpus(self):
        from latentgraph.data import Corpus
        with pytest.raises(ValueError):
            train(TrainConfig(**TINY), Corpus([]))


class TestCheckpoints:
    def test_round_trip(self, copy_corpus, tmp_path):
        ckpts, state = train(TrainConfig(**TINY, epochs=1), copy_corpus)
        path = save_checkpoint(ckpts[-1], tmp_path / "x.ckpt")
        back = load_checkpoint(path)
        assert back.t == 5 and back.epoch == 1 and back.config == ckpts[-1].config
        assert back.vocab_hashes == ckpts[-1].vocab_hashes
        for k, v in ckpts[-1].params.items():
            np.testing.assert_array_equal(back.params[k], v)
        for k, v in state.optimizer.m.items():
            np.testing.assert_array_equal(back.moments["m"][k], v)
        model, src_vocab, _ = model_from_checkpoint(back)
        ids = [src_vocab.encode(s) for s in copy_corpus.sources[:5]]
        assert model.greedy(ids, 8) == state.model.greedy(ids, 8)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "bad").write_bytes(b"nope" * 10)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(tmp_path / "bad")
        with pytest.raises(OSError, match="missing"):
            load_checkpoint(tmp_path / "missing")

    def test_shape_mismatch(self, copy_corpus):
        ckpt = train(TrainConfig(**TINY, epochs=0), copy_corpus)[0][0]
        ckpt.params["decoder.w_attn"] = np.zeros((3, 3))
        with pytest.raises(ValueError, match="shape"):
            model_from_checkpoint(Checkpoint.from_bytes(ckpt.to_bytes()))
