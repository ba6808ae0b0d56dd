import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentgraph import autodiff as ad
from latentgraph.autodiff import Tensor
from latentgraph.config import TrainConfig
from latentgraph.data import BOS, EOS, PAD
from latentgraph.decoder import Decoder, DecoderState, Hypothesis, beam_search, decode_step, length_penalty
from latentgraph.model import LatentGraphModel
from oracles import exhaustive_best, prefix_beam, random_table_lookup
from oracles import model_lookup as oracle_model_lookup


def _decoder(seed=0, d=6, vocab=7, feeding=True):
    return Decoder(np.random.default_rng(seed), d, d, vocab, feeding)


def _source(seed=1, b=1, m=4, d=6):
    return Tensor(np.random.default_rng(seed).normal(size=(b, m, d)))


class TestDecodeStep:
    def test_distribution_sums_to_one(self):
        dec = _decoder()
        S = _source()
        mask = np.ones((1, 4), dtype=bool)
        table = Tensor(np.random.default_rng(2).normal(size=(7, 6)))
        state = dec.init_state(S, mask)
        for y in (BOS, 5, 6):
            pi, state = decode_step(dec, state, [y], S, mask, table)
            assert abs(pi.data.sum() - 1.0) < 1e-9
            assert (pi.data >= 0).all()

    def test_identical_rows_give_uniform_attention(self):
        dec = _decoder()
        S = Tensor(np.tile(np.random.default_rng(3).normal(size=6), (1, 5, 1)))
        mask = np.ones((1, 5), dtype=bool)
        _, _, alpha = dec.step(dec.init_state(S, mask), Tensor(np.ones((1, 6))), S, dec.attention_keys(S), mask)
        np.testing.assert_allclose(alpha.data, 0.2, atol=1e-15)

    def test_zero_attention_weight_gives_uniform_attention(self):
        dec = _decoder()
        dec.w_attn.data[...] = 0.0
        S = _source(m=3)
        mask = np.ones((1, 3), dtype=bool)
        _, _, alpha = dec.step(dec.init_state(S, mask), Tensor(np.ones((1, 6))), S, dec.attention_keys(S), mask)
        np.testing.assert_allclose(alpha.data, 1 / 3, atol=1e-15)

    def test_attention_is_masked_at_padding(self):
        dec = _decoder()
        S = _source(b=2, m=4)
        mask = np.array([[True] * 4, [True, True, False, False]])
        _, _, alpha = dec.step(dec.init_state(S, mask), Tensor(np.ones((2, 6))), S, dec.attention_keys(S), mask)
        np.testing.assert_allclose(alpha.data.sum(axis=1), 1.0, atol=1e-12)
        assert (alpha.data[1, 2:] == 0.0).all()

    def test_empty_source_rejected(self):
        dec = _decoder()
        with pytest.raises(ValueError, match="empty source"):
            decode_step(dec, DecoderState(h=Tensor(np.zeros((1, 6)))), [BOS], Tensor(np.zeros((1, 0, 6))),
                        np.zeros((1, 0), dtype=bool), Tensor(np.zeros((7, 6))))

    def test_without_input_feeding(self):
        dec = _decoder(feeding=False)
        S = _source()
        mask = np.ones((1, 4), dtype=bool)
        pi, _ = decode_step(dec, dec.init_state(S, mask), [BOS], S, mask, Tensor(np.ones((7, 6))))
        assert abs(pi.data.sum() - 1) < 1e-12

    def test_gradient_through_one_step(self):
        dec = _decoder(seed=4, d=4, vocab=5)
        S = _source(seed=5, m=3, d=4)
        mask = np.ones((1, 3), dtype=bool)
        table = np.random.default_rng(6).normal(size=(5, 4))

        def f(s):
            pi, _ = decode_step(dec, dec.init_state(s, mask), [2], s, mask, table)
            return ad.log(ad.sum(ad.mul(pi, np.array([[0.0, 0.0, 0.0, 1.0, 0.0]]))))

        assert ad.grad_check(f, S.data) < 1e-4


def _rigged_model(token, vocab=8):
    model = LatentGraphModel(TrainConfig(hidden_size=8, d_k=8), 9, vocab)
    model.decoder.out.weight.data[...] = 0.0
    model.decoder.out.bias.data[...] = 0.0
    model.decoder.out.bias.data[token] = 50.0
    return model


class TestGreedy:
    def test_constant_token_repeats_to_max_len(self):
        assert _rigged_model(5).greedy([[4, 5, 6]], 7) == [[5] * 7]

    def test_eos_first_gives_empty(self):
        assert _rigged_model(EOS).greedy([[4, 5, 6], [7, 8]], 7) == [[], []]

    def test_pad_and_bos_never_emitted(self):
        model = _rigged_model(PAD)
        model.decoder.out.bias.data[BOS] = 49.0
        model.decoder.out.bias.data[6] = 1.0
        assert model.greedy([[4, 5]], 3) == [[6, 6, 6]]

    def test_deterministic_and_batch_independent(self):
        model = LatentGraphModel(TrainConfig(hidden_size=8, d_k=8, seed=3), 12, 12)
        srcs = [[4, 5, 6, 7], [8, 9], [10, 11, 4]]
        batched = model.greedy(srcs, 6)
        assert batched == model.greedy(srcs, 6)
        assert batched == [model.greedy([s], 6)[0] for s in srcs]


class TestBeamBookkeeping:
    def test_length_penalty(self):
        assert length_penalty(1, 1.0) == 1.0
        assert length_penalty(7, 1.0) == 2.0
        assert length_penalty(7, 0.0) == 1.0
        assert Hypothesis([1, 2, 3], -6.0).score(1.0) == -6.0 / (8 / 6)

    def test_rejects_zero_beam(self):
        with pytest.raises(ValueError):
            beam_search(lambda s, t: np.zeros((1, 2)), lambda s, r: s, None, 0, 1, beam_size=0)

    def test_two_step_toy_where_greedy_fails(self):
        # step 1: A=0.6, B=0.4; after A everything is flat, after B the EOS is certain
        table = {(): {"A": 0.6, "B": 0.4},
                 ("A",): {"x": 0.34, "y": 0.33, "</s>": 0.33},
                 ("B",): {"</s>": 1.0}}
        vocab = ["A", "B", "x", "y", "</s>"]
        greedy = _toy_beam(table, vocab, beam=1, alpha=0.0, max_len=2)
        best = _toy_beam(table, vocab, beam=2, alpha=0.0, max_len=2)
        assert greedy == ["A", "x"]
        assert best == ["B", "</s>"]
        assert best == _exhaustive(table, vocab, alpha=0.0, max_len=2)


def _toy_step(table, vocab):
    def lookup(prefix):
        probs = table.get(tuple(vocab[t] for t in prefix), {})
        with np.errstate(divide="ignore"):
            return np.log(np.array([probs.get(v, 0.0) for v in vocab]))
    return lookup


def _toy_beam(table, vocab, beam, alpha, max_len):
    hyp = prefix_beam(_toy_step(table, vocab), vocab.index("</s>"), beam, alpha, max_len)
    return [vocab[t] for t in hyp.tokens]


def _exhaustive(table, vocab, alpha, max_len):
    best, _ = exhaustive_best(_toy_step(table, vocab), len(vocab), vocab.index("</s>"), alpha, max_len)
    return [vocab[t] for t in best]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 4), st.integers(1, 4), st.sampled_from([0.0, 0.6, 1.0, 2.0]),
       st.sampled_from([0.0, 0.3]))
def test_full_width_beam_is_exhaustive(seed, vocab, max_len, alpha, sparsity):
    rng = np.random.default_rng(seed)
    lookup = random_table_lookup(rng, vocab, max_len, sparsity)
    eos = int(rng.integers(vocab))
    hyp = prefix_beam(lookup, eos, vocab ** max_len, alpha, max_len)
    best, score = exhaustive_best(lookup, vocab, eos, alpha, max_len)
    assert hyp.tokens == best
    assert hyp.score(alpha) == pytest.approx(score, abs=1e-12)


def test_alpha_zero_ranks_by_raw_logprob():
    # a short sure thing beats a long sequence under raw log-probability
    table = {(): {"a": 0.5, "</s>": 0.5}, ("a",): {"a": 0.5, "</s>": 0.5},
             ("a", "a"): {"</s>": 1.0}}
    vocab = ["a", "</s>"]
    assert _toy_beam(table, vocab, beam=4, alpha=0.0, max_len=3) == ["</s>"]


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("latent", [True, False])
def test_model_beam_matches_exhaustive_and_greedy(seed, latent):
    # 6 target ids: PAD and BOS are forbidden, leaving UNK, EOS and two words
    model = LatentGraphModel(TrainConfig(hidden_size=8, d_k=8, seed=seed, latent_graph=latent), 9, 6)
    src = [4, 5, 6, 7, 8][: 2 + seed % 4]
    lookup = oracle_model_lookup(model, src)
    for max_len in (1, 2, 3, 4):
        best, _ = exhaustive_best(lookup, 6, EOS, 1.0, max_len)
        assert model.beam(src, 4 ** max_len, 1.0, max_len) == [t for t in best if t != EOS]
    assert model.beam(src, 1, 1.0, 6) == model.greedy([src], 6)[0]
