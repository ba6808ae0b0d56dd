"""Luong-style attentive LSTM decoder with input feeding, plus search."""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .layers import LSTM, Linear, Module, uniform_param


@dataclass
class DecoderState:
    h: object
    c: object = None
    feed: object = None


class Decoder(Module):
    def __init__(self, rng, embed_dim, d, vocab_size, input_feeding=True):
        self.d = d
        self.input_feeding = input_feeding
        self.lstm = LSTM(rng, embed_dim + (d if input_feeding else 0), d)
        self.init = Linear(rng, d, d)
        self.w_attn = uniform_param(rng, (d, d), d)
        self.w_combine = uniform_param(rng, (d, 2 * d), 2 * d)
        self.out = Linear(rng, d, vocab_size)

    def init_state(self, S, src_mask):
        """``tanh(W mean(S) + b)`` over the valid source positions."""
        mask = np.asarray(src_mask, dtype=np.float64)
        if (mask.sum(axis=1) == 0).any():
            raise ValueError("cannot decode from an empty source")
        summed = ad.sum(ad.mul(S, np.broadcast_to(mask[:, :, None], S.shape)), axis=1)
        inv = np.broadcast_to(1.0 / mask.sum(axis=1, keepdims=True), summed.shape)
        return DecoderState(h=ad.tanh(self.init(ad.mul(summed, inv))))

    def attention_keys(self, S):
        return ad.matmul(S, ad.transpose(self.w_attn))

    def attend(self, h, S, keys, src_mask):
        b, m, d = S.shape
        scores = ad.reshape(ad.matmul(keys, ad.reshape(h, (b, d, 1))), (b, m))
        alpha = ad.row_softmax(ad.masked_fill(scores, ~np.asarray(src_mask, dtype=bool)))
        context = ad.reshape(ad.matmul(ad.reshape(alpha, (b, 1, m)), S), (b, d))
        return context, alpha

    def step(self, state, y_emb, S, keys, src_mask):
        """One step from an embedded previous token; returns (attentional vector, state, alpha)."""
        if self.input_feeding:
            feed = state.feed if state.feed is not None else np.zeros((y_emb.shape[0], self.d))
            x = ad.concat([y_emb, feed], axis=-1)
        else:
            x = y_emb
        h, c = self.lstm.cell(self.lstm.project_inputs(x), (state.h, state.c))
        context, alpha = self.attend(h, S, keys, src_mask)
        h_att = ad.tanh(ad.matmul(ad.concat([context, h], axis=-1), ad.transpose(self.w_combine)))
        return h_att, DecoderState(h=h, c=c, feed=h_att), alpha

    def log_probs(self, h_att):
        return ad.row_log_softmax(self.out(h_att))


def decode_step(decoder, state, y_prev, S, src_mask, embedding):
    """Advance one step; returns the output distribution and the new state."""
    if S.shape[1] == 0:
        raise ValueError("cannot decode from an empty source")
    emb = ad.embedding(embedding, np.asarray(y_prev))
    h_att, new_state, _ = decoder.step(state, emb, S, decoder.attention_keys(S), src_mask)
    return ad.exp(decoder.log_probs(h_att)), new_state


def length_penalty(n, alpha):
    return ((5.0 + n) / 6.0) ** alpha


@dataclass
class Hypothesis:
    tokens: list = field(default_factory=list)
    logprob: float = 0.0
    finished: bool = False

    def score(self, alpha):
        return self.logprob / length_penalty(len(self.tokens), alpha)


def beam_search(step_fn, reorder_fn, init_state, bos, eos, beam_size=10, alpha=1.0, max_len=50):
    """Beam search over a batched step function.

    ``step_fn(state, tokens)`` returns log-probabilities of shape (k, V) for
    the k live hypotheses; ``reorder_fn(state, rows)`` selects rows of the
    state. Each step keeps the ``beam_size`` best expansions by raw
    log-probability; the winner is ranked by ``logprob / lp(len)`` where
    ``lp(n) = ((5 + n) / 6) ** alpha`` and ``len`` counts EOS.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be at least 1")
    live = [Hypothesis()]
    state = init_state
    last = np.array([bos])
    finished = []
    for _ in range(max_len):
        logp = np.asarray(step_fn(state, last), dtype=np.float64)
        base = np.array([h.logprob for h in live])
        cand = (base[:, None] + logp).reshape(-1)
        order = np.argsort(-cand, kind="stable")
        order = order[np.isfinite(cand[order])][:beam_size]
        vocab = logp.shape[1]
        next_live, rows = [], []
        for flat in order:
            row, tok = divmod(int(flat), vocab)
            hyp = Hypothesis(live[row].tokens + [tok], float(cand[flat]))
            if tok == eos:
                hyp.finished = True
                finished.append(hyp)
            else:
                next_live.append(hyp)
                rows.append(row)
        if not next_live:
            live = []
            break
        live = next_live
        state = reorder_fn(state, np.array(rows))
        last = np.array([h.tokens[-1] for h in live])
    finished.extend(live)
    if not finished:
        return Hypothesis()
    scores = [h.score(alpha) for h in finished]
    return finished[int(np.argmax(scores))]


def strip_eos(tokens, eos):
    return tokens[:-1] if tokens and tokens[-1] == eos else tokens
