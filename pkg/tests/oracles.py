"""Independent reference computations shared by the unit and acceptance tests."""

import itertools
import math
from collections import Counter

import numpy as np

from latentgraph import autodiff as ad
from latentgraph.data import BOS, EOS, PAD, pad_batch
from latentgraph.decoder import beam_search, length_penalty
from latentgraph.model import Noise


def prefix_beam(lookup, eos, beam, alpha, max_len, bos=BOS):
    """Run beam_search where ``lookup(prefix_tuple)`` gives next-token log-probabilities."""

    def step_fn(state, last):
        if state["parents"] is None:
            prefixes = [()]
        else:
            prefixes = [p + (int(t),) for p, t in zip(state["parents"], last)]
        state["prefixes"] = prefixes
        return np.stack([lookup(p) for p in prefixes])

    def reorder_fn(state, rows):
        return {"parents": [state["prefixes"][r] for r in rows]}

    return beam_search(step_fn, reorder_fn, {"parents": None}, bos, eos, beam_size=beam, alpha=alpha,
                       max_len=max_len)


def exhaustive_best(lookup, vocab_size, eos, alpha, max_len):
    """Best sequence over everything beam search can return.

    Candidates are sequences ending in EOS (length <= max_len) and unfinished
    sequences of exactly max_len tokens; each is scored by logprob / lp(len).
    """
    best, best_score = None, -math.inf
    for n in range(1, max_len + 1):
        for seq in itertools.product(range(vocab_size), repeat=n):
            if eos in seq[:-1] or (seq[-1] != eos and n < max_len):
                continue
            lp = 0.0
            for i in range(n):
                lp += lookup(seq[:i])[seq[i]]
                if not np.isfinite(lp):
                    break
            if not np.isfinite(lp):
                continue
            score = lp / length_penalty(n, alpha)
            if score > best_score:
                best, best_score = list(seq), score
    return best, best_score


def random_table_lookup(rng, vocab_size, max_len, sparsity=0.0):
    """A random prefix-conditioned next-token distribution (a toy language model)."""
    cache = {}

    def lookup(prefix):
        if prefix not in cache:
            logits = rng.normal(scale=2.0, size=vocab_size)
            if sparsity:
                dead = rng.random(vocab_size) < sparsity
                dead[rng.integers(vocab_size)] = False
                logits[dead] = -np.inf
            z = logits - logits[np.isfinite(logits)].max()
            with np.errstate(divide="ignore"):
                cache[prefix] = z - np.log(np.exp(z).sum())
        return cache[prefix]

    # populate the whole tree up front so the table does not depend on query order
    for n in range(max_len):
        for seq in itertools.product(range(vocab_size), repeat=n):
            lookup(seq)
    return lookup


def model_lookup(model, src_ids):
    """Teacher-forced next-token log-probabilities of a model for a given prefix."""
    batch = pad_batch([(src_ids, [EOS])])
    noise = Noise.evaluation(model.config.graph_mode)
    dec = model.decoder
    with ad.no_grad():
        S, _, _ = model.encode(batch.src, batch.src_lengths, noise)
        keys = dec.attention_keys(S)
        init = dec.init_state(S, batch.src_mask)

    def lookup(prefix):
        with ad.no_grad():
            state = init
            for tok in (BOS,) + tuple(prefix):
                emb = ad.embedding(model.target_table, np.array([tok]))
                h_att, state, _ = dec.step(state, emb, S, keys, batch.src_mask)
            logp = dec.log_probs(h_att).data[0].copy()
        logp[PAD] = -np.inf
        logp[BOS] = -np.inf
        return logp

    return lookup


def hand_bleu(hyps, refs, max_ngram=4):
    """Textbook corpus BLEU written out long-hand (no shared code with the package)."""
    clipped = [0] * max_ngram
    total = [0] * max_ngram
    c = r = 0
    for h, ref in zip(hyps, refs):
        h, ref = h.split(), ref.split()
        c += len(h)
        r += len(ref)
        for n in range(1, max_ngram + 1):
            hc = Counter(tuple(h[i:i + n]) for i in range(len(h) - n + 1))
            rc = Counter(tuple(ref[i:i + n]) for i in range(len(ref) - n + 1))
            clipped[n - 1] += sum(min(k, rc[g]) for g, k in hc.items())
            total[n - 1] += sum(hc.values())
    if 0 in clipped:
        return 0.0
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return 100 * bp * math.exp(sum(math.log(a / b) for a, b in zip(clipped, total)) / max_ngram)
