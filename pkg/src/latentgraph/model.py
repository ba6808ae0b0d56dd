"""The two-component model: latent graph sampler + graph-informed translator."""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainConfig
from .data import BOS, EOS, PAD, pad_batch
from .decoder import Decoder, beam_search, strip_eos
from .encoders import make_encoder
from .gcn import GcnLayer
from .graph import GraphComponent, head_marginals, sample_gumbel, sample_latent_graph
from .layers import Module


class DropoutMasks:
    """Supplies dropout keep-masks by name.

    Masks come from ``fixed`` when present, otherwise they are drawn from
    ``rng`` and remembered so the same forward pass can be replayed.
    """

    def __init__(self, p, rng=None, fixed=None):
        self.p = float(p)
        self.rng = rng
        self.masks = dict(fixed or {})

    def __call__(self, name, x):
        if self.p == 0.0:
            return x
        mask = self.masks.get(name)
        if mask is None:
            if self.rng is None:
                return x
            mask = (self.rng.random(x.shape) >= self.p).astype(np.float64)
            self.masks[name] = mask
        return ad.dropout(x, mask, self.p)


NO_DROPOUT = DropoutMasks(0.0)


@dataclass
class Noise:
    """Everything random in one forward pass, fixed up front."""

    gumbel: np.ndarray = None
    tau: float = 1.0
    dropout: DropoutMasks = field(default_factory=lambda: NO_DROPOUT)
    graph_mode: str = "sample"

    @classmethod
    def draw(cls, rng, batch, tau, p_dropout):
        b, m = batch.src.shape
        return cls(sample_gumbel(rng, (b, m, m)), tau, DropoutMasks(p_dropout, rng), "sample")

    @classmethod
    def evaluation(cls, graph_mode="marginal", rng=None, shape=None, tau=1.0):
        gumbel = sample_gumbel(rng, shape) if graph_mode == "sample" else None
        return cls(gumbel, tau, NO_DROPOUT, graph_mode)


class LatentGraphModel(Module):
    def __init__(self, config, src_vocab_size, tgt_vocab_size):
        self.config = config
        d = config.hidden_size
        rng = np.random.default_rng(config.seed)
        self.src_embedding = Tensor(rng.normal(0.0, 1.0, (src_vocab_size, d)), requires_grad=True)
        if config.tie_embeddings:
            if src_vocab_size != tgt_vocab_size:
                raise ValueError("tied embeddings need a joint vocabulary")
            self.tgt_embedding = None
        else:
            self.tgt_embedding = Tensor(rng.normal(0.0, 1.0, (tgt_vocab_size, d)), requires_grad=True)
        self.graph = GraphComponent(rng, d, d, config.d_k) if config.latent_graph else None
        self.encoder = make_encoder(config.encoder, rng, d)
        # the baseline keeps the same GCN block and feeds it no edges
        self.gcn = GcnLayer(rng, d, config.gcn_residual, config.gcn_dependents)
        self.decoder = Decoder(rng, d, d, tgt_vocab_size, config.input_feeding)

    @property
    def target_table(self):
        return self.src_embedding if self.tgt_embedding is None else self.tgt_embedding

    def translation_parameters(self):
        params = self.parameters()
        return {k: v for k, v in params.items() if not k.startswith("graph.")}

    # ------------------------------------------------------------------
    def graph_potentials(self, src, lengths, noise=None):
        noise = noise or Noise.evaluation()
        emb = noise.dropout("src_emb", ad.embedding(self.src_embedding, src))
        return self.graph.potentials(emb, lengths)

    def encode(self, src, lengths, noise):
        """Graph-informed source states; also returns (potentials, adjacency)."""
        emb = noise.dropout("src_emb", ad.embedding(self.src_embedding, src))
        potentials = adjacency = None
        s = noise.dropout("enc_out", self.encoder(emb, lengths))
        if self.graph is None:
            return self.gcn.self_loop_only(s), None, None
        potentials = self.graph.potentials(emb, lengths)
        if noise.graph_mode == "sample":
            adjacency = sample_latent_graph(potentials, noise.tau, noise.gumbel)
        else:
            adjacency = head_marginals(potentials)
        return self.gcn(s, adjacency), potentials, adjacency

    def sentence_losses(self, batch, noise):
        """Per-sentence negative log-likelihood summed over target tokens, shape (batch,)."""
        if batch.tgt_mask.sum(axis=1).min() == 0:
            raise ValueError("target length must be positive")
        S, potentials, adjacency = self.encode(batch.src, batch.src_lengths, noise)
        self.last_graph = (potentials, adjacency)
        src_mask = batch.src_mask
        dec = self.decoder
        keys = dec.attention_keys(S)
        state = dec.init_state(S, src_mask)
        y_emb = noise.dropout("tgt_emb", ad.embedding(self.target_table, batch.tgt_in))
        outs = []
        for j in range(batch.tgt_in.shape[1]):
            h_att, state, _ = dec.step(state, y_emb[:, j, :], S, keys, src_mask)
            outs.append(h_att)
        logp = dec.log_probs(ad.stack(outs, axis=1))
        gold = np.zeros(logp.shape)
        b, n = batch.tgt_out.shape
        rows, cols = np.nonzero(batch.tgt_mask)
        gold[rows, cols, batch.tgt_out[rows, cols]] = 1.0
        nll = ad.scalar_mul(ad.sum(ad.mul(logp, gold), axis=(1, 2)), -1.0)
        return nll

    def loss(self, batch, noise):
        return ad.mean(self.sentence_losses(batch, noise))

    # ------------------------------------------------------------------
    def _forbid(self, logp):
        logp[:, PAD] = -np.inf
        logp[:, BOS] = -np.inf
        return logp

    def greedy(self, src_ids, max_len, noise=None):
        """Batched greedy decoding of a list of source id lists."""
        batch = pad_batch([(s, [EOS]) for s in src_ids])
        noise = noise or Noise.evaluation(self.config.graph_mode)
        with ad.no_grad():
            S, _, _ = self.encode(batch.src, batch.src_lengths, noise)
            dec = self.decoder
            keys = dec.attention_keys(S)
            src_mask = batch.src_mask
            state = dec.init_state(S, src_mask)
            prev = np.full(len(batch), BOS)
            done = np.zeros(len(batch), dtype=bool)
            out = [[] for _ in range(len(batch))]
            for _ in range(max_len):
                emb = ad.embedding(self.target_table, prev)
                h_att, state, _ = dec.step(state, emb, S, keys, src_mask)
                logp = self._forbid(dec.log_probs(h_att).data.copy())
                prev = np.argmax(logp, axis=1)
                for r in np.nonzero(~done)[0]:
                    if prev[r] == EOS:
                        done[r] = True
                    else:
                        out[r].append(int(prev[r]))
                if done.all():
                    break
        return out

    def beam(self, src, beam_size, alpha, max_len, noise=None):
        """Beam search for one source id list; returns token ids without EOS."""
        batch = pad_batch([(src, [EOS])])
        noise = noise or Noise.evaluation(self.config.graph_mode)
        dec = self.decoder
        with ad.no_grad():
            S, _, _ = self.encode(batch.src, batch.src_lengths, noise)
            keys = dec.attention_keys(S)
            state0 = dec.init_state(S, batch.src_mask)
        m = S.shape[1]

        def step_fn(st, tokens):
            k = len(tokens)
            S_k = ad.Tensor(np.broadcast_to(S.data, (k,) + S.shape[1:]))
            keys_k = ad.Tensor(np.broadcast_to(keys.data, (k,) + keys.shape[1:]))
            mask_k = np.ones((k, m), dtype=bool)
            with ad.no_grad():
                emb = ad.embedding(self.target_table, tokens)
                h_att, new, _ = dec.step(st["state"], emb, S_k, keys_k, mask_k)
                logp = self._forbid(dec.log_probs(h_att).data.copy())
            st["next"] = new
            return logp

        def reorder_fn(st, rows):
            new = st["next"]

            def pick(x):
                return None if x is None else ad.Tensor(np.asarray(x.data if isinstance(x, Tensor) else x)[rows])

            return {"state": type(new)(h=pick(new.h), c=pick(new.c), feed=pick(new.feed))}

        hyp = beam_search(step_fn, reorder_fn, {"state": state0}, BOS, EOS,
                          beam_size=beam_size, alpha=alpha, max_len=max_len)
        return strip_eos(hyp.tokens, EOS)

    def latent_graphs(self, src_ids, graph_mode="marginal", rng=None, tau=1.0):
        """Per-sentence adjacency matrices (trimmed to sentence length)."""
        if self.graph is None:
            raise ValueError("model has no graph component")
        batch = pad_batch([(s, [EOS]) for s in src_ids])
        with ad.no_grad():
            lam = self.graph_potentials(batch.src, batch.src_lengths)
            if graph_mode == "sample":
                a = sample_latent_graph(lam, tau, sample_gumbel(rng, lam.shape)).data
            else:
                a = head_marginals(lam).data
        return [a[r, :n, :n].copy() for r, n in enumerate(batch.src_lengths)]


def build_model(config: TrainConfig, src_vocab_size, tgt_vocab_size):
    return LatentGraphModel(config, src_vocab_size, tgt_vocab_size)
