"""Stochastic latent graph over source tokens.

A dedicated BiLSTM reads the (shared) source embeddings, query and key
projections score every ordered pair of positions, and each row of the
adjacency is drawn from a Concrete distribution by perturbing the head
potentials with externally supplied Gumbel noise.
"""

import io
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .layers import BiLSTM, Module, uniform_param

TAU_FLOOR = 1e-3


class GraphError(ValueError):
    pass


@dataclass
class TemperatureSchedule:
    tau0: float = 2.0
    decay_rate: float = 0.99
    decay_steps: int = 1

    def __post_init__(self):
        if self.tau0 <= 0:
            raise ValueError("tau0 must be positive")
        if not 0 < self.decay_rate <= 1:
            raise ValueError("decay_rate must lie in (0, 1]")
        if self.decay_steps < 1:
            raise ValueError("decay_steps must be a positive integer")

    def __call__(self, t):
        return temperature(self, t)


def temperature(schedule, t):
    """Exponentially decayed temperature after ``t`` updates (staircase)."""
    if t < 0:
        raise ValueError("update count must be non-negative")
    return schedule.tau0 * schedule.decay_rate ** (int(t) // schedule.decay_steps)


@dataclass
class LatentGraph:
    """One sentence's relaxed adjacency; row ``i`` is a distribution over heads of ``i``."""

    a: np.ndarray
    tau_used: float = float("nan")
    noise_seed: int = -1

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        m = self.a.shape[0]
        if self.a.shape != (m, m):
            raise GraphError(f"adjacency must be square, got {self.a.shape}")

    @property
    def size(self):
        return self.a.shape[0]

    def to_csv(self):
        buf = io.StringIO()
        for row in self.a:
            buf.write(",".join(repr(float(v)) for v in row))
            buf.write("\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, **kwargs):
        rows = [line for line in text.splitlines() if line.strip()]
        a = np.array([[float(v) for v in line.split(",")] for line in rows])
        return cls(a, **kwargs)


def check_sentence_lengths(lengths):
    lengths = np.asarray(lengths)
    if lengths.size and lengths.min() < 2:
        raise GraphError("sentence too short for graph induction")


def graph_encode(encoder, embeddings, lengths):
    """Run the graph component's own BiLSTM over (batch, m, e) embeddings."""
    check_sentence_lengths(lengths)
    return encoder(embeddings, lengths)


def project_query_key(states, w_query, w_key):
    """Queries and keys; both weights have shape (d_k, d)."""
    d = states.shape[-1]
    for w in (w_query, w_key):
        if w.shape[-1] != d:
            raise GraphError(f"projection expects input dimension {w.shape[-1]}, states have {d}")
    q = ad.matmul(states, ad.transpose(w_query))
    k = ad.matmul(states, ad.transpose(w_key))
    return q, k


def potential_mask(m, lengths=None, batch=None):
    """True where a head is not allowed: the diagonal and padded columns."""
    eye = np.eye(m, dtype=bool)
    if lengths is None:
        return eye if batch is None else np.broadcast_to(eye, (batch, m, m))
    lengths = np.asarray(lengths)
    pad = np.arange(m)[None, :] >= lengths[:, None]
    return eye[None] | pad[:, None, :] | pad[:, :, None]


def head_potentials(q, k, lengths=None):
    """Scaled dot-product scores ``q_i . k_k / sqrt(d_k)`` with masked diagonal.

    Accepts (m, d_k) or (batch, m, d_k). With ``lengths`` the rows and
    columns of padded positions are masked too.
    """
    d_k = q.shape[-1]
    if d_k <= 0 or q.shape != k.shape:
        raise GraphError(f"query/key shapes differ: {q.shape} vs {k.shape}")
    scores = ad.scalar_mul(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(d_k))
    m = q.shape[-2]
    batch = q.shape[0] if q.ndim == 3 else None
    return ad.masked_fill(scores, potential_mask(m, lengths, batch), ad.NEG_INF)


def sample_gumbel(rng, shape):
    """Standard Gumbel noise ``-log(-log(u))``."""
    u = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=shape)
    return -np.log(-np.log(u))


def sample_latent_graph(potentials, tau, gumbel_noise):
    """Concrete relaxation of each row: ``softmax((lambda_i + g_i) / tau)``.

    The noise is an input, so the result is a deterministic differentiable
    function of the potentials.
    """
    if not tau > 0:
        raise GraphError(f"temperature must be positive, got {tau}")
    lam = ad.as_tensor(potentials)
    g = np.asarray(gumbel_noise, dtype=np.float64)
    if g.shape != lam.shape:
        raise GraphError(f"noise shape {g.shape} does not match potentials {lam.shape}")
    live = np.isfinite(lam.data)
    if not np.isfinite(g[live]).all():
        raise GraphError("gumbel noise is non-finite at an unmasked position")
    g = np.where(live, g, 0.0)
    return ad.row_softmax(ad.scalar_mul(ad.add(lam, g), 1.0 / tau))


def head_marginals(potentials):
    """Deterministic head distribution ``softmax(lambda_i)`` per row."""
    return ad.row_softmax(ad.as_tensor(potentials))


class GraphComponent(Module):
    """BiLSTM + query/key projections; the embedding table is passed in."""

    def __init__(self, rng, embed_dim, hidden_size, d_k):
        self.encoder = BiLSTM(rng, embed_dim, hidden_size)
        self.w_query = uniform_param(rng, (d_k, hidden_size), hidden_size)
        self.w_key = uniform_param(rng, (d_k, hidden_size), hidden_size)

    def potentials(self, embeddings, lengths):
        states = graph_encode(self.encoder, embeddings, lengths)
        q, k = project_query_key(states, self.w_query, self.w_key)
        return head_potentials(q, k, lengths)
