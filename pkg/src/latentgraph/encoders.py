"""Translation-side source encoders and the baseline residual layer."""

import numpy as np

from . import autodiff as ad
from .layers import BiLSTM, Module, uniform_param, zeros_param

ENCODER_KINDS = ("embeddings", "cnn", "rnn")


def positional_encodings(m, d):
    """Sinusoidal encodings: sin on even columns, cos on odd columns."""
    if d % 2:
        raise ValueError(f"positional encodings need an even dimension, got {d}")
    pos = np.arange(m, dtype=np.float64)[:, None]
    freq = np.power(10000.0, np.arange(0, d, 2, dtype=np.float64) / d)
    pe = np.zeros((m, d))
    pe[:, 0::2] = np.sin(pos / freq)
    pe[:, 1::2] = np.cos(pos / freq)
    return pe


def add_positions(x):
    """Add sinusoidal encodings to a (batch, m, d) tensor."""
    return ad.add(x, positional_encodings(x.shape[1], x.shape[2]))


def baseline_residual_layer(s, weight, bias):
    """``s + ReLU(W s + b)``: a dense residual layer, i.e. a self-loop-only GCN."""
    return ad.add(s, ad.relu(ad.add(ad.matmul(s, ad.transpose(weight)), bias)))


class EmbeddingsEncoder(Module):
    """Embeddings plus position encodings; no parameters of its own."""

    kind = "embeddings"

    def __init__(self, rng=None, d=None, use_positions=True):
        self.use_positions = use_positions

    def __call__(self, embedded, lengths):
        return add_positions(embedded) if self.use_positions else embedded


class CNNEncoder(Module):
    """Stacked same-padded convolutions with ReLU over embeddings + positions.

    Two width-3 layers give a receptive field of five tokens.
    """

    kind = "cnn"

    def __init__(self, rng, d, width=3, layers=2):
        self.width = width
        self.n_layers = layers
        for i in range(layers):
            setattr(self, f"conv{i}", uniform_param(rng, (width, d, d), width * d))
            setattr(self, f"bias{i}", zeros_param((d,)))

    @property
    def receptive_field(self):
        return 1 + self.n_layers * (self.width - 1)

    def __call__(self, embedded, lengths):
        x = add_positions(embedded)
        m = x.shape[1]
        keep = (np.arange(m)[None, :] < np.asarray(lengths)[:, None]).astype(np.float64)
        keep = np.broadcast_to(keep[:, :, None], x.shape)
        for i in range(self.n_layers):
            # zero padded positions so they never leak into real ones
            x = ad.mul(x, keep)
            x = ad.relu(ad.add(ad.conv1d(x, getattr(self, f"conv{i}")), getattr(self, f"bias{i}")))
        return x


class RNNEncoder(Module):
    """Bidirectional LSTM with d/2 units per direction."""

    kind = "rnn"

    def __init__(self, rng, d):
        self.bilstm = BiLSTM(rng, d, d)

    def __call__(self, embedded, lengths):
        return self.bilstm(embedded, lengths)


def make_encoder(kind, rng, d):
    if kind == "embeddings":
        return EmbeddingsEncoder(rng, d)
    if kind == "cnn":
        return CNNEncoder(rng, d)
    if kind == "rnn":
        return RNNEncoder(rng, d)
    raise ValueError(f"unknown encoder kind {kind!r}; expected one of {ENCODER_KINDS}")
