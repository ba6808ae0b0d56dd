"""Parameter containers and recurrent building blocks shared by the model."""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def uniform_param(rng, shape, fan_in, name=None):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def zeros_param(shape, name=None):
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


class Module:
    """Owns named parameter tensors and child modules."""

    def parameters(self, prefix=""):
        out = {}
        for key, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out[prefix + key] = value
            elif isinstance(value, Module):
                out.update(value.parameters(prefix + key + "."))
        return out

    def num_parameters(self):
        return int(np.sum([p.data.size for p in self.parameters().values()]))


class Linear(Module):
    """y = x W^T + b with W of shape (out, in)."""

    def __init__(self, rng, n_in, n_out, bias=True):
        self.weight = uniform_param(rng, (n_out, n_in), n_in)
        self.bias = zeros_param((n_out,)) if bias else None

    def __call__(self, x):
        y = ad.matmul(x, ad.transpose(self.weight))
        if self.bias is not None:
            y = ad.add(y, self.bias)
        return y


class LSTM(Module):
    """Unidirectional LSTM; gate order is input, forget, output, candidate."""

    def __init__(self, rng, n_in, n_hidden):
        self.n_hidden = n_hidden
        self.w_input = uniform_param(rng, (n_in, 4 * n_hidden), n_hidden)
        self.w_hidden = uniform_param(rng, (n_hidden, 4 * n_hidden), n_hidden)
        bias = np.zeros(4 * n_hidden)
        bias[n_hidden:2 * n_hidden] = 1.0
        self.bias = Tensor(bias, requires_grad=True)

    def project_inputs(self, x):
        """Input contributions to all gates for a whole (batch, time, in) sequence."""
        return ad.add(ad.matmul(x, self.w_input), self.bias)

    def cell(self, gates_x, state):
        """Advance one step given precomputed input gates (batch, 4H)."""
        h, c = state
        H = self.n_hidden
        gates = gates_x if h is None else ad.add(gates_x, ad.matmul(h, self.w_hidden))
        sig = ad.sigmoid(gates[:, :3 * H])
        cand = ad.tanh(gates[:, 3 * H:])
        i, f, o = sig[:, :H], sig[:, H:2 * H], sig[:, 2 * H:]
        new_c = ad.mul(i, cand) if c is None else ad.add(ad.mul(f, c), ad.mul(i, cand))
        new_h = ad.mul(o, ad.tanh(new_c))
        return new_h, new_c

    def run(self, x):
        """Run over (batch, time, in); returns (batch, time, H)."""
        gx = self.project_inputs(x)
        state = (None, None)
        outs = []
        for t in range(x.shape[1]):
            state = self.cell(gx[:, t, :], state)
            outs.append(state[0])
        return ad.stack(outs, axis=1)


def reversal_index(lengths, width):
    """Per-row index that reverses the first ``lengths[b]`` positions.

    Positions past the end map to themselves, so padding stays at the tail.
    """
    pos = np.arange(width)[None, :]
    lengths = np.asarray(lengths)[:, None]
    return np.where(pos < lengths, lengths - 1 - pos, pos)


class BiLSTM(Module):
    """Bidirectional LSTM whose halves are concatenated (H_fwd + H_bwd = d)."""

    def __init__(self, rng, n_in, n_out):
        if n_out % 2:
            raise ValueError(f"BiLSTM output size must be even, got {n_out}")
        self.forward_lstm = LSTM(rng, n_in, n_out // 2)
        self.backward_lstm = LSTM(rng, n_in, n_out // 2)

    def __call__(self, x, lengths):
        b, m = x.shape[0], x.shape[1]
        fwd = self.forward_lstm.run(x)
        rev = reversal_index(lengths, m)
        rows = np.arange(b)[:, None]
        # reversing each sentence inside its own length keeps padding out of
        # the backward recurrence
        bwd = self.backward_lstm.run(x[rows, rev])[rows, rev]
        return ad.concat([fwd, bwd], axis=-1)
