"""Direction-aware graph convolution over a soft adjacency."""

import numpy as np

from . import autodiff as ad
from .layers import Module, uniform_param, zeros_param

ROW_SUM_TOL = 1e-6


class GcnParameters(Module):
    """Messages from heads, from dependents, and the self loop; no edge labels."""

    def __init__(self, rng, d):
        self.w_head = uniform_param(rng, (d, d), d)
        self.w_dep = uniform_param(rng, (d, d), d)
        self.w_self = uniform_param(rng, (d, d), d)
        self.bias = zeros_param((d,))


def check_adjacency(a):
    """Each row must be a distribution (sums to 1) or empty (all zeros)."""
    sums = np.asarray(a).sum(axis=-1)
    bad = (np.abs(sums - 1.0) > ROW_SUM_TOL) & (np.abs(sums) > ROW_SUM_TOL)
    if bad.any():
        raise ValueError(f"adjacency row sums outside tolerance: {sums[bad][:5]}")


def gcn_preactivation(s, a, params, dependents=True):
    def lin(w, x):
        return ad.matmul(x, ad.transpose(w))

    out = ad.add(lin(params.w_self, s), params.bias)
    out = ad.add(out, ad.matmul(a, lin(params.w_head, s)))
    if dependents:
        out = ad.add(out, ad.matmul(ad.transpose(a), lin(params.w_dep, s)))
    return out


def gcn_apply(s, a, params, dependents=True):
    """``ReLU(W_self s_i + sum_k a_ik W_head s_k + sum_j a_ji W_dep s_j + b)``.

    ``s`` is (m, d) or (batch, m, d); ``a`` matches with (m, m).
    """
    a = ad.as_tensor(a)
    if a.shape[-1] != a.shape[-2] or a.shape[-1] != s.shape[-2]:
        raise ValueError(f"adjacency {a.shape} does not fit states {s.shape}")
    check_adjacency(a.data)
    return ad.relu(gcn_preactivation(s, a, params, dependents))


class GcnLayer(Module):
    """Residual wrapper ``s + GCN(s, a)``."""

    def __init__(self, rng, d, residual=True, dependents=True):
        self.params = GcnParameters(rng, d)
        self.residual = residual
        self.dependents = dependents

    def __call__(self, s, a):
        out = gcn_apply(s, a, self.params, self.dependents)
        return ad.add(s, out) if self.residual else out

    def self_loop_only(self, s):
        """The layer with an empty graph: ``s + ReLU(W_self s + b)``."""
        out = ad.relu(ad.add(ad.matmul(s, ad.transpose(self.params.w_self)), self.params.bias))
        return ad.add(s, out) if self.residual else out
