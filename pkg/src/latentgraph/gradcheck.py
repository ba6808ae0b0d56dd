"""Finite-difference checks for every primitive and for the full sentence loss."""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_check
from .config import TrainConfig
from .data import pad_batch
from .gcn import GcnParameters, gcn_apply
from .model import DropoutMasks, LatentGraphModel, Noise
from .graph import sample_gumbel, sample_latent_graph

TOLERANCE = 1e-4
EPSILON = 1e-6


def _weighted(rng, shape):
    """Random linear read-out so every output coordinate carries gradient."""
    w = rng.normal(size=shape)
    return lambda y: ad.sum(ad.mul(y, w))


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def primitive_cases(rng):
    """Yield ``(name, function, point)`` triples covering every registered primitive."""
    shape = (3, 4)
    other = rng.normal(size=shape)
    read = _weighted(rng, shape)
    normal = rng.normal

    b_right, read_32 = normal(size=(4, 2)), _weighted(rng, (3, 2))
    yield "matmul[a]", lambda x: read_32(ad.matmul(x, b_right)), normal(size=shape)
    a_left, read_24 = normal(size=(2, 3)), _weighted(rng, (2, 4))
    yield "matmul[b]", lambda x: read_24(ad.matmul(a_left, x)), normal(size=shape)
    b_batch, read_b = normal(size=(2, 4, 2)), _weighted(rng, (2, 3, 2))
    yield "matmul[batched]", lambda x: read_b(ad.matmul(x, b_batch)), normal(size=(2, 3, 4))
    yield "add", lambda x: read(ad.add(x, other)), normal(size=shape)
    base, read_234 = normal(size=(2, 3, 4)), _weighted(rng, (2, 3, 4))
    yield "add[bias]", lambda x: read_234(ad.add(base, x)), normal(size=(4,))
    yield "sub[a]", lambda x: read(ad.sub(x, other)), normal(size=shape)
    yield "sub[b]", lambda x: read(ad.sub(other, x)), normal(size=shape)
    yield "mul", lambda x: read(ad.mul(x, other)), normal(size=shape)
    yield "scalar_mul", lambda x: read(ad.scalar_mul(x, -1.7)), normal(size=shape)
    yield "tanh", lambda x: read(ad.tanh(x)), normal(size=shape)
    yield "sigmoid", lambda x: read(ad.sigmoid(x)), normal(size=shape) * 3
    yield "relu", lambda x: read(ad.relu(x)), _away_from_zero(rng, shape)
    yield "exp", lambda x: read(ad.exp(x)), normal(size=shape)
    yield "log", lambda x: read(ad.log(x)), rng.uniform(0.5, 3.0, size=shape)
    yield "row_softmax", lambda x: read(ad.row_softmax(x)), normal(size=shape) * 2
    yield "row_log_softmax", lambda x: read(ad.row_log_softmax(x)), normal(size=shape) * 2
    mask = rng.random(shape) < 0.3
    mask[:, 0] = False
    yield "masked_fill", lambda x: read(ad.row_softmax(ad.masked_fill(x, mask))), normal(size=shape)
    extra, read_37 = Tensor(normal(size=(3, 3))), _weighted(rng, (3, 7))
    yield "concat", lambda x: read_37(ad.concat([x, extra], axis=1)), normal(size=shape)
    read_22 = _weighted(rng, (2, 2))
    yield "slice", lambda x: read_22(x[1:, 1:3]), normal(size=shape)
    idx, read_3 = (np.array([0, 2, 2]), np.array([3, 1, 1])), _weighted(rng, (3,))
    yield "slice[gather]", lambda x: read_3(x[idx]), normal(size=shape)
    read_43 = _weighted(rng, (4, 3))
    yield "transpose", lambda x: read_43(ad.transpose(x)), normal(size=shape)
    read_26 = _weighted(rng, (2, 6))
    yield "reshape", lambda x: read_26(ad.reshape(x, (2, 6))), normal(size=shape)
    ids, read_emb = rng.integers(0, 3, size=(2, 5)), _weighted(rng, (2, 5, 4))
    yield "embedding_gather", lambda x: read_emb(ad.embedding(x, ids)), normal(size=shape)
    weight, data, read_conv = normal(size=(3, 4, 2)), normal(size=(2, 5, 4)), _weighted(rng, (2, 5, 2))
    yield "conv1d[x]", lambda x: read_conv(ad.conv1d(x, weight)), normal(size=(2, 5, 4))
    yield "conv1d[w]", lambda x: read_conv(ad.conv1d(data, x)), normal(size=(3, 4, 2))

    def square_sum(x):
        rows = ad.sum(x, axis=1)
        return ad.sum(ad.mul(rows, rows))

    def square_mean(x):
        cols = ad.mean(x, axis=0)
        return ad.sum(ad.mul(cols, cols))

    yield "sum", square_sum, normal(size=shape)
    yield "mean", square_mean, normal(size=shape)
    keep = (rng.random(shape) > 0.3).astype(float)
    yield "dropout", lambda x: read(ad.dropout(x, keep, 0.3)), normal(size=shape)


def check_primitives(trials=100, seed=0, epsilon=EPSILON):
    """Max relative error per primitive case over ``trials`` seeded draws."""
    results = {}
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        for name, fn, point in primitive_cases(rng):
            err = grad_check(fn, point, epsilon)
            results[name] = max(results.get(name, 0.0), err)
    return results


def check_parameters(loss_fn, params, epsilon=EPSILON, coords=None, rng=None):
    """Max relative error of taped gradients w.r.t. named parameter tensors.

    ``loss_fn()`` must rebuild the loss from the current parameter values
    deterministically (noise and dropout masks fixed). With ``coords`` only
    that many randomly chosen entries of each tensor are perturbed.
    """
    rng = rng or np.random.default_rng(0)
    with ad.Tape() as tape:
        loss = loss_fn()
    grads = ad.backward(tape, loss)
    by_id = {id(t): g for t, g in grads.items()}
    errors = {}
    with ad.no_grad():
        for name, p in params.items():
            analytic = by_id.get(id(p), np.zeros_like(p.data))
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if coords is not None and coords < flat.size:
                idx = np.sort(rng.choice(flat.size, size=coords, replace=False))
            numeric = np.zeros(idx.size)
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + epsilon
                fp = float(loss_fn().data)
                flat[i] = orig - epsilon
                fm = float(loss_fn().data)
                flat[i] = orig
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise ad.AutodiffError(f"non-finite loss while perturbing {name}[{i}]")
                numeric[j] = (fp - fm) / (2 * epsilon)
            a = analytic.reshape(-1)[idx]
            denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(numeric)))
            errors[name] = float(np.max(np.abs(a - numeric) / denom))
    return errors


def tiny_instance(encoder="embeddings", latent_graph=True, seed=0, d=8, m=4, n=3, vocab=7,
                  dropout=0.2, batch=2):
    """A small model with fixed Gumbel noise and dropout masks, ready for finite differences."""
    rng = np.random.default_rng(seed)
    config = TrainConfig(hidden_size=d, d_k=d, encoder=encoder, latent_graph=latent_graph,
                         dropout=dropout, seed=seed)
    model = LatentGraphModel(config, vocab, vocab)
    examples = []
    for b in range(batch):
        src_len = m - b % 2 if m > 2 else m
        examples.append((list(rng.integers(4, vocab, size=src_len)),
                         list(rng.integers(4, vocab, size=n))))
    batch_ = pad_batch(examples)
    masks = DropoutMasks(dropout, np.random.default_rng([seed, 7]))
    noise = Noise(sample_gumbel(rng, (batch, m, m)), 0.9, masks, "sample")
    # draw every mask once so later forward passes replay them exactly
    with ad.no_grad():
        model.loss(batch_, noise)
    noise.dropout.rng = None
    return model, batch_, noise


def check_sentence_loss(encoder="embeddings", latent_graph=True, seed=0, epsilon=EPSILON, coords=None):
    model, batch, noise = tiny_instance(encoder, latent_graph, seed)
    errors = check_parameters(lambda: model.loss(batch, noise), model.parameters(), epsilon, coords,
                              np.random.default_rng([seed, 11]))
    return max(errors.values()), errors


def check_components(seed=0, epsilon=EPSILON):
    """Gradient checks through the graph sampler and the GCN in isolation."""
    rng = np.random.default_rng(seed)
    out = {}
    q, k = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    g = sample_gumbel(rng, (4, 4))
    w = rng.normal(size=(4, 4))
    mask = np.eye(4, dtype=bool)

    def sampled(x):
        lam = ad.masked_fill(ad.scalar_mul(ad.matmul(x, ad.transpose(Tensor(k))), 1 / np.sqrt(3)), mask)
        return ad.sum(ad.mul(sample_latent_graph(lam, 0.7, g), w))

    out["sample_latent_graph"] = grad_check(sampled, q, epsilon)
    params = GcnParameters(rng, 3)
    s = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    # the adjacency is reached through softmax logits so perturbations stay on the simplex
    logits = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
    read = rng.normal(size=(4, 3))

    def gcn_loss():
        a = ad.row_softmax(ad.masked_fill(logits, mask))
        return ad.sum(ad.mul(gcn_apply(s, a, params), read))

    named = dict(params.parameters(), s=s, adjacency_logits=logits)
    errs = check_parameters(gcn_loss, named, epsilon)
    out["gcn_apply"] = max(errs.values())
    return out


def run_suite(trials=100, seed=0, coords=None):
    """Everything ``grad-check`` reports: ``{label: max relative error}``."""
    report = {f"primitive/{k}": v for k, v in check_primitives(trials, seed).items()}
    report.update({f"component/{k}": v for k, v in check_components(seed).items()})
    for encoder in ("embeddings", "cnn", "rnn"):
        for latent in (True, False):
            label = f"sentence_loss/{encoder}/{'latent' if latent else 'baseline'}"
            report[label] = check_sentence_loss(encoder, latent, seed, coords=coords)[0]
    return report
