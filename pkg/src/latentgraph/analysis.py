"""Graph diagnostics (head distance, entropy), graph export and corpus BLEU."""

import math
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .graph import LatentGraph

ROW_SUM_TOL = 1e-6


def _matrix(a):
    return np.asarray(a.a if isinstance(a, LatentGraph) else a, dtype=np.float64)


def head_distance(a):
    """``|i - argmax_k a_ik|`` per word; ties go to the smaller index."""
    a = _matrix(a)
    if a.shape[0] < 2:
        raise ValueError("head distance needs at least two words")
    # np.argmax returns the first maximum, i.e. the smallest index
    heads = np.argmax(a, axis=1)
    return np.abs(np.arange(a.shape[0]) - heads).tolist()


def head_entropy(a):
    """Entropy in nats of each row's head distribution (``0 log 0 = 0``)."""
    a = _matrix(a)
    sums = a.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL) or np.any(a < 0):
        raise ValueError("adjacency rows must be probability distributions")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(a > 0, a * np.log(np.where(a > 0, a, 1.0)), 0.0)
    return (-terms.sum(axis=1)).tolist()


@dataclass
class GraphStats:
    mean_head_distance: float
    distance_std: float
    mean_entropy_nats: float
    entropy_std: float
    sentence_count: int
    word_count: int = 0

    def to_dict(self):
        return asdict(self)

    def report(self):
        return "".join(f"{k}: {v}\n" for k, v in self.to_dict().items())


def graph_stats(graphs):
    """Pool per-word distances and entropies over all sentences."""
    graphs = list(graphs)
    if not graphs:
        raise ValueError("no graphs to summarise")
    dist = np.concatenate([head_distance(a) for a in graphs]).astype(np.float64)
    ent = np.concatenate([head_entropy(a) for a in graphs])
    return GraphStats(float(dist.mean()), float(dist.std()), float(ent.mean()), float(ent.std()),
                      len(graphs), int(dist.size))


def _dot_escape(token):
    return str(token).replace("\\", "\\\\").replace('"', '\\"')


def to_dot(a, tokens, threshold=0.05):
    a = _matrix(a)
    lines = ["digraph latent_graph {", "  rankdir=LR;"]
    for i, tok in enumerate(tokens):
        lines.append(f'  n{i} [label="{_dot_escape(tok)}"];')
    for i in range(a.shape[0]):
        for k in range(a.shape[1]):
            if a[i, k] >= threshold:
                lines.append(f'  n{i} -> n{k} [weight={a[i, k]:.6f}, label="{a[i, k]:.2f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_graph(a, tokens, fmt="dot", path=None, threshold=0.05):
    """Render a graph as Graphviz DOT (edges ``i -> k`` with ``a_ik >= threshold``) or CSV."""
    mat = _matrix(a)
    if len(tokens) != mat.shape[0]:
        raise ValueError(f"{len(tokens)} tokens for a {mat.shape[0]}x{mat.shape[0]} graph")
    if fmt == "dot":
        text = to_dot(mat, tokens, threshold)
    elif fmt == "csv":
        text = LatentGraph(mat).to_csv()
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_graph_csv(path):
    return LatentGraph.from_csv(Path(path).read_text(encoding="utf-8")).a


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _tokens(x):
    return x.split() if isinstance(x, str) else list(x)


def bleu(hypotheses, references, max_ngram=4):
    """Corpus BLEU (single reference, no smoothing) on whitespace tokens, in [0, 100]."""
    if len(hypotheses) != len(references):
        raise ValueError("hypothesis and reference counts differ")
    if not hypotheses:
        raise ValueError("cannot score an empty corpus")
    matches = [0] * max_ngram
    totals = [0] * max_ngram
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = _tokens(hyp), _tokens(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_ngram + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    if min(matches) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_ngram
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p)


def token_accuracy(hypotheses, references):
    """Position-wise token matches over ``max(len(hyp), len(ref))`` summed over the corpus."""
    total = correct = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = _tokens(hyp), _tokens(ref)
        total += max(len(hyp), len(ref))
        correct += sum(a == b for a, b in zip(hyp, ref))
    return correct / total if total else 0.0


def sequence_accuracy(hypotheses, references):
    pairs = list(zip(hypotheses, references))
    return sum(_tokens(h) == _tokens(r) for h, r in pairs) / len(pairs) if pairs else 0.0
