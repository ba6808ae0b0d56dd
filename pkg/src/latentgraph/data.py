"""Vocabularies, parallel corpora, batching and synthetic tasks."""

import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<s>", "</s>")
MIN_SOURCE_LENGTH = 2
TASKS = ("copy", "reverse", "longrange")


class Vocabulary:
    """Token/id maps with PAD=0, UNK=1, BOS=2, EOS=3 reserved."""

    def __init__(self, tokens=()):
        self.itos = list(RESERVED)
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        for tok in tokens:
            if tok in self.stoi:
                raise ValueError(f"duplicate or reserved token {tok!r}")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    @property
    def tokens(self):
        return self.itos[len(RESERVED):]

    def encode(self, tokens, eos=False):
        ids = [self.stoi.get(t, UNK) for t in tokens]
        return ids + [EOS] if eos else ids

    def decode(self, ids):
        out = []
        for i in ids:
            i = int(i)
            if i == EOS:
                break
            if i in (PAD, BOS):
                continue
            out.append(self.itos[i])
        return out

    def digest(self):
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()


def build_vocab(sentences, max_size):
    """Keep the most frequent tokens; ties break lexicographically.

    ``max_size`` is the largest id handed out, so at most
    ``max_size - 3`` corpus tokens join the four reserved ones.
    """
    if max_size <= len(RESERVED):
        raise ValueError(f"max_size must exceed {len(RESERVED)}")
    counts = Counter(tok for sent in sentences for tok in sent)
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = [tok for tok, _ in ranked if tok not in RESERVED][: max_size - len(RESERVED) + 1]
    return Vocabulary(keep)


@dataclass
class Corpus:
    """Aligned (source tokens, target tokens) pairs."""

    pairs: list = field(default_factory=list)
    rules: dict = None

    def __post_init__(self):
        for src, tgt in self.pairs:
            if not src or not tgt:
                raise ValueError("corpus pairs must have non-empty sides")

    def __len__(self):
        return len(self.pairs)

    @property
    def sources(self):
        return [s for s, _ in self.pairs]

    @property
    def targets(self):
        return [t for _, t in self.pairs]

    def split(self, n_first):
        return Corpus(self.pairs[:n_first], self.rules), Corpus(self.pairs[n_first:], self.rules)


def read_lines(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return [line.split() for line in fh.read().splitlines()]
    except OSError as err:
        raise OSError(f"cannot read {path}: {err.strerror}") from err


def write_lines(path, sentences):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for sent in sentences:
                fh.write(" ".join(sent) + "\n")
    except OSError as err:
        raise OSError(f"cannot write {path}: {err.strerror}") from err


def read_corpus(src_path, tgt_path):
    """Read a parallel corpus; pairs with sources shorter than 2 tokens are dropped."""
    src, tgt = read_lines(src_path), read_lines(tgt_path)
    if len(src) != len(tgt):
        raise ValueError(f"{src_path} has {len(src)} lines but {tgt_path} has {len(tgt)}")
    pairs, dropped = [], 0
    for s, t in zip(src, tgt):
        if len(s) < MIN_SOURCE_LENGTH or not t:
            dropped += 1
            continue
        pairs.append((s, t))
    if dropped:
        logger.warning("dropped %d pairs with a source shorter than %d tokens or empty target",
                       dropped, MIN_SOURCE_LENGTH)
    rules_path = Path(str(src_path) + ".rules.json")
    rules = json.loads(rules_path.read_text()) if rules_path.exists() else None
    return Corpus(pairs, rules)


def write_corpus(corpus, src_path, tgt_path):
    write_lines(src_path, corpus.sources)
    write_lines(tgt_path, corpus.targets)
    if corpus.rules is not None:
        Path(str(src_path) + ".rules.json").write_text(json.dumps(corpus.rules, indent=1, sort_keys=True))


@dataclass
class Batch:
    src: np.ndarray
    src_lengths: np.ndarray
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    tgt_mask: np.ndarray
    index: np.ndarray

    @property
    def src_mask(self):
        return np.arange(self.src.shape[1])[None, :] < self.src_lengths[:, None]

    def __len__(self):
        return self.src.shape[0]


def pad_batch(examples, index=None):
    """Pad (source ids, target ids) pairs; targets gain BOS/EOS."""
    b = len(examples)
    m = max(len(s) for s, _ in examples)
    n = max(len(t) for _, t in examples) + 1
    src = np.full((b, m), PAD, dtype=np.int64)
    tgt_in = np.full((b, n), PAD, dtype=np.int64)
    tgt_out = np.full((b, n), PAD, dtype=np.int64)
    lengths = np.zeros(b, dtype=np.int64)
    for r, (s, t) in enumerate(examples):
        src[r, : len(s)] = s
        lengths[r] = len(s)
        tgt_in[r, : len(t) + 1] = [BOS] + list(t)
        tgt_out[r, : len(t) + 1] = list(t) + [EOS]
    index = np.arange(b) if index is None else np.asarray(index)
    return Batch(src, lengths, tgt_in, tgt_out, tgt_out != PAD, index)


def encode_pairs(corpus, src_vocab, tgt_vocab):
    return [(src_vocab.encode(s), tgt_vocab.encode(t)) for s, t in corpus.pairs]


def batch_iter(examples, batch_size, seed, epoch, shuffle=True):
    """Yield padded batches; order depends only on (seed, epoch)."""
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    order = np.arange(len(examples))
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(len(examples))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield pad_batch([examples[i] for i in idx], idx)


# --------------------------------------------------------------------------
# synthetic tasks


def _latin_rules(rng, n_markers):
    """Class table over (first, last) marker pairs where neither marker alone is informative."""
    first = rng.permutation(n_markers)
    last = rng.permutation(n_markers)
    cls = rng.permutation(n_markers)
    table = {}
    for i in range(n_markers):
        for j in range(n_markers):
            table[f"L{i}|R{j}"] = f"C{cls[(first[i] + last[j]) % n_markers]}"
    return table


def longrange_target(source, rules):
    """Class token decided by the two end markers, followed by the middle words."""
    return [rules["table"][f"{source[0]}|{source[-1]}"]] + list(source[1:-1])


def gen_synthetic(task, size, vocab_size, max_len, seed, min_len=MIN_SOURCE_LENGTH, n_markers=4):
    """Generate a synthetic parallel corpus.

    copy: target equals source. reverse: target is the reversed source.
    longrange: source ``L_i w ... w R_j``; the target starts with a class
    token fixed by the (L_i, R_j) pair through a seeded rule table, then
    repeats the middle words. ``vocab_size`` counts distinct source tokens.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    if max_len < MIN_SOURCE_LENGTH:
        raise ValueError("max_len must be at least 2")
    min_len = max(min_len, MIN_SOURCE_LENGTH)
    if min_len > max_len:
        raise ValueError("min_len exceeds max_len")
    rng = np.random.default_rng(seed)
    if task == "longrange":
        n_words = vocab_size - 2 * n_markers
        if n_words < 1:
            raise ValueError("vocab_size too small for the marker inventory")
        if min_len < 3:
            min_len = 3
        words = [f"w{i}" for i in range(n_words)]
        rules = {"task": "longrange", "seed": int(seed), "n_markers": int(n_markers),
                 "table": _latin_rules(rng, n_markers)}
        pairs = []
        for _ in range(size):
            m = int(rng.integers(min_len, max_len + 1))
            middle = [words[i] for i in rng.integers(0, n_words, size=m - 2)]
            src = [f"L{rng.integers(n_markers)}"] + middle + [f"R{rng.integers(n_markers)}"]
            pairs.append((src, longrange_target(src, rules)))
        return Corpus(pairs, rules)
    words = [f"w{i}" for i in range(vocab_size)]
    pairs = []
    for _ in range(size):
        m = int(rng.integers(min_len, max_len + 1))
        src = [words[i] for i in rng.integers(0, vocab_size, size=m)]
        tgt = list(src) if task == "copy" else src[::-1]
        pairs.append((src, tgt))
    return Corpus(pairs, {"task": task, "seed": int(seed)})
