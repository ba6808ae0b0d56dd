"""Single-sample reparameterized training with Adam and temperature decay."""

import csv
import io
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import TrainConfig
from .data import Vocabulary, batch_iter, build_vocab, encode_pairs
from .graph import TAU_FLOOR, TemperatureSchedule, temperature
from .model import LatentGraphModel, Noise

logger = logging.getLogger(__name__)

MAGIC = b"LGCKPT\x00\x01"
FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads):
        """Apply one update from a name -> gradient mapping (missing names count as zero)."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = grads.get(name)
            m, v = self.m[name], self.v[name]
            m *= b1
            v *= b2
            if g is not None:
                m += (1.0 - b1) * g
                v += (1.0 - b2) * g * g
            if self.lr:
                p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def global_norm(grads):
    return float(np.sqrt(np.sum([np.vdot(g, g) for g in grads.values()]))) if grads else 0.0


def clip_by_global_norm(grads, max_norm):
    norm = global_norm(grads)
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def sentence_loss(model, batch, noise):
    """Mean over the batch of the per-sentence summed token NLL."""
    return model.loss(batch, noise)


def graph_statistics(model):
    potentials, adjacency = getattr(model, "last_graph", (None, None))
    stats = {}
    for name, t in (("potentials", potentials), ("adjacency", adjacency)):
        if t is None:
            continue
        data = t.data
        live = data[np.isfinite(data)]
        stats[name] = {"min": float(live.min()) if live.size else None,
                       "max": float(live.max()) if live.size else None,
                       "nan": int(np.isnan(data).sum())}
    return stats


@dataclass
class TrainState:
    model: LatentGraphModel
    optimizer: Adam
    schedule: TemperatureSchedule
    rng: np.random.Generator
    t: int = 0


def make_state(config, src_vocab_size, tgt_vocab_size, updates_per_epoch):
    model = LatentGraphModel(config, src_vocab_size, tgt_vocab_size)
    decay_steps = config.decay_steps or max(1, updates_per_epoch)
    schedule = TemperatureSchedule(config.tau0, config.decay_rate, decay_steps)
    optimizer = Adam(model.parameters(), lr=config.learning_rate)
    return TrainState(model, optimizer, schedule, np.random.default_rng([config.seed, 1]))


def train_step(state, batch, config):
    """One Adam update on one batch; returns ``{loss, tau, grad_norm}``."""
    tau = max(temperature(state.schedule, state.t), TAU_FLOOR)
    noise = Noise.draw(state.rng, batch, tau, config.dropout)
    params = state.optimizer.params
    try:
        with ad.Tape() as tape:
            loss = state.model.loss(batch, noise)
    except ad.AutodiffError as err:
        raise TrainingError(f"non-finite loss at update {state.t} ({err}): "
                            f"{json.dumps(graph_statistics(state.model))}") from err
    if not np.isfinite(loss.data).all():
        raise TrainingError(
            f"non-finite loss at update {state.t}: {json.dumps(graph_statistics(state.model))}")
    leaf_grads = ad.backward(tape, loss)
    by_id = {id(t): g for t, g in leaf_grads.items()}
    grads = {name: by_id[id(p)] for name, p in params.items() if id(p) in by_id}
    grads, norm = clip_by_global_norm(grads, config.clip_norm)
    state.optimizer.step(grads)
    state.t += 1
    return {"loss": float(loss.data), "tau": tau, "grad_norm": norm}


def evaluate_loss(model, examples, batch_size=256):
    """Mean sentence loss with the deterministic (marginal) graph, no dropout."""
    if not examples:
        return float("nan")
    total, count = 0.0, 0
    with ad.no_grad():
        for batch in batch_iter(examples, batch_size, 0, 0, shuffle=False):
            losses = model.sentence_losses(batch, Noise.evaluation("marginal"))
            total += float(losses.data.sum())
            count += len(batch)
    return total / count


# --------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    params: dict
    moments: dict
    t: int
    config: dict
    src_vocab: list
    tgt_vocab: list
    epoch: int = 0
    dev_loss: float = None
    extra: dict = field(default_factory=dict)

    @property
    def vocab_hashes(self):
        return {"src": Vocabulary(self.src_vocab).digest(), "tgt": Vocabulary(self.tgt_vocab).digest()}

    def to_bytes(self):
        meta = {"config": self.config, "t": self.t, "epoch": self.epoch, "dev_loss": self.dev_loss,
                "src_vocab": self.src_vocab, "tgt_vocab": self.tgt_vocab,
                "vocab_hashes": self.vocab_hashes, "extra": self.extra}
        blob = json.dumps(meta, sort_keys=True).encode("utf-8")
        out = io.BytesIO()
        out.write(MAGIC)
        out.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        out.write(blob)
        tensors = [("param/" + k, v) for k, v in self.params.items()]
        tensors += [(f"adam_{which}/{k}", v) for which in ("m", "v")
                    for k, v in self.moments.get(which, {}).items()]
        out.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f8")
            out.write(struct.pack("<I", len(raw)))
            out.write(raw)
            out.write(struct.pack("<I", arr.ndim))
            out.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            out.write(arr.tobytes())
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data):
        buf = memoryview(data)
        if bytes(buf[: len(MAGIC)]) != MAGIC:
            raise ValueError("not a checkpoint file (bad magic bytes)")
        pos = len(MAGIC)
        version, blob_len = struct.unpack_from("<IQ", buf, pos)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        pos += struct.calcsize("<IQ")
        meta = json.loads(bytes(buf[pos:pos + blob_len]).decode("utf-8"))
        pos += blob_len
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        params, moments = {}, {"m": {}, "v": {}}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = bytes(buf[pos:pos + nlen]).decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(buf[pos:pos + 8 * size], dtype="<f8").reshape(shape).astype(np.float64)
            pos += 8 * size
            kind, key = name.split("/", 1)
            if kind == "param":
                params[key] = arr
            else:
                moments[kind.split("_")[1]][key] = arr
        return cls(params, moments, meta["t"], meta["config"], meta["src_vocab"], meta["tgt_vocab"],
                   meta["epoch"], meta["dev_loss"], meta.get("extra", {}))


def save_checkpoint(ckpt, path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(ckpt.to_bytes())
    except OSError as err:
        raise OSError(f"cannot write checkpoint {path}: {err.strerror}") from err
    return path


def load_checkpoint(path):
    try:
        data = Path(path).read_bytes()
    except OSError as err:
        raise OSError(f"cannot read checkpoint {path}: {err.strerror}") from err
    return Checkpoint.from_bytes(data)


def snapshot(state, config, src_vocab, tgt_vocab, epoch, dev_loss=None):
    params = {k: p.data.copy() for k, p in state.optimizer.params.items()}
    moments = {"m": {k: v.copy() for k, v in state.optimizer.m.items()},
               "v": {k: v.copy() for k, v in state.optimizer.v.items()}}
    tau = max(temperature(state.schedule, state.t), TAU_FLOOR)
    return Checkpoint(params, moments, state.t, config.to_dict(), src_vocab.tokens, tgt_vocab.tokens,
                      epoch, dev_loss, {"tau": tau})


def model_from_checkpoint(ckpt):
    """Rebuild a model (and its vocabularies) from a checkpoint."""
    config = TrainConfig(**ckpt.config)
    src_vocab, tgt_vocab = Vocabulary(ckpt.src_vocab), Vocabulary(ckpt.tgt_vocab)
    model = LatentGraphModel(config, len(src_vocab), len(tgt_vocab))
    params = model.parameters()
    missing = set(params) ^ set(ckpt.params)
    if missing:
        raise ValueError(f"checkpoint parameters do not match the model: {sorted(missing)[:5]}")
    for k, p in params.items():
        if p.data.shape != ckpt.params[k].shape:
            raise ValueError(f"shape mismatch for {k}: {p.data.shape} vs {ckpt.params[k].shape}")
        p.data[...] = ckpt.params[k]
    return model, src_vocab, tgt_vocab


# --------------------------------------------------------------------------
# training loop


class MetricsLog:
    """CSV rows ``t,loss,tau,grad_norm``, one per update."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.rows = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(["t", "loss", "tau", "grad_norm"])

    def append(self, t, metrics):
        row = [t, repr(metrics["loss"]), repr(metrics["tau"]), repr(metrics["grad_norm"])]
        self.rows.append(row)
        if self.path:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow(row)


def prepare_vocabs(config, corpus, src_vocab=None, tgt_vocab=None):
    if config.tie_embeddings and src_vocab is None:
        joint = build_vocab(corpus.sources + corpus.targets, config.max_vocab)
        return joint, joint
    src_vocab = src_vocab or build_vocab(corpus.sources, config.max_vocab)
    tgt_vocab = tgt_vocab or build_vocab(corpus.targets, config.max_vocab)
    return src_vocab, tgt_vocab


def train(config, corpus, dev_corpus=None, checkpoint_dir=None, metrics_path=None,
          callback=None, src_vocab=None, tgt_vocab=None):
    """Epoch loop; returns ``(checkpoints, state)``.

    One checkpoint is taken before training and one after every epoch.
    ``callback(epoch, state, checkpoint)`` may return True to stop early.
    """
    if len(corpus) == 0:
        raise ValueError("training corpus is empty")
    src_vocab, tgt_vocab = prepare_vocabs(config, corpus, src_vocab, tgt_vocab)
    examples = encode_pairs(corpus, src_vocab, tgt_vocab)
    dev_examples = encode_pairs(dev_corpus, src_vocab, tgt_vocab) if dev_corpus else []
    per_epoch = -(-len(examples) // config.batch_size)
    state = make_state(config, len(src_vocab), len(tgt_vocab), per_epoch)
    log = MetricsLog(metrics_path)
    ckpts = [snapshot(state, config, src_vocab, tgt_vocab, 0)]
    if checkpoint_dir:
        save_checkpoint(ckpts[0], Path(checkpoint_dir) / "epoch000.ckpt")
    for epoch in range(1, config.epochs + 1):
        losses = []
        for batch in batch_iter(examples, config.batch_size, config.seed, epoch):
            metrics = train_step(state, batch, config)
            log.append(state.t, metrics)
            losses.append(metrics["loss"])
        dev_loss = evaluate_loss(state.model, dev_examples) if dev_examples else None
        ckpt = snapshot(state, config, src_vocab, tgt_vocab, epoch, dev_loss)
        ckpt.extra["train_loss"] = float(np.mean(losses))
        ckpts.append(ckpt)
        logger.info("epoch %d train_loss %.4f dev_loss %s tau %.4f", epoch, np.mean(losses),
                    dev_loss, temperature(state.schedule, state.t))
        if checkpoint_dir:
            save_checkpoint(ckpt, Path(checkpoint_dir) / f"epoch{epoch:03d}.ckpt")
        if callback is not None and callback(epoch, state, ckpt):
            break
    return ckpts, state
