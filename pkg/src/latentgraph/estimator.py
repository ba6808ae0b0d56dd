"""scikit-learn style front-end for the latent graph translator."""

import numpy as np
from sklearn.base import BaseEstimator

from .analysis import bleu, graph_stats, sequence_accuracy, token_accuracy
from .config import TrainConfig
from .data import Corpus, Vocabulary
from .model import Noise
from .training import model_from_checkpoint, train
from .validation import check_is_fitted, check_parallel, check_sentences

_CONFIG_PARAMS = (
    "encoder", "latent_graph", "hidden_size", "d_k", "learning_rate", "dropout", "batch_size",
    "epochs", "tau0", "decay_rate", "decay_steps", "clip_norm", "seed", "graph_mode",
    "beam_size", "length_penalty", "max_decode_len", "max_vocab", "input_feeding",
    "gcn_residual", "gcn_dependents", "tie_embeddings",
)


class LatentGraphTranslator(BaseEstimator):
    """Sequence-to-sequence translator with a stochastic latent source graph.

    ``fit(X, y)`` trains on parallel sentences (strings or token lists),
    ``predict(X)`` translates, ``transform(X)`` returns each sentence's
    head distribution matrix and ``score(X, y)`` is corpus BLEU.
    With ``latent_graph=False`` the graph component is dropped and the GCN
    sees no edges (the residual dense baseline).
    """

    def __init__(self, encoder="embeddings", latent_graph=True, hidden_size=64, d_k=64,
                 learning_rate=3e-3, dropout=0.0, batch_size=64, epochs=10, tau0=2.0,
                 decay_rate=0.99, decay_steps=0, clip_norm=5.0, seed=0, graph_mode="marginal",
                 decode="greedy", beam_size=10, length_penalty=1.0, max_decode_len=100,
                 max_vocab=50000, input_feeding=True, gcn_residual=True, gcn_dependents=True,
                 tie_embeddings=False, checkpoint_dir=None, metrics_path=None,
                 early_stopping=None):
        self.encoder = encoder
        self.latent_graph = latent_graph
        self.hidden_size = hidden_size
        self.d_k = d_k
        self.learning_rate = learning_rate
        self.dropout = dropout
        self.batch_size = batch_size
        self.epochs = epochs
        self.tau0 = tau0
        self.decay_rate = decay_rate
        self.decay_steps = decay_steps
        self.clip_norm = clip_norm
        self.seed = seed
        self.graph_mode = graph_mode
        self.decode = decode
        self.beam_size = beam_size
        self.length_penalty = length_penalty
        self.max_decode_len = max_decode_len
        self.max_vocab = max_vocab
        self.input_feeding = input_feeding
        self.gcn_residual = gcn_residual
        self.gcn_dependents = gcn_dependents
        self.tie_embeddings = tie_embeddings
        self.checkpoint_dir = checkpoint_dir
        self.metrics_path = metrics_path
        self.early_stopping = early_stopping

    def to_config(self):
        return TrainConfig(**{k: getattr(self, k) for k in _CONFIG_PARAMS})

    def fit(self, X, y, X_dev=None, y_dev=None):
        """Train from scratch; ``early_stopping=(metric, threshold)`` stops once the
        dev metric (``token_accuracy`` or ``sequence_accuracy``) reaches the threshold."""
        if self.decode not in ("greedy", "beam"):
            raise ValueError("decode must be 'greedy' or 'beam'")
        config = self.to_config()
        src, tgt, _ = check_parallel(X, y)
        dev = None
        if X_dev is not None:
            dsrc, dtgt, _ = check_parallel(X_dev, y_dev)
            dev = Corpus(list(zip(dsrc, dtgt)))
        self.history_ = []

        def callback(epoch, state, ckpt):
            self._set_fitted(state.model, _vocabs(ckpt), state.t, ckpt.extra["tau"])
            record = {"epoch": epoch, "train_loss": ckpt.extra.get("train_loss"),
                      "dev_loss": ckpt.dev_loss, "tau": state.schedule(state.t)}
            stop = False
            if dev is not None and self.early_stopping is not None:
                metric, threshold = self.early_stopping
                hyps = self._translate_tokens(dev.sources, greedy=True)
                fn = {"token_accuracy": token_accuracy, "sequence_accuracy": sequence_accuracy}[metric]
                record[metric] = fn(hyps, dev.targets)
                stop = record[metric] >= threshold
            self.history_.append(record)
            return stop

        self.checkpoints_, state = train(config, Corpus(list(zip(src, tgt))), dev,
                                         checkpoint_dir=self.checkpoint_dir,
                                         metrics_path=self.metrics_path, callback=callback)
        self._set_fitted(state.model, _vocabs(self.checkpoints_[-1]), state.t,
                         self.checkpoints_[-1].extra["tau"])
        return self

    def _set_fitted(self, model, vocabs, n_updates, tau):
        self.model_ = model
        self.src_vocab_, self.tgt_vocab_ = vocabs
        self.n_updates_ = n_updates
        self.tau_ = tau

    @classmethod
    def from_checkpoint(cls, ckpt, **overrides):
        config = dict(ckpt.config)
        est = cls(**{k: config[k] for k in _CONFIG_PARAMS if k in config})
        est.set_params(**overrides)
        model, src_vocab, tgt_vocab = model_from_checkpoint(ckpt)
        model.config = est.to_config()
        est._set_fitted(model, (src_vocab, tgt_vocab), ckpt.t, ckpt.extra.get("tau", est.tau0))
        est.checkpoints_ = [ckpt]
        est.history_ = []
        return est

    def _noise(self, n_rows, width):
        if self.graph_mode != "sample" or not self.latent_graph:
            return Noise.evaluation("marginal")
        rng = np.random.default_rng([self.seed, 2])
        return Noise.evaluation("sample", rng, (n_rows, width, width), tau=self.tau_)

    def _translate_tokens(self, sentences, greedy=None):
        greedy = self.decode == "greedy" if greedy is None else greedy
        model, sv, tv = self.model_, self.src_vocab_, self.tgt_vocab_
        ids = [sv.encode(s) for s in sentences]
        if greedy:
            out = []
            for start in range(0, len(ids), 256):
                chunk = ids[start:start + 256]
                width = max(len(s) for s in chunk)
                out += model.greedy(chunk, self.max_decode_len, self._noise(len(chunk), width))
            return [tv.decode(o) for o in out]
        return [tv.decode(model.beam(s, self.beam_size, self.length_penalty, self.max_decode_len,
                                     self._noise(1, len(s))))
                for s in ids]

    def predict(self, X):
        check_is_fitted(self, "model_")
        src, was_text = check_sentences(X, 2)
        hyps = self._translate_tokens(src)
        return [" ".join(h) for h in hyps] if was_text else hyps

    def transform(self, X):
        """Head distribution matrix (m x m) for every sentence."""
        check_is_fitted(self, "model_")
        if not self.latent_graph:
            raise ValueError("baseline models have no latent graph")
        src, _ = check_sentences(X, 2)
        ids = [self.src_vocab_.encode(s) for s in src]
        rng = np.random.default_rng([self.seed, 3])
        return self.model_.latent_graphs(ids, self.graph_mode, rng, self.tau_)

    def graph_stats(self, X):
        return graph_stats(self.transform(X))

    def score(self, X, y):
        """Corpus BLEU of ``predict(X)`` against ``y``."""
        src, tgt, _ = check_parallel(X, y)
        return bleu(self._translate_tokens(src), tgt)


def _vocabs(ckpt):
    return Vocabulary(ckpt.src_vocab), Vocabulary(ckpt.tgt_vocab)
