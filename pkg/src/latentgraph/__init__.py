"""Neural machine translation with stochastic latent source graphs, on a small numpy autodiff engine."""

from .analysis import GraphStats, bleu, graph_stats, head_distance, head_entropy
from .config import TrainConfig, load_config, preset
from .data import Corpus, Vocabulary, gen_synthetic, read_corpus
from .estimator import LatentGraphTranslator
from .graph import LatentGraph, TemperatureSchedule, sample_latent_graph, temperature
from .model import LatentGraphModel
from .training import load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Corpus", "GraphStats", "LatentGraph", "LatentGraphModel", "LatentGraphTranslator",
    "TemperatureSchedule", "TrainConfig", "Vocabulary", "bleu", "gen_synthetic", "graph_stats",
    "head_distance", "head_entropy", "load_checkpoint", "load_config", "preset", "read_corpus",
    "sample_latent_graph", "save_checkpoint", "temperature", "train",
]
