"""Training/model configuration and the flat ``key=value`` config file format."""

from dataclasses import asdict, dataclass, fields, replace

from .encoders import ENCODER_KINDS

GRAPH_MODES = ("marginal", "sample")


@dataclass
class TrainConfig:
    hidden_size: int = 64
    d_k: int = 64
    learning_rate: float = 3e-3
    dropout: float = 0.0
    batch_size: int = 64
    tau0: float = 2.0
    decay_rate: float = 0.99
    # 0 means "one epoch worth of updates"
    decay_steps: int = 0
    epochs: int = 10
    seed: int = 0
    encoder: str = "embeddings"
    latent_graph: bool = True
    clip_norm: float = 5.0
    input_feeding: bool = True
    gcn_residual: bool = True
    gcn_dependents: bool = True
    graph_mode: str = "marginal"
    max_vocab: int = 50000
    tie_embeddings: bool = False
    beam_size: int = 10
    length_penalty: float = 1.0
    max_decode_len: int = 100

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.hidden_size <= 0 or self.d_k <= 0 or self.hidden_size % 2:
            raise ValueError("hidden_size must be a positive even integer and d_k positive")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0 or self.decay_steps < 0:
            raise ValueError("batch_size must be positive; epochs and decay_steps non-negative")
        if self.tau0 <= 0 or not 0 < self.decay_rate <= 1:
            raise ValueError("tau0 must be positive and decay_rate in (0, 1]")
        if self.encoder not in ENCODER_KINDS:
            raise ValueError(f"encoder must be one of {ENCODER_KINDS}")
        if self.graph_mode not in GRAPH_MODES:
            raise ValueError(f"graph_mode must be one of {GRAPH_MODES}")
        return self

    def to_dict(self):
        return asdict(self)

    def replace(self, **changes):
        return replace(self, **changes)


PRESETS = {
    "desk": {},
    "de-en": dict(hidden_size=256, d_k=256, learning_rate=3e-4, dropout=0.3, batch_size=64,
                  beam_size=10, length_penalty=1.0),
    "ja-en": dict(hidden_size=512, d_k=256, learning_rate=2e-4, dropout=0.2, batch_size=64,
                  beam_size=10, length_penalty=1.0),
}


def preset(name, **overrides):
    try:
        base = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}") from None
    return TrainConfig(**{**base, **overrides})


def _coerce(kind, raw, key):
    if kind is bool or kind == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if kind is int or kind == "int":
        return int(raw)
    if kind is float or kind == "float":
        return float(raw)
    return raw.strip()


def parse_config_text(text, base=None):
    """Parse ``key=value`` lines (``#`` starts a comment) into a TrainConfig."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _coerce(types[key], raw, key)
    base = base or TrainConfig()
    return replace(base, **values)


def load_config(path, base=None):
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config_text(fh.read(), base)
    except OSError as err:
        raise OSError(f"cannot read config {path}: {err.strerror}") from err


def format_config(config):
    return "".join(f"{k}={v}\n" for k, v in config.to_dict().items())
