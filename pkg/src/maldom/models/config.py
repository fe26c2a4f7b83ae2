from __future__ import annotations

from dataclasses import asdict, dataclass, fields

ARCHS = (
    "CharCNN",
    "CharGRU",
    "CharLSTM",
    "CharBiGRU",
    "CharBiLSTM",
    "CharCNNBiLSTM",
    "TransformerEncoder",
)
CHAR_ARCHS = ARCHS[:-1]


class ConfigMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "CharGRU"
    vocab_size: int = 257
    embed_dim: int = 128
    hidden_dim: int = 128
    num_layers: int = 3
    num_heads: int = 4
    dropout: float = 0.1
    num_classes: int = 2
    max_len: int = 64
    # CharCNN only: "sequential" stacks the 3/4/5 convolutions, "parallel"
    # runs them side by side on the embeddings and concatenates the pools.
    cnn_mode: str = "sequential"

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigMismatch(f"unknown arch {self.arch!r}; choose from {ARCHS}")
        for name in ("vocab_size", "embed_dim", "hidden_dim", "num_layers", "num_heads",
                     "num_classes", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigMismatch(f"{name} must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ConfigMismatch("dropout must lie in [0, 1)")
        if self.cnn_mode not in ("sequential", "parallel"):
            raise ConfigMismatch(f"unknown cnn_mode {self.cnn_mode!r}")
        if self.arch == "TransformerEncoder":
            if self.embed_dim % self.num_heads:
                raise ConfigMismatch(
                    f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}")
            if self.embed_dim != self.hidden_dim:
                raise ConfigMismatch("TransformerEncoder needs embed_dim == hidden_dim (tied MLM head)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr: float = 1e-3
    weight_decay: float = 1e-3
    batch_size: int = 128
    seed: int = 42
    steps: int | None = None
    eval_batch_size: int = 256

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0 or (self.steps is not None and self.steps < 0):
            raise ValueError("epochs/steps must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


# Settings used in the original experiments. Not CI-runnable at these sizes
# for the transformer.
PAPER_CHAR_MODEL = dict(embed_dim=128, hidden_dim=128, num_layers=3, dropout=0.1)
PAPER_CHAR_TRAIN = TrainConfig(epochs=20, lr=1e-3, weight_decay=1e-3, batch_size=128)
PAPER_BERT_MODEL = dict(embed_dim=768, hidden_dim=768, num_layers=12, num_heads=12, dropout=0.1)
PAPER_BERT_FINETUNE = TrainConfig(epochs=10, lr=1e-5, weight_decay=1e-3, batch_size=128)
PAPER_BERT_PRETRAIN = TrainConfig(epochs=1, lr=1e-4, weight_decay=1e-3, batch_size=768, steps=260_000)

# Desk-scale transformer.
DESK_MODEL = dict(embed_dim=64, hidden_dim=64, num_layers=2, num_heads=4, dropout=0.1)
DESK_PRETRAIN = TrainConfig(epochs=1, lr=1e-3, weight_decay=1e-2, batch_size=32, steps=500)
DESK_FINETUNE = TrainConfig(epochs=4, lr=1e-3, weight_decay=1e-3, batch_size=64)

DOMAIN_MAX_LEN = 64
URL_MAX_LEN = 128
