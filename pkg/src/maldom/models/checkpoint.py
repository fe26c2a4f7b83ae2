"""Checkpoints and the checkpoint-level training entry points."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..bpe import Tokenizer
from ..corpus import LabeledEntry
from ..mlm import EncodedCorpus, MaskingPolicy
from ..tensor.io import read_blob, write_blob
from ..tensor.nn import Module
from ..urlprep import preprocess
from .arch import build
from .config import ModelConfig, TrainConfig
from .train import BpeEncoder, ByteEncoder, LogFn, encoder_from_dict, fit_classifier, pretrain_mlm

FORMAT_VERSION = 1
MANIFEST = "checkpoint.json"
BLOB = "params.bin"


@dataclass
class Checkpoint:
    model_config: ModelConfig
    state: dict[str, np.ndarray]
    encoder: dict
    label_names: list[str] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def has_mlm_head(self) -> bool:
        return "mlm_bias" in self.state

    def build_model(self) -> Module:
        model = build(self.model_config, 0, mlm_head=self.has_mlm_head)
        model.load_state_dict(self.state)
        return model.eval()

    def make_encoder(self):
        return encoder_from_dict(self.encoder)

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        records = write_blob(self.state, directory / BLOB)
        doc = {
            "format_version": FORMAT_VERSION,
            "model_config": self.model_config.to_dict(),
            "encoder": self.encoder,
            "label_names": self.label_names,
            "metadata": self.metadata,
            "blob": BLOB,
            "parameters": records,
        }
        (directory / MANIFEST).write_text(json.dumps(doc, indent=1, sort_keys=True, ensure_ascii=False) + "\n",
                                          encoding="utf-8")
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "Checkpoint":
        directory = Path(directory)
        doc = json.loads((directory / MANIFEST).read_text(encoding="utf-8"))
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"{directory}: unsupported checkpoint version {doc.get('format_version')}")
        ckpt = cls(
            model_config=ModelConfig.from_dict(doc["model_config"]),
            state=read_blob(doc["parameters"], directory / doc["blob"]),
            encoder=doc["encoder"],
            label_names=list(doc.get("label_names", [])),
            metadata=doc.get("metadata", {}),
        )
        # shape validation against the config-derived architecture
        ckpt.build_model()
        return ckpt


def pretrain(
    model_config: ModelConfig,
    tokenizer: Tokenizer,
    texts: Sequence[str],
    train_config: TrainConfig,
    policy: MaskingPolicy = MaskingPolicy(),
    on_log: LogFn | None = None,
    preprocessed: bool = False,
) -> tuple[Checkpoint, list[float]]:
    """MLM pre-training of a fresh transformer encoder on raw (or preprocessed) texts."""
    if model_config.arch != "TransformerEncoder":
        raise ValueError("MLM pre-training needs arch=TransformerEncoder")
    if model_config.vocab_size != tokenizer.vocab_size:
        model_config = ModelConfig.from_dict({**model_config.to_dict(), "vocab_size": tokenizer.vocab_size})
    model = build(model_config, train_config.seed, mlm_head=True)
    lines = list(texts) if preprocessed else [preprocess(t) for t in texts]
    corpus = EncodedCorpus(lines, tokenizer, model_config.max_len)
    losses = pretrain_mlm(model, corpus, train_config, policy, on_log)
    ckpt = Checkpoint(
        model_config=model_config,
        state=model.state_dict(),
        encoder=BpeEncoder(tokenizer, model_config.max_len).to_dict(),
        metadata={"stage": "pretrain", "train_config": train_config.to_dict(), "steps": len(losses)},
    )
    return ckpt, losses


def finetune(
    model_config: ModelConfig,
    train: Sequence[LabeledEntry],
    valid: Sequence[LabeledEntry],
    train_config: TrainConfig,
    label_names: Sequence[str],
    init: Checkpoint | None = None,
    tokenizer: Tokenizer | None = None,
    on_log: LogFn | None = None,
) -> tuple[Checkpoint, list[dict]]:
    """Supervised training from scratch or from a pre-trained encoder.

    Character models read bytes; the transformer reads BPE ids from the
    tokenizer embedded in ``init`` (or ``tokenizer``). All encoder weights of
    ``init`` are transferred; the classification head starts fresh.
    """
    num_classes = len(label_names)
    if num_classes < 2:
        raise ValueError("classification needs at least 2 classes")
    cfg = dict(model_config.to_dict(), num_classes=num_classes)
    if model_config.arch == "TransformerEncoder":
        if init is not None:
            encoder = init.make_encoder()
            cfg.update({k: v for k, v in init.model_config.to_dict().items()
                        if k not in ("num_classes", "dropout")})
        elif tokenizer is not None:
            encoder = BpeEncoder(tokenizer, model_config.max_len)
        else:
            raise ValueError("TransformerEncoder needs a tokenizer or a pre-trained checkpoint")
        cfg["vocab_size"] = encoder.vocab_size
    else:
        encoder = ByteEncoder(model_config.max_len)
        cfg["vocab_size"] = ByteEncoder.vocab_size
    config = ModelConfig.from_dict(cfg)
    model = build(config, train_config.seed)
    if init is not None:
        transfer = {k: v for k, v in init.state.items() if not k.startswith("head.") and k != "mlm_bias"}
        model.load_state_dict(transfer, strict=False)
    result = fit_classifier(model, encoder, train, valid, train_config, num_classes, on_log)
    ckpt = Checkpoint(
        model_config=config,
        state=model.state_dict(),
        encoder=encoder.to_dict(),
        label_names=list(label_names),
        metadata={"stage": "finetune", "train_config": train_config.to_dict(),
                  "best_epoch": result.best_epoch, "from_pretrained": init is not None},
    )
    return ckpt, result.history
