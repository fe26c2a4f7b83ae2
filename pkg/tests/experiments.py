"""Scaled-down training runs shared by the model tests and the acceptance suite."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

from maldom import bpe, corpus, metrics, urlprep
from maldom.models import Checkpoint, ModelConfig, TrainConfig, evaluate, finetune, pretrain
from maldom.models.config import DESK_FINETUNE, DESK_MODEL, DESK_PRETRAIN, PAPER_CHAR_MODEL, PAPER_CHAR_TRAIN

SEED = 42
BINARY_COUNTS = {"benign": 2000, "uniform_char": 2000}
MULTI_COUNTS = {"benign": 1000, "uniform_char": 1000, "hex": 1000, "dictionary": 1000}


@dataclass
class Run:
    checkpoint: Checkpoint
    report: metrics.MetricReport | None = None
    seconds: float = 0.0
    losses: list[float] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)

    def artifacts(self, directory: Path) -> dict[str, bytes]:
        """Checkpoint files plus the JSON metric report, as raw bytes."""
        self.checkpoint.save(directory)
        out = {p.name: p.read_bytes() for p in sorted(directory.iterdir())}
        if self.report is not None:
            out["report.json"] = metrics.format_report(self.report, "json").encode()
        return out


def splits(counts: dict[str, int], binary: bool):
    data = corpus.make_dataset(counts, seed=SEED, binary=binary)
    names = corpus.LabelSet.from_entries(data).names
    return corpus.split(data, corpus.SplitSpec(seed=SEED)), names


def desk_pretrain(n_lines: int = 5000, steps: int | None = None) -> Run:
    start = time.perf_counter()
    lines = [urlprep.preprocess(x) for x in corpus.gen_pretrain_corpus(n_lines, seed=7)]
    tok = bpe.train(lines, bpe.TokenizerConfig(vocab_size=512))
    cfg = ModelConfig(arch="TransformerEncoder", vocab_size=tok.vocab_size, max_len=64, **DESK_MODEL)
    train_cfg = DESK_PRETRAIN if steps is None else TrainConfig(**{**DESK_PRETRAIN.to_dict(), "steps": steps})
    ckpt, losses = pretrain(cfg, tok, lines, train_cfg, preprocessed=True)
    return Run(ckpt, seconds=time.perf_counter() - start, losses=losses)


def char_gru_binary() -> Run:
    start = time.perf_counter()
    (train, valid, test), names = splits(BINARY_COUNTS, binary=True)
    cfg = ModelConfig(arch="CharGRU", max_len=64, **PAPER_CHAR_MODEL)
    ckpt, history = finetune(cfg, train, valid, PAPER_CHAR_TRAIN, names)
    rep = evaluate(ckpt.build_model(), ckpt.make_encoder(), test, len(names))
    return Run(ckpt, rep, time.perf_counter() - start, history=history)


def transformer_binary(pretrained: Checkpoint) -> Run:
    start = time.perf_counter()
    (train, valid, test), names = splits(BINARY_COUNTS, binary=True)
    ckpt, history = finetune(pretrained.model_config, train, valid, DESK_FINETUNE, names, init=pretrained)
    rep = evaluate(ckpt.build_model(), ckpt.make_encoder(), test, len(names))
    return Run(ckpt, rep, time.perf_counter() - start, history=history)


def cnn_multiclass() -> Run:
    start = time.perf_counter()
    (train, valid, test), names = splits(MULTI_COUNTS, binary=False)
    cfg = ModelConfig(arch="CharCNN", embed_dim=64, hidden_dim=64, num_layers=2, max_len=64)
    ckpt, history = finetune(cfg, train, valid, TrainConfig(epochs=5, lr=1e-3, batch_size=64), names)
    rep = evaluate(ckpt.build_model(), ckpt.make_encoder(), test, len(names))
    return Run(ckpt, rep, time.perf_counter() - start, history=history)
