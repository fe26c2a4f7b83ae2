"""Input encoders, MLM pre-training, supervised training and prediction."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .. import metrics
from .. import tensor as T
from ..bpe import Tokenizer
from ..corpus import LabeledEntry
from ..mlm import IGNORE, EncodedCorpus, MaskingPolicy
from ..tensor import no_grad
from ..tensor.nn import Module
from ..urlprep import preprocess
from .arch import TransformerEncoder
from .config import TrainConfig
from .optim import AdamW

log = logging.getLogger(__name__)

LogFn = Callable[[dict], None]


class LabelOutOfRange(ValueError):
    pass


class ByteEncoder:
    """Preprocessed text as UTF-8 bytes: id 0 is padding, byte ``b`` is ``b + 1``."""

    kind = "bytes"
    pad_id = 0
    vocab_size = 257

    def __init__(self, max_len: int = 64):
        self.max_len = max_len

    def ids(self, text: str) -> list[int]:
        return [b + 1 for b in preprocess(text).encode("utf-8")[: self.max_len]]

    def encode_batch(self, texts: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        ids = np.zeros((len(texts), self.max_len), dtype=np.int64)
        for i, text in enumerate(texts):
            row = self.ids(text)
            ids[i, : len(row)] = row
        return ids, (ids != self.pad_id).astype(np.int64)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "max_len": self.max_len, "pad_id": self.pad_id,
                "byte_offset": 1, "size": self.vocab_size}


class BpeEncoder:
    kind = "bpe"

    def __init__(self, tokenizer: Tokenizer, max_len: int = 64):
        self.tokenizer = tokenizer
        self.max_len = max_len
        self.pad_id = tokenizer.pad_id
        self.vocab_size = tokenizer.vocab_size

    def encode_batch(self, texts: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        if not texts:
            empty = np.zeros((0, self.max_len), dtype=np.int64)
            return empty, empty.copy()
        seqs = [self.tokenizer.encode(preprocess(t), self.max_len) for t in texts]
        return np.stack([s.ids for s in seqs]), np.stack([s.attention_mask for s in seqs])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "max_len": self.max_len, "tokenizer": self.tokenizer.to_dict()}


def encoder_from_dict(doc: dict):
    if doc["kind"] == "bytes":
        return ByteEncoder(doc["max_len"])
    if doc["kind"] == "bpe":
        return BpeEncoder(Tokenizer.from_dict(doc["tokenizer"]), doc["max_len"])
    raise ValueError(f"unknown encoder kind {doc['kind']!r}")


def _trim(ids: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop trailing columns that are padding in every row."""
    length = max(int(mask.sum(axis=1).max(initial=1)), 1)
    return ids[:, :length], mask[:, :length]


def iterate_batches(n: int, batch_size: int, order: np.ndarray | None = None) -> Iterator[np.ndarray]:
    order = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def logits_for(model: Module, ids: np.ndarray, mask: np.ndarray, batch_size: int = 256) -> np.ndarray:
    model.eval()
    out = []
    with no_grad():
        for chunk in iterate_batches(len(ids), batch_size):
            i, m = _trim(ids[chunk], mask[chunk])
            out.append(np.asarray(model(i, m).data, dtype=np.float64))
    if not out:
        return np.zeros((0, 0))
    return np.concatenate(out)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict(model: Module, encoder, texts: Sequence[str], batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Predicted label ids and class probabilities for raw URLs/domains."""
    ids, mask = encoder.encode_batch(list(texts))
    probs = softmax_rows(logits_for(model, ids, mask, batch_size))
    return probs.argmax(axis=1), probs


def evaluate(model: Module, encoder, entries: Sequence[LabeledEntry], num_classes: int,
             batch_size: int = 256) -> metrics.MetricReport:
    preds, _ = predict(model, encoder, [e.text for e in entries], batch_size)
    return metrics.evaluate([e.label_id for e in entries], preds, num_classes)


@dataclass
class FitResult:
    best_epoch: int
    best_state: dict[str, np.ndarray]
    history: list[dict] = field(default_factory=list)


def fit_classifier(
    model: Module,
    encoder,
    train: Sequence[LabeledEntry],
    valid: Sequence[LabeledEntry],
    config: TrainConfig,
    num_classes: int,
    on_log: LogFn | None = None,
) -> FitResult:
    """Train with AdamW and keep the epoch with the best validation macro-F1.

    The model is left holding the selected parameters.
    """
    if num_classes < 2:
        raise ValueError("classification needs at least 2 classes")
    for split_name, rows in (("train", train), ("valid", valid)):
        bad = [e.label_id for e in rows if not 0 <= e.label_id < num_classes]
        if bad:
            raise LabelOutOfRange(f"{split_name} label {bad[0]} outside [0, {num_classes})")

    ids, mask = encoder.encode_batch([e.text for e in train])
    y = np.array([e.label_id for e in train], dtype=np.int64)
    v_ids, v_mask = encoder.encode_batch([e.text for e in valid])
    v_y = np.array([e.label_id for e in valid], dtype=np.int64)

    opt = AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    best = FitResult(best_epoch=-1, best_state=model.state_dict())
    best_f1 = -1.0
    for epoch in range(config.epochs):
        model.train()
        order = np.random.default_rng([config.seed, epoch]).permutation(len(y))
        losses = []
        for chunk in iterate_batches(len(y), config.batch_size, order):
            i, m = _trim(ids[chunk], mask[chunk])
            opt.zero_grad()
            loss = T.softmax_cross_entropy(model(i, m), y[chunk])
            loss.backward()
            opt.step()
            losses.append(loss.item())
        record = {"epoch": epoch, "train_loss": float(np.mean(losses)) if losses else 0.0}
        if len(v_y):
            preds = logits_for(model, v_ids, v_mask, config.eval_batch_size).argmax(axis=1)
            rep = metrics.evaluate(v_y, preds, num_classes)
            record.update(valid_accuracy=rep.accuracy, valid_f1_macro=rep.f1_macro)
            score = rep.f1_macro
        else:
            score = float(epoch)
        if score > best_f1:
            best_f1 = score
            best.best_epoch = epoch
            best.best_state = model.state_dict()
        best.history.append(record)
        log.info("epoch %d %s", epoch, record)
        if on_log:
            on_log(record)
    model.load_state_dict(best.best_state)
    return best


def pretrain_mlm(
    model: TransformerEncoder,
    corpus: EncodedCorpus,
    config: TrainConfig,
    policy: MaskingPolicy = MaskingPolicy(),
    on_log: LogFn | None = None,
) -> list[float]:
    """Masked-LM training for ``config.steps`` optimizer steps; returns per-step losses."""
    if not hasattr(model, "mlm_bias"):
        raise ValueError("model was built without an MLM head")
    steps = config.steps if config.steps is not None else config.epochs * -(-len(corpus) // config.batch_size)
    opt = AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    model.train()
    losses: list[float] = []
    stream = corpus.stream(policy, config.batch_size, config.seed)
    for step in range(steps):
        batch = next(stream)
        ids, mask = _trim(batch.input_ids, batch.attention_mask)
        labels = batch.labels[:, : ids.shape[1]]
        positions = np.nonzero(labels != IGNORE)
        opt.zero_grad()
        loss = T.softmax_cross_entropy(model.mlm_logits(ids, mask, positions), labels[positions])
        loss.backward()
        opt.step()
        losses.append(loss.item())
        if on_log:
            on_log({"step": step, "mlm_loss": losses[-1]})
    return losses


def smoothed(values: Iterable[float], window: int = 50) -> list[float]:
    """Trailing moving average."""
    values = list(values)
    out = []
    acc = 0.0
    for i, v in enumerate(values):
        acc += v
        if i >= window:
            acc -= values[i - window]
        out.append(acc / min(i + 1, window))
    return out
