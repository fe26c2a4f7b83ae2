"""Character-level baselines and the transformer encoder.

Every model is called as ``model(ids, attention_mask)`` with right-padded
``(batch, length)`` integer arrays and returns ``(batch, num_classes)`` logits.
Padding never influences the result: convolutions see zeroed pad positions,
max-pooling and attention ignore them, and recurrent layers carry their state
through them.
"""

from __future__ import annotations

import math

import numpy as np

from .. import tensor as T
from ..tensor import Parameter, Tensor, get_default_dtype
from ..tensor.nn import Conv1d, Dropout, Embedding, LayerNorm, Linear, Module, Recurrent
from .config import ModelConfig

NEG_INF = -np.inf
CNN_KERNELS = (3, 4, 5)


def _pad_mask(mask: np.ndarray) -> np.ndarray:
    """(batch, 1, length) boolean array, true at padding."""
    return (np.asarray(mask) == 0)[:, None, :]


class ConvStack(Module):
    """Conv1d layers with kernels 3, 4, 5 and ReLU, over ``(batch, channels, length)``."""

    def __init__(self, c_in: int, channels: int, rng: np.random.Generator, parallel: bool = False):
        self.parallel = parallel
        self.convs = [
            Conv1d(c_in if (parallel or i == 0) else channels, channels, k, rng)
            for i, k in enumerate(CNN_KERNELS)
        ]

    def __call__(self, x: Tensor, pad: np.ndarray) -> list[Tensor]:
        outs = []
        h = x
        for conv in self.convs:
            y = T.masked_fill(T.relu(conv(x if self.parallel else h)), pad, 0.0)
            outs.append(y)
            h = y
        return outs if self.parallel else [h]


class CharCNN(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.embed = Embedding(cfg.vocab_size, cfg.embed_dim, rng)
        self.convs = ConvStack(cfg.embed_dim, cfg.hidden_dim, rng, cfg.cnn_mode == "parallel")
        self.drop = Dropout(cfg.dropout, rng)
        width = cfg.hidden_dim * (len(CNN_KERNELS) if cfg.cnn_mode == "parallel" else 1)
        self.head = Linear(width, cfg.num_classes, rng)

    def features(self, ids, mask) -> Tensor:
        pad = _pad_mask(mask)
        x = T.transpose(self.embed(ids), (0, 2, 1))
        x = T.masked_fill(x, pad, 0.0)
        pooled = [T.max(T.masked_fill(y, pad, NEG_INF), axis=2) for y in self.convs(x, pad)]
        return pooled[0] if len(pooled) == 1 else T.concat(pooled, axis=1)

    def __call__(self, ids, mask) -> Tensor:
        return self.head(self.drop(self.features(ids, mask)))


class RecurrentStack(Module):
    """Stacked uni- or bidirectional recurrent layers over ``(batch, time, features)``."""

    def __init__(self, cell: str, n_in: int, hidden: int, layers: int, bidirectional: bool,
                 rng: np.random.Generator):
        width = 2 * hidden if bidirectional else hidden
        self.bidirectional = bidirectional
        self.fwd = [Recurrent(cell, n_in if i == 0 else width, hidden, rng) for i in range(layers)]
        self.bwd = (
            [Recurrent(cell, n_in if i == 0 else width, hidden, rng, reverse=True) for i in range(layers)]
            if bidirectional else []
        )

    def __call__(self, x: Tensor, mask) -> Tensor:
        """Final state: forward last step, concatenated with backward first step."""
        h = x
        for i, layer in enumerate(self.fwd):
            f = layer(h, mask)
            if self.bidirectional:
                b = self.bwd[i](h, mask)
                h = T.concat([f, b], axis=2)
            else:
                h = f
        if self.bidirectional:
            return T.concat([f[:, -1, :], b[:, 0, :]], axis=1)
        return f[:, -1, :]


class CharRNN(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        cell = "gru" if "GRU" in cfg.arch else "lstm"
        bidirectional = cfg.arch.startswith("CharBi")
        self.embed = Embedding(cfg.vocab_size, cfg.embed_dim, rng)
        self.rnn = RecurrentStack(cell, cfg.embed_dim, cfg.hidden_dim, cfg.num_layers, bidirectional, rng)
        self.drop = Dropout(cfg.dropout, rng)
        self.head = Linear(cfg.hidden_dim * (2 if bidirectional else 1), cfg.num_classes, rng)

    def features(self, ids, mask) -> Tensor:
        return self.rnn(self.embed(ids), mask)

    def __call__(self, ids, mask) -> Tensor:
        return self.head(self.drop(self.features(ids, mask)))


class CharCNNBiLSTM(Module):
    """Convolutional feature extractor followed by one BiLSTM layer."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.embed = Embedding(cfg.vocab_size, cfg.embed_dim, rng)
        self.convs = ConvStack(cfg.embed_dim, cfg.hidden_dim, rng)
        self.rnn = RecurrentStack("lstm", cfg.hidden_dim, cfg.hidden_dim, 1, True, rng)
        self.drop = Dropout(cfg.dropout, rng)
        self.head = Linear(2 * cfg.hidden_dim, cfg.num_classes, rng)

    def features(self, ids, mask) -> Tensor:
        pad = _pad_mask(mask)
        x = T.masked_fill(T.transpose(self.embed(ids), (0, 2, 1)), pad, 0.0)
        (h,) = self.convs(x, pad)
        return self.rnn(T.transpose(h, (0, 2, 1)), mask)

    def __call__(self, ids, mask) -> Tensor:
        return self.head(self.drop(self.features(ids, mask)))


def _normal_linear(n_in: int, n_out: int, rng: np.random.Generator, std: float = 0.02) -> Linear:
    layer = Linear(n_in, n_out, rng)
    dtype = get_default_dtype()
    layer.weight.data = (rng.standard_normal((n_in, n_out)) * std).astype(dtype)
    layer.bias.data = np.zeros(n_out, dtype=dtype)
    return layer


class Block(Module):
    """Pre-norm transformer block."""

    def __init__(self, dim: int, heads: int, dropout: float, rng: np.random.Generator):
        self.heads = heads
        self.ln1 = LayerNorm(dim)
        self.qkv = _normal_linear(dim, 3 * dim, rng)
        self.proj = _normal_linear(dim, dim, rng)
        self.ln2 = LayerNorm(dim)
        self.ff1 = _normal_linear(dim, 4 * dim, rng)
        self.ff2 = _normal_linear(4 * dim, dim, rng)
        self.drop = Dropout(dropout, rng)

    def attention(self, x: Tensor, key_pad: np.ndarray) -> Tensor:
        batch, length, dim = x.shape
        dh = dim // self.heads
        qkv = T.reshape(self.qkv(x), (batch, length, 3, self.heads, dh))
        qkv = T.transpose(qkv, (2, 0, 3, 1, 4))  # (3, batch, heads, length, dh)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = T.mul(q @ T.transpose(k, (0, 1, 3, 2)), 1.0 / math.sqrt(dh))
        scores = T.masked_fill(scores, key_pad, NEG_INF)
        attn = self.drop(T.softmax(scores, axis=-1))
        ctx = T.reshape(T.transpose(attn @ v, (0, 2, 1, 3)), (batch, length, dim))
        return self.proj(ctx)

    def __call__(self, x: Tensor, key_pad: np.ndarray) -> Tensor:
        x = x + self.drop(self.attention(self.ln1(x), key_pad))
        return x + self.drop(self.ff2(T.gelu(self.ff1(self.ln2(x)))))


class TransformerEncoder(Module):
    """Token + learned position embeddings, pre-norm blocks, final layer norm.

    Classification reads the first ([CLS]) position. The masked-LM head
    reuses the token embedding matrix as its output projection.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, mlm_head: bool = False):
        dim = cfg.embed_dim
        self.tok = Embedding(cfg.vocab_size, dim, rng, std=0.02)
        self.pos = Embedding(cfg.max_len, dim, rng, std=0.02)
        self.emb_drop = Dropout(cfg.dropout, rng)
        self.blocks = [Block(dim, cfg.num_heads, cfg.dropout, rng) for _ in range(cfg.num_layers)]
        self.ln_f = LayerNorm(dim)
        self.drop = Dropout(cfg.dropout, rng)
        self.head = _normal_linear(dim, cfg.num_classes, rng)
        if mlm_head:
            self.mlm_bias = Parameter(np.zeros(cfg.vocab_size, dtype=get_default_dtype()), decay=False)

    def encode(self, ids, mask) -> Tensor:
        ids = np.asarray(ids)
        length = ids.shape[1]
        if length > self.pos.weight.shape[0]:
            raise ValueError(f"sequence length {length} exceeds max_len {self.pos.weight.shape[0]}")
        x = self.tok(ids) + self.pos(np.arange(length))
        x = self.emb_drop(x)
        key_pad = (np.asarray(mask) == 0)[:, None, None, :]
        for block in self.blocks:
            x = block(x, key_pad)
        return self.ln_f(x)

    def features(self, ids, mask) -> Tensor:
        return self.encode(ids, mask)[:, 0, :]

    def __call__(self, ids, mask) -> Tensor:
        return self.head(self.drop(self.features(ids, mask)))

    def mlm_logits(self, ids, mask, positions: tuple[np.ndarray, np.ndarray]) -> Tensor:
        """Vocabulary logits at ``positions`` (a ``(rows, cols)`` index pair)."""
        h = self.encode(ids, mask)[positions]
        return h @ T.transpose(self.tok.weight, (1, 0)) + self.mlm_bias


def build(config: ModelConfig, rng_seed: int, mlm_head: bool = False) -> Module:
    rng = np.random.default_rng(rng_seed)
    if config.arch == "CharCNN":
        return CharCNN(config, rng)
    if config.arch == "CharCNNBiLSTM":
        return CharCNNBiLSTM(config, rng)
    if config.arch == "TransformerEncoder":
        return TransformerEncoder(config, rng, mlm_head=mlm_head)
    return CharRNN(config, rng)
