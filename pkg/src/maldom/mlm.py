"""Masked-language-model example construction."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .bpe import EncodedSequence, Tokenizer

IGNORE = -100


@dataclass(frozen=True)
class MaskingPolicy:
    select_rate: float = 0.15
    mask_frac: float = 0.8
    random_frac: float = 0.1
    keep_frac: float = 0.1

    def __post_init__(self):
        if not 0 < self.select_rate <= 1:
            raise ValueError("select_rate must lie in (0, 1]")
        fracs = (self.mask_frac, self.random_frac, self.keep_frac)
        if min(fracs) < 0 or not math.isclose(sum(fracs), 1.0, abs_tol=1e-9):
            raise ValueError("mask/random/keep fractions must be non-negative and sum to 1")


@dataclass(frozen=True)
class MlmExample:
    input_ids: np.ndarray
    labels: np.ndarray
    attention_mask: np.ndarray
    no_maskable: bool = False


@dataclass(frozen=True)
class MlmBatch:
    input_ids: np.ndarray  # (batch, max_len)
    labels: np.ndarray
    attention_mask: np.ndarray

    def __len__(self) -> int:
        return len(self.input_ids)


def maskable_positions(ids: np.ndarray, tokenizer: Tokenizer) -> np.ndarray:
    special = np.fromiter(tokenizer.special_ids, dtype=np.int64)
    return ~np.isin(ids, special)


def mask(seq: EncodedSequence, policy: MaskingPolicy, rng_seed, tokenizer: Tokenizer) -> MlmExample:
    """Select positions with independent Bernoulli draws and corrupt them.

    Special tokens and padding are never selected. ``rng_seed`` may be an
    int, a seed sequence or a :class:`numpy.random.Generator`.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    ids = np.asarray(seq.ids, dtype=np.int64)
    labels = np.full_like(ids, IGNORE)
    candidates = maskable_positions(ids, tokenizer) & (np.asarray(seq.attention_mask) == 1)
    if not candidates.any():
        return MlmExample(ids.copy(), labels, np.asarray(seq.attention_mask), no_maskable=True)

    n = len(ids)
    selected = candidates & (rng.random(n) < policy.select_rate)
    action = rng.random(n)
    random_ids = rng.integers(len(tokenizer.special_ids), tokenizer.vocab_size, size=n)

    out = ids.copy()
    labels[selected] = ids[selected]
    to_mask = selected & (action < policy.mask_frac)
    to_random = selected & (action >= policy.mask_frac) & (action < policy.mask_frac + policy.random_frac)
    out[to_mask] = tokenizer.mask_id
    out[to_random] = random_ids[to_random]
    return MlmExample(out, labels, np.asarray(seq.attention_mask))


def collate(examples: Sequence[MlmExample]) -> MlmBatch:
    return MlmBatch(
        np.stack([e.input_ids for e in examples]),
        np.stack([e.labels for e in examples]),
        np.stack([e.attention_mask for e in examples]),
    )


def build_pretrain_stream(
    corpus: Iterable[str],
    tokenizer: Tokenizer,
    policy: MaskingPolicy,
    max_len: int,
    batch_size: int,
    rng_seed: int,
    epoch: int = 0,
) -> Iterator[MlmBatch]:
    """One epoch of shuffled, freshly masked batches.

    Masks are re-drawn per epoch: every example's generator is derived from
    ``(rng_seed, epoch, position in the corpus)``.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    encoded = corpus if isinstance(corpus, EncodedCorpus) else EncodedCorpus(corpus, tokenizer, max_len)
    yield from encoded.epoch(policy, batch_size, rng_seed, epoch)


class EncodedCorpus:
    """Tokenized corpus kept in memory so that epochs can be reshuffled cheaply."""

    def __init__(self, texts: Iterable[str], tokenizer: Tokenizer, max_len: int):
        self.tokenizer = tokenizer
        self.max_len = max_len
        self.sequences = [tokenizer.encode(t, max_len) for t in texts]

    def __len__(self) -> int:
        return len(self.sequences)

    def epoch(self, policy: MaskingPolicy, batch_size: int, rng_seed: int, epoch: int) -> Iterator[MlmBatch]:
        order = np.random.default_rng([rng_seed, epoch]).permutation(len(self.sequences))
        for start in range(0, len(order), batch_size):
            chunk = order[start : start + batch_size]
            yield collate([
                mask(self.sequences[i], policy, np.random.default_rng([rng_seed, epoch, int(i)]), self.tokenizer)
                for i in chunk
            ])

    def stream(self, policy: MaskingPolicy, batch_size: int, rng_seed: int) -> Iterator[MlmBatch]:
        """Endless sequence of epochs."""
        epoch = 0
        while True:
            yield from self.epoch(policy, batch_size, rng_seed, epoch)
            epoch += 1
