"""SentencePiece-style BPE over Unicode characters with a ``▁`` word marker."""

from __future__ import annotations

import heapq
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

FORMAT_VERSION = 1

PAD = "[PAD]"
UNK = "[UNK]"
CLS = "[CLS]"
SEP = "[SEP]"
MASK = "[MASK]"

DEFAULT_SPECIALS = (PAD, UNK, CLS, SEP, MASK, "[DOMAIN]", "[PATH]", "[IP]", "[IPv6]")
SPACE_MARKER = "▁"


class TokenizerError(Exception):
    pass


class EmptyCorpus(TokenizerError):
    pass


class VocabTooSmall(TokenizerError):
    pass


class UnknownId(TokenizerError):
    pass


class CorruptFile(TokenizerError):
    pass


class VersionMismatch(TokenizerError):
    pass


@dataclass(frozen=True)
class TokenizerConfig:
    vocab_size: int = 512
    special_tokens: tuple[str, ...] = DEFAULT_SPECIALS
    space_marker: str = SPACE_MARKER
    min_frequency: int = 2

    def __post_init__(self):
        object.__setattr__(self, "special_tokens", tuple(self.special_tokens))
        if len(set(self.special_tokens)) != len(self.special_tokens):
            raise ValueError("special tokens must be pairwise distinct")
        for tok in (PAD, UNK, MASK, SEP):
            if tok not in self.special_tokens:
                raise ValueError(f"special tokens must include {tok}")


@dataclass(frozen=True)
class EncodedSequence:
    ids: np.ndarray
    attention_mask: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


def tie_key(pair: tuple[str, str], marker: str = SPACE_MARKER) -> tuple[str, str]:
    """Ordering among equally frequent pairs: lexicographic, with the word
    marker sorting like a space (before every printable character)."""
    return pair[0].replace(marker, " "), pair[1].replace(marker, " ")


def word_frequencies(corpus: Iterable[str], config: TokenizerConfig) -> Counter:
    specials = set(config.special_tokens)
    freqs: Counter = Counter()
    for text in corpus:
        for seg in text.split():
            if seg not in specials:
                freqs[seg] += 1
    return freqs


def _merge_word(symbols: list[str], left: str, right: str) -> list[str]:
    out = []
    i = 0
    n = len(symbols)
    while i < n:
        if i + 1 < n and symbols[i] == left and symbols[i + 1] == right:
            out.append(left + right)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def learn_merges(freqs: Counter, budget: int, min_frequency: int = 2,
                 marker: str = SPACE_MARKER, specials: Iterable[str] = ()) -> list[tuple[str, str]]:
    """Incremental BPE merge loop over a word frequency table.

    ``budget`` is the number of new vocabulary strings to create; a merge
    whose output already exists costs nothing. Pairs that would spell a
    special token are never merged. Pair counts are maintained per word and
    updated only for words touched by each merge; a lazy max-heap picks the
    next pair.
    """
    specials = set(specials)
    banned: set[tuple[str, str]] = set()
    known = {marker} | {c for w in freqs for c in w}
    added = 0
    words = [list(marker + w) for w in sorted(freqs)]
    counts = [freqs[w] for w in sorted(freqs)]

    pair_counts: Counter = Counter()
    where: dict[tuple[str, str], set[int]] = {}
    for wi, sym in enumerate(words):
        for pair in zip(sym, sym[1:]):
            pair_counts[pair] += counts[wi]
            where.setdefault(pair, set()).add(wi)

    heap = [(-c, tie_key(p, marker), p) for p, c in pair_counts.items()]
    heapq.heapify(heap)

    merges: list[tuple[str, str]] = []
    while added < budget and heap:
        neg, _, pair = heapq.heappop(heap)
        current = pair_counts.get(pair, 0)
        if current != -neg:
            continue  # stale heap entry
        if current < min_frequency:
            break
        left, right = pair
        if left + right in specials:
            banned.add(pair)
            continue
        merges.append(pair)
        if left + right not in known:
            known.add(left + right)
            added += 1
        touched: dict[tuple[str, str], int] = {}
        for wi in sorted(where.pop(pair, ())):
            old = words[wi]
            new = _merge_word(old, left, right)
            if len(new) == len(old):
                continue
            c = counts[wi]
            for p in zip(old, old[1:]):
                pair_counts[p] -= c
                touched[p] = pair_counts[p]
            for p in zip(new, new[1:]):
                pair_counts[p] += c
                touched[p] = pair_counts[p]
                where.setdefault(p, set()).add(wi)
            words[wi] = new
        pair_counts.pop(pair, None)
        for p, c in touched.items():
            if p == pair or p in banned:
                continue
            if c <= 0:
                pair_counts.pop(p, None)
            else:
                heapq.heappush(heap, (-c, tie_key(p, marker), p))
    return merges


class Tokenizer:
    def __init__(self, config: TokenizerConfig, alphabet: Sequence[str],
                 merges: Sequence[tuple[str, str]]):
        self.config = config
        self.merges = [tuple(m) for m in merges]
        tokens = list(config.special_tokens)
        tokens += [c for c in alphabet if c not in config.special_tokens]
        self.vocab: dict[str, int] = {tok: i for i, tok in enumerate(tokens)}
        for left, right in self.merges:
            if left + right not in self.vocab:
                self.vocab[left + right] = len(tokens)
                tokens.append(left + right)
        self.id_to_token: list[str] = tokens
        self.alphabet = list(alphabet)
        self.ranks = {pair: r for r, pair in enumerate(self.merges)}
        self.specials = frozenset(config.special_tokens)
        self.special_ids = frozenset(self.vocab[t] for t in config.special_tokens)
        self.pad_id = self.vocab[PAD]
        self.unk_id = self.vocab[UNK]
        self.mask_id = self.vocab[MASK]
        self.sep_id = self.vocab[SEP]
        self.cls_id = self.vocab.get(CLS)
        self._cache: dict[str, list[int]] = {}

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def vocab_size(self) -> int:
        return len(self.id_to_token)

    def __eq__(self, other) -> bool:
        return (isinstance(other, Tokenizer) and self.config == other.config
                and self.id_to_token == other.id_to_token and self.merges == other.merges)

    def segment(self, word: str) -> list[str]:
        """Split a single whitespace-free word into subword strings."""
        symbols = list(self.config.space_marker + word)
        while len(symbols) > 1:
            best = None
            best_rank = None
            for pair in zip(symbols, symbols[1:]):
                r = self.ranks.get(pair)
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = pair, r
            if best is None:
                break
            symbols = _merge_word(symbols, *best)
        return symbols

    def _word_ids(self, word: str) -> list[int]:
        ids = self._cache.get(word)
        if ids is None:
            ids = [self.vocab.get(s, self.unk_id) for s in self.segment(word)]
            if len(self._cache) < 100_000:
                self._cache[word] = ids
        return ids

    def tokenize(self, text: str) -> list[int]:
        ids = []
        for seg in text.split():
            if seg in self.specials:
                ids.append(self.vocab[seg])
            else:
                ids.extend(self._word_ids(seg))
        return ids

    def encode(self, text: str, max_len: int | None = None) -> EncodedSequence:
        ids = self.tokenize(text)
        if max_len is not None:
            if max_len < 2:
                raise ValueError("max_len must be >= 2")
            if len(ids) > max_len:
                ends_with_sep = ids[-1] == self.sep_id
                ids = ids[:max_len]
                if ends_with_sep:
                    ids[-1] = self.sep_id
            ids = ids + [self.pad_id] * (max_len - len(ids))
        arr = np.asarray(ids, dtype=np.int64)
        return EncodedSequence(arr, (arr != self.pad_id).astype(np.int64))

    def decode(self, ids: Iterable[int]) -> str:
        segments: list[str] = []
        open_word = False
        marker = self.config.space_marker
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.id_to_token):
                raise UnknownId(i)
            if i == self.pad_id:
                continue
            tok = self.id_to_token[i]
            if tok in self.specials:
                segments.append(tok)
                open_word = False
            elif tok.startswith(marker) or not open_word:
                segments.append(tok[len(marker):] if tok.startswith(marker) else tok)
                open_word = True
            else:
                segments[-1] += tok
        return " ".join(s.replace(marker, " ") for s in segments)

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "config": {
                "vocab_size": self.config.vocab_size,
                "special_tokens": list(self.config.special_tokens),
                "space_marker": self.config.space_marker,
                "min_frequency": self.config.min_frequency,
            },
            "vocab": [[tok, i] for i, tok in enumerate(self.id_to_token)],
            "merges": [list(m) for m in self.merges],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=1) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_dict(cls, doc: dict) -> "Tokenizer":
        if not isinstance(doc, dict) or "version" not in doc:
            raise CorruptFile("missing version field")
        if doc["version"] != FORMAT_VERSION:
            raise VersionMismatch(f"tokenizer format {doc['version']}, expected {FORMAT_VERSION}")
        try:
            config = TokenizerConfig(**doc["config"])
            vocab = doc["vocab"]
            merges = [(str(l), str(r)) for l, r in doc["merges"]]
            tokens = [None] * len(vocab)
            for tok, i in vocab:
                tokens[i] = tok
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise CorruptFile(f"invalid tokenizer document: {exc}") from exc
        n_special = len(config.special_tokens)
        if None in tokens or tokens[:n_special] != list(config.special_tokens):
            raise CorruptFile("vocabulary layout does not match config")
        merged = {l + r for l, r in merges}
        alphabet = [t for t in tokens[n_special:] if len(t) == 1 and t not in merged]
        tok = cls(config, alphabet, merges)
        if tok.id_to_token != tokens:
            raise CorruptFile("vocabulary does not match merge table")
        return tok

    @classmethod
    def load(cls, path: str | Path) -> "Tokenizer":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise CorruptFile(f"{path}: {exc}") from exc
        return cls.from_dict(doc)


def train(corpus: Iterable[str], config: TokenizerConfig = TokenizerConfig()) -> Tokenizer:
    """Learn a merge table from preprocessed texts.

    The result depends only on the multiset of words in ``corpus``.
    """
    texts = list(corpus)
    if not texts:
        raise EmptyCorpus("corpus is empty")
    freqs = word_frequencies(texts, config)
    chars = {config.space_marker} if freqs else set()
    for w in freqs:
        chars.update(w)
    alphabet = sorted(chars - set(config.special_tokens))
    base = len(config.special_tokens) + len(alphabet)
    if config.vocab_size < base:
        raise VocabTooSmall(
            f"vocab_size {config.vocab_size} < {len(config.special_tokens)} specials "
            f"+ {len(alphabet)} characters"
        )
    merges = learn_merges(freqs, config.vocab_size - base, config.min_frequency,
                          config.space_marker, config.special_tokens)
    return Tokenizer(config, alphabet, merges)


encode = Tokenizer.encode
decode = Tokenizer.decode
save = Tokenizer.save
load = Tokenizer.load
