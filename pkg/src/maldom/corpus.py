"""Dataset ingestion, deduplication, splitting and synthetic generators."""

from __future__ import annotations

import csv
import io
import json
import string
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

TLDS = ("com", "net", "org", "io")
DGA_FAMILIES = ("uniform_char", "hex", "dictionary")

_ALNUM = string.ascii_lowercase + string.digits
_HEX = "0123456789abcdef"


class CorpusError(Exception):
    pass


class MalformedCsv(CorpusError):
    pass


class ClassTooSmall(CorpusError):
    pass


@dataclass(frozen=True)
class RawEntry:
    text: str
    source: str = ""


@dataclass(frozen=True)
class LabeledEntry:
    text: str
    label_id: int
    label_name: str


@dataclass
class CorpusReport:
    kept: int = 0
    skipped: int = 0
    duplicates: int = 0
    replaced_bytes: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass(frozen=True)
class SplitSpec:
    train_frac: Fraction = Fraction(3, 5)
    valid_frac: Fraction = Fraction(1, 5)
    test_frac: Fraction = Fraction(1, 5)
    seed: int = 42
    stratified: bool = True

    def __post_init__(self):
        fracs = [Fraction(f).limit_denominator(10**6) for f in
                 (self.train_frac, self.valid_frac, self.test_frac)]
        if any(f <= 0 for f in fracs) or sum(fracs) != 1:
            raise ValueError(f"split fractions must be positive and sum to 1, got {fracs}")
        object.__setattr__(self, "train_frac", fracs[0])
        object.__setattr__(self, "valid_frac", fracs[1])
        object.__setattr__(self, "test_frac", fracs[2])


def decode_utf8(data: bytes) -> tuple[str, int]:
    """Decode UTF-8, replacing invalid bytes with U+FFFD.

    Returns the text and the number of invalid bytes replaced.
    """
    parts = []
    replaced = 0
    view = data
    while True:
        try:
            parts.append(view.decode("utf-8"))
            break
        except UnicodeDecodeError as exc:
            parts.append(view[: exc.start].decode("utf-8"))
            parts.append("�")
            replaced += exc.end - exc.start
            view = view[exc.end :]
    return "".join(parts), replaced


def ingest(
    path: str | Path,
    fmt: str = "lines",
    text_col: str = "url",
    label_col: str | None = "label",
    strict: bool = False,
    source: str | None = None,
    label_names: Sequence[str] | None = None,
) -> tuple[list, CorpusReport]:
    """Read a line file or a CSV file into entries.

    ``fmt="lines"`` yields :class:`RawEntry` objects. ``fmt="csv"`` yields
    :class:`LabeledEntry` objects when ``label_col`` is set (ids assigned by
    sorted label name unless ``label_names`` fixes the order) and
    :class:`RawEntry` objects otherwise.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    text, replaced = decode_utf8(path.read_bytes())
    report = CorpusReport(replaced_bytes=replaced)
    source = source if source is not None else path.stem

    if fmt == "lines":
        entries = []
        for line in text.split("\n"):
            line = line.strip()
            if not line:
                report.skipped += 1
                continue
            entries.append(RawEntry(line, source))
        # a trailing newline does not count as a blank record
        if text.endswith("\n") or not text:
            report.skipped -= 1
        report.kept = len(entries)
        return entries, report

    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")

    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedCsv(f"{path}: missing header row") from None
    try:
        ti = header.index(text_col)
        li = header.index(label_col) if label_col else None
    except ValueError:
        raise MalformedCsv(f"{path}: header {header} lacks {text_col!r}/{label_col!r}") from None

    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            report.skipped += 1
            continue
        if len(row) != len(header):
            if strict:
                raise MalformedCsv(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            report.skipped += 1
            continue
        value = row[ti].strip()
        if not value:
            report.skipped += 1
            continue
        rows.append((value, row[li].strip() if li is not None else None))

    if li is None:
        entries = [RawEntry(t, source) for t, _ in rows]
    else:
        names = list(label_names) if label_names else sorted({lab for _, lab in rows})
        index = {name: i for i, name in enumerate(names)}
        unknown = {lab for _, lab in rows} - index.keys()
        if unknown:
            raise MalformedCsv(f"{path}: labels not in label_names: {sorted(unknown)}")
        entries = [LabeledEntry(t, index[lab], lab) for t, lab in rows]
    report.kept = len(entries)
    return entries, report


def dedup(entries: Iterable, lowercase: bool = False) -> tuple[list, CorpusReport]:
    """Drop exact duplicates (on whitespace-trimmed text), keeping first occurrences.

    Entries may be strings or objects with a ``text`` attribute.
    """
    seen = set()
    kept = []
    report = CorpusReport()
    for entry in entries:
        key = (entry if isinstance(entry, str) else entry.text).strip()
        if lowercase:
            key = key.lower()
        if key in seen:
            report.duplicates += 1
            continue
        seen.add(key)
        kept.append(entry)
    report.kept = len(kept)
    return kept, report


def _cut(n: int, spec: SplitSpec) -> tuple[int, int]:
    n_train = int(n * spec.train_frac + Fraction(1, 2))
    n_valid = min(int(n * spec.valid_frac + Fraction(1, 2)), n - n_train)
    return n_train, n_valid


def split(entries: Sequence[LabeledEntry], spec: SplitSpec = SplitSpec()):
    """Partition entries into (train, valid, test), deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    if not spec.stratified:
        order = rng.permutation(len(entries))
        n_train, n_valid = _cut(len(entries), spec)
        return (
            [entries[i] for i in order[:n_train]],
            [entries[i] for i in order[n_train : n_train + n_valid]],
            [entries[i] for i in order[n_train + n_valid :]],
        )

    by_class: dict[int, list[int]] = {}
    for i, e in enumerate(entries):
        by_class.setdefault(e.label_id, []).append(i)
    parts: tuple[list[int], list[int], list[int]] = ([], [], [])
    for label in sorted(by_class):
        idx = by_class[label]
        if len(idx) < 3:
            raise ClassTooSmall(f"class {label} has {len(idx)} members, need at least 3")
        idx = [idx[j] for j in rng.permutation(len(idx))]
        n_train, n_valid = _cut(len(idx), spec)
        parts[0].extend(idx[:n_train])
        parts[1].extend(idx[n_train : n_train + n_valid])
        parts[2].extend(idx[n_train + n_valid :])
    out = []
    for part in parts:
        order = rng.permutation(len(part))
        out.append([entries[part[j]] for j in order])
    return tuple(out)


@lru_cache(maxsize=1)
def wordlist() -> tuple[str, ...]:
    text = resources.files("maldom").joinpath("data/words.txt").read_text("utf-8")
    return tuple(w for w in text.split() if w)


def _pick(rng: np.random.Generator, seq: Sequence[str]) -> str:
    return seq[int(rng.integers(len(seq)))]


def gen_benign(n: int, seed: int, label_id: int = 0) -> list[LabeledEntry]:
    """Word-compound domains such as ``northgarden.org``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng([seed, 0])
    words = wordlist()
    out = []
    for _ in range(n):
        k = int(rng.integers(1, 4))
        name = "".join(_pick(rng, words) for _ in range(k))
        out.append(LabeledEntry(f"{name}.{_pick(rng, TLDS)}", label_id, "benign"))
    return out


def gen_dga(family: str, n: int, seed: int, label_id: int = 1) -> list[LabeledEntry]:
    if n < 1:
        raise ValueError("n must be >= 1")
    if family not in DGA_FAMILIES:
        raise ValueError(f"unknown DGA family {family!r}; choose from {DGA_FAMILIES}")
    rng = np.random.default_rng([seed, 1 + DGA_FAMILIES.index(family)])
    words = wordlist()
    out = []
    for _ in range(n):
        if family == "uniform_char":
            length = int(rng.integers(12, 21))
            name = "".join(_ALNUM[i] for i in rng.integers(len(_ALNUM), size=length))
        elif family == "hex":
            name = "".join(_HEX[i] for i in rng.integers(16, size=16))
        else:
            digits = "".join(str(d) for d in rng.integers(10, size=4))
            name = _pick(rng, words) + _pick(rng, words) + digits
        out.append(LabeledEntry(f"{name}.{_pick(rng, TLDS)}", label_id, family))
    return out


def make_dataset(counts: dict[str, int], seed: int, binary: bool = False) -> list[LabeledEntry]:
    """Assemble a labeled synthetic dataset from ``{"benign": n, family: n, ...}``.

    Multi-class ids follow the order of ``counts``; in binary mode every
    DGA family collapses to ``(1, "dga")``.
    """
    names = list(counts)
    out = []
    for i, name in enumerate(names):
        n = counts[name]
        if name == "benign":
            rows = gen_benign(n, seed)
        else:
            rows = gen_dga(name, n, seed)
        if binary:
            label = (0, "benign") if name == "benign" else (1, "dga")
        else:
            label = (i, name)
        out.extend(LabeledEntry(r.text, *label) for r in rows)
    return out


_PATH_WORDS = ("login", "index", "wp-admin", "secure", "update", "files", "img", "api", "v1", "account")
_EXTS = (".php", ".html", ".exe", ".js", "", "")


def gen_pretrain_corpus(n: int, seed: int) -> list[str]:
    """Mixed raw corpus of domains, URLs and IP-hosted URLs for MLM pre-training."""
    rng = np.random.default_rng([seed, 99])
    words = wordlist()
    sub_seed = int(rng.integers(2**31))
    pools = [
        [e.text for e in gen_benign(n, sub_seed)],
        *[[e.text for e in gen_dga(f, n, sub_seed)] for f in DGA_FAMILIES],
    ]
    out = []
    for i in range(n):
        kind = int(rng.integers(6))
        host = pools[min(kind, 3)][i] if kind < 4 else _pick(rng, pools[0])
        if kind == 5:
            host = ".".join(str(int(o)) for o in rng.integers(1, 255, size=4))
        if kind >= 4 or rng.random() < 0.3:
            scheme = _pick(rng, ("http", "https"))
            depth = int(rng.integers(1, 4))
            segs = [_pick(rng, _PATH_WORDS) if rng.random() < 0.5 else _pick(rng, words)
                    for _ in range(depth)]
            path = "/" + "/".join(segs) + _pick(rng, _EXTS)
            if rng.random() < 0.3:
                path += f"?id={int(rng.integers(10000))}"
            out.append(f"{scheme}://{host}{path}")
        else:
            out.append(host)
    return out


def write_csv(entries: Iterable[LabeledEntry], path: str | Path, text_col: str = "url",
              label_col: str = "label") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([text_col, label_col])
        for e in entries:
            writer.writerow([e.text, e.label_name])


@dataclass
class LabelSet:
    """Dataset-global bijection between label names and ids."""

    names: list[str] = field(default_factory=list)

    @classmethod
    def from_entries(cls, entries: Iterable[LabeledEntry]) -> "LabelSet":
        pairs = sorted({(e.label_id, e.label_name) for e in entries})
        names = [name for _, name in pairs]
        if [i for i, _ in pairs] != list(range(len(pairs))) or len(set(names)) != len(names):
            raise ValueError(f"labels are not a dense bijection: {pairs}")
        return cls(names)

    def __len__(self) -> int:
        return len(self.names)
