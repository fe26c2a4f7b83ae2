from __future__ import annotations

import json
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maldom import bpe, corpus, urlprep
from maldom.bpe import DEFAULT_SPECIALS, TokenizerConfig
from oracles import brute_force_bpe

N_SPECIAL = len(DEFAULT_SPECIALS)


@pytest.fixture(scope="module")
def abab():
    return bpe.train(["abab", "abab"], TokenizerConfig(vocab_size=N_SPECIAL + 3 + 3))


@pytest.fixture(scope="module")
def url_tokenizer():
    lines = [urlprep.preprocess(x) for x in corpus.gen_pretrain_corpus(1500, seed=11)]
    return bpe.train(lines, TokenizerConfig(vocab_size=400)), lines


def test_abab_merges(abab):
    # (a,b) x4 first; then (▁,ab) and (ab,ab) tie at 2 and the marker sorts
    # like a space, so (▁,ab) wins; that consumes the (ab,ab) adjacency,
    # leaving (▁ab,ab).
    assert abab.merges[:2] == [("a", "b"), ("▁", "ab")]
    assert abab.merges == [("a", "b"), ("▁", "ab"), ("▁ab", "ab")]
    assert abab.merges == brute_force_bpe(["abab", "abab"], 3, DEFAULT_SPECIALS)


def test_specials_lowest_ids(abab):
    assert abab.id_to_token[:N_SPECIAL] == list(DEFAULT_SPECIALS)
    assert abab.id_to_token[N_SPECIAL:N_SPECIAL + 3] == ["a", "b", "▁"]


def test_encode_example(abab):
    seq = abab.encode("[CLS] [DOMAIN] ab [SEP]", max_len=8)
    v = abab.vocab
    assert seq.ids.tolist() == [v["[CLS]"], v["[DOMAIN]"], v["▁ab"], v["[SEP]"]] + [v["[PAD]"]] * 4
    assert seq.attention_mask.tolist() == [1, 1, 1, 1, 0, 0, 0, 0]
    assert seq.ids.dtype == np.int64


def test_character_fallback_and_unknown():
    tok = bpe.train(["a b"], TokenizerConfig(vocab_size=N_SPECIAL + 3))
    assert tok.merges == []
    assert tok.tokenize("a") == [tok.vocab["▁"], tok.vocab["a"]]
    assert tok.tokenize("az") == [tok.vocab["▁"], tok.vocab["a"], tok.unk_id]


def test_truncation_keeps_head_and_sep(url_tokenizer):
    tok, lines = url_tokenizer
    long = max(lines, key=len)
    full = tok.encode(long)
    seq = tok.encode(long, max_len=6)
    assert len(seq) == 6
    assert seq.ids[:5].tolist() == full.ids[:5].tolist()
    assert seq.ids[-1] == tok.sep_id
    with pytest.raises(ValueError):
        tok.encode(long, max_len=1)


def test_specials_are_atomic(url_tokenizer):
    tok, lines = url_tokenizer
    for token in tok.id_to_token[N_SPECIAL:]:
        for s in DEFAULT_SPECIALS:
            assert s not in token
    for line in lines[:200]:
        ids = tok.encode(line).ids.tolist()
        assert ids[0] == tok.cls_id and ids[-1] == tok.sep_id
        assert ids[1] in {tok.vocab[m] for m in ("[DOMAIN]", "[IP]", "[IPv6]")}


def test_merge_never_spells_a_special():
    texts = ["a[PAD] b[PAD] c[PAD]"] * 2
    cfg = TokenizerConfig(vocab_size=60)
    unrestricted = bpe.learn_merges(bpe.word_frequencies(texts, cfg), 40, specials=())
    assert "[PAD]" in {l + r for l, r in unrestricted}
    tok = bpe.train(texts, cfg)
    assert "[PAD]" not in {l + r for l, r in tok.merges}
    assert tok.id_to_token.count("[PAD]") == 1
    assert len(tok.vocab) == len(tok.id_to_token)
    assert tok.merges == brute_force_bpe(texts, 60 - N_SPECIAL - 6, DEFAULT_SPECIALS)


def test_vocab_constructive(url_tokenizer):
    tok, _ = url_tokenizer
    built = set(DEFAULT_SPECIALS) | set(tok.alphabet)
    for left, right in tok.merges:
        assert left in built and right in built
        built.add(left + right)
    assert set(tok.id_to_token) == built
    assert tok.vocab_size == 400


def test_encode_shapes_and_mask(url_tokenizer):
    tok, lines = url_tokenizer
    for line in lines[:300]:
        for max_len in (2, 7, 64):
            seq = tok.encode(line, max_len)
            assert len(seq.ids) == len(seq.attention_mask) == max_len
            assert ((seq.attention_mask == 0) == (seq.ids == tok.pad_id)).all()
            assert seq.ids.max() < tok.vocab_size


def test_decode_round_trip(url_tokenizer):
    tok, lines = url_tokenizer
    for line in lines:
        assert tok.decode(tok.encode(line, 512).ids) == line


def test_decode_edge_cases(abab):
    assert abab.decode([abab.pad_id, abab.pad_id]) == ""
    with pytest.raises(bpe.UnknownId):
        abab.decode([abab.vocab_size])
    with pytest.raises(bpe.UnknownId):
        abab.decode([-1])


@given(st.lists(st.integers(0, 399), max_size=40))
def test_decode_never_fails_on_vocab_ids(url_tokenizer, ids):
    tok, _ = url_tokenizer
    assert isinstance(tok.decode(ids), str)


def test_save_load_round_trip(tmp_path, url_tokenizer):
    tok, _ = url_tokenizer
    tok.save(tmp_path / "t.json")
    back = bpe.load(tmp_path / "t.json")
    assert back == tok
    back.save(tmp_path / "u.json")
    assert (tmp_path / "t.json").read_bytes() == (tmp_path / "u.json").read_bytes()
    doc = json.loads((tmp_path / "t.json").read_text("utf-8"))
    assert set(doc) == {"version", "config", "vocab", "merges"}


def test_training_is_deterministic_and_order_insensitive(tmp_path, url_tokenizer):
    tok, lines = url_tokenizer
    shuffled = list(lines)
    random.Random(0).shuffle(shuffled)
    again = bpe.train(shuffled, TokenizerConfig(vocab_size=400))
    assert again.to_json() == tok.to_json()


def test_corrupt_and_version(tmp_path, abab):
    path = tmp_path / "t.json"
    abab.save(path)
    text = path.read_text("utf-8")
    path.write_text(text[: len(text) // 2], encoding="utf-8")
    with pytest.raises(bpe.CorruptFile):
        bpe.load(path)
    doc = json.loads(text)
    doc["version"] = 99
    path.write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(bpe.VersionMismatch):
        bpe.load(path)
    doc = json.loads(text)
    doc["vocab"][0][0] = "[NOPE]"
    with pytest.raises(bpe.CorruptFile):
        bpe.Tokenizer.from_dict(doc)
    with pytest.raises(bpe.CorruptFile):
        bpe.Tokenizer.from_dict({"version": 1, "config": {}, "merges": []})


def test_errors():
    with pytest.raises(bpe.EmptyCorpus):
        bpe.train([], TokenizerConfig())
    with pytest.raises(bpe.VocabTooSmall):
        bpe.train(["abc"], TokenizerConfig(vocab_size=N_SPECIAL + 2))
    with pytest.raises(ValueError):
        TokenizerConfig(special_tokens=("[PAD]", "[PAD]", "[UNK]", "[SEP]", "[MASK]"))


small_corpus = st.lists(
    st.lists(st.text("abcd", min_size=1, max_size=6), min_size=1, max_size=4).map(" ".join),
    min_size=1, max_size=8,
).filter(lambda texts: sum(map(len, texts)) <= 100)


@settings(max_examples=150, deadline=None)
@given(small_corpus, st.integers(0, 25))
def test_merges_match_brute_force(texts, extra):
    alphabet = {c for t in texts for c in t if not c.isspace()} | {"▁"}
    cfg = TokenizerConfig(vocab_size=N_SPECIAL + len(alphabet) + extra)
    assert bpe.train(texts, cfg).merges == brute_force_bpe(texts, extra, DEFAULT_SPECIALS)
