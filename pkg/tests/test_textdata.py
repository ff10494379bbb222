"""Tokenizer, vocabulary, caption encoding, splitting, and the toy dataset."""

import unicodedata
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from banglat2i.errors import DatasetError, EmptyCaptionError, EncodingError
from banglat2i.imageio import read_ppm
from banglat2i.textdata import (BACKGROUND_RGB, BANGLA_COLORS, BANGLA_SHAPES,
                                CAPTION_TEMPLATES, EOS_ID, PAD_ID, UNK_ID,
                                CaptionRecord, ToySpec, Vocabulary, build_vocab,
                                decode_caption, encode_caption,
                                gen_toy_dataset, generate_toy_records,
                                load_dataset, render_toy_image, split_dataset,
                                tokenize)

# -- tokenize -------------------------------------------------------------------


def test_tokenize_empty():
    assert tokenize("") == []


def test_tokenize_whitespace_split():
    assert tokenize("লাল পাখি") == ["লাল", "পাখি"]


def test_tokenize_strips_punctuation_and_danda():
    # oracle: apply the declared separator table by hand
    text = "লাল, পাখি।"
    oracle = []
    cur = ""
    for ch in unicodedata.normalize("NFC", text):
        if ch.isspace() or unicodedata.category(ch).startswith("P"):
            if cur:
                oracle.append(cur)
            cur = ""
        else:
            cur += ch
    if cur:
        oracle.append(cur)
    assert tokenize(text) == oracle == ["লাল", "পাখি"]


def test_tokenize_double_danda_and_ascii():
    assert tokenize("পাখি॥ (red)!") == ["পাখি", "red"]


def test_tokenize_lowercases_latin_only():
    assert tokenize("RED লাল") == ["red", "লাল"]


def test_tokenize_keeps_combining_signs_attached():
    # BENGALI SIGN AA and hasant sequences stay glued to their bases
    assert tokenize("ত্রিভুজ টা") == ["ত্রিভুজ", "টা"]


def test_tokenize_idempotent_under_renormalization():
    text = "একটি সবুজ বৃত্ত।"
    decomposed = unicodedata.normalize("NFD", text)
    assert tokenize(text) == tokenize(decomposed)


def test_tokenize_rejects_non_text():
    with pytest.raises(EncodingError):
        tokenize(b"bytes")  # type: ignore[arg-type]


@settings(max_examples=60)
@given(st.text(alphabet=st.characters(codec="utf-8"), max_size=40))
def test_tokenize_idempotence_property(text):
    tokens = tokenize(text)
    assert tokenize(" ".join(tokens)) == tokens


# -- vocabulary -------------------------------------------------------------------


def test_vocab_empty_corpus_has_only_specials():
    v = build_vocab([], min_freq=1)
    assert len(v) == 3
    assert v.id_to_token == ["<pad>", "<unk>", "<eos>"]


def test_vocab_ordering_rule():
    v = build_vocab([["ক", "ক", "খ"]], min_freq=1)
    assert v.token_to_id == {"ক": 3, "খ": 4}


def test_vocab_matches_counting_oracle():
    rng = np.random.default_rng(7)
    words = [f"w{i}" for i in range(30)]
    corpus = [[words[i] for i in rng.integers(0, 30, size=rng.integers(2, 9))]
              for _ in range(100)]
    v = build_vocab(corpus, min_freq=2)
    counts = Counter(t for cap in corpus for t in cap)
    first = {}
    pos = 0
    for cap in corpus:
        for t in cap:
            first.setdefault(t, pos)
            pos += 1
    kept = sorted((t for t, c in counts.items() if c >= 2),
                  key=lambda t: (-counts[t], first[t]))
    assert v.id_to_token[3:] == kept
    rare = [t for t, c in counts.items() if c < 2]
    assert all(v.lookup(t) == UNK_ID for t in rare)


def test_vocab_ids_dense_and_bijective():
    v = build_vocab([["a", "b", "c", "b"]], min_freq=1)
    assert [v.lookup(v.decode(i)) for i in range(3, len(v))] == list(range(3, len(v)))


def test_vocab_json_roundtrip():
    v = build_vocab([["লাল", "নীল", "লাল"]], min_freq=1)
    v2 = Vocabulary.from_json(v.to_json())
    assert v2.token_to_id == v.token_to_id
    assert v2.id_to_token == v.id_to_token


# -- caption encoding ---------------------------------------------------------------


@pytest.fixture
def vocab():
    return build_vocab([["লাল", "নীল", "পাখি", "বৃত্ত"]], min_freq=1)


def test_encode_pads_and_appends_eos(vocab):
    cap = encode_caption(vocab, ["লাল"], max_len=4)
    assert cap.ids.tolist() == [vocab.lookup("লাল"), EOS_ID, PAD_ID, PAD_ID]
    assert cap.length == 2


def test_encode_truncates_to_prefix(vocab):
    cap = encode_caption(vocab, ["লাল", "নীল", "পাখি", "বৃত্ত", "লাল", "নীল",
                                 "পাখি", "বৃত্ত", "লাল", "নীল"], max_len=5)
    assert cap.length == 5
    assert cap.ids[4] == EOS_ID
    assert cap.ids[:4].tolist() == [vocab.lookup(t) for t in ["লাল", "নীল", "পাখি", "বৃত্ত"]]


def test_encode_unknown_token_becomes_unk(vocab):
    cap = encode_caption(vocab, ["সবুজ", "লাল"], max_len=6)
    assert cap.ids[0] == UNK_ID
    assert cap.ids[1] == vocab.lookup("লাল")


def test_encode_rejects_empty(vocab):
    with pytest.raises(EmptyCaptionError):
        encode_caption(vocab, [], max_len=4)


def test_decode_recovers_up_to_unk_and_truncation(vocab):
    tokens = ["লাল", "সবুজ", "পাখি"]
    cap = encode_caption(vocab, tokens, max_len=8)
    assert decode_caption(vocab, cap) == ["লাল", "<unk>", "পাখি"]


@settings(max_examples=50)
@given(st.lists(st.sampled_from(["লাল", "নীল", "পাখি", "বৃত্ত", "xyz"]), min_size=1, max_size=10))
def test_encode_invariants(tokens):
    v = build_vocab([["লাল", "নীল", "পাখি", "বৃত্ত"]], min_freq=1)
    cap = encode_caption(v, tokens, max_len=6)
    assert 1 <= cap.length <= 6
    assert cap.ids[cap.length - 1] == EOS_ID
    assert all(i == PAD_ID for i in cap.ids[cap.length:])


# -- dataset splitting --------------------------------------------------------------


def records(n):
    return [CaptionRecord(image_path=f"img{i}", captions=[], class_label=0) for i in range(n)]


def test_split_exact_arithmetic():
    s = split_dataset(records(100), 0.7, seed=5)
    assert (len(s.train), len(s.test)) == (70, 30)


def test_split_deterministic_and_seed_sensitive():
    a = split_dataset(records(50), 0.7, seed=5)
    b = split_dataset(records(50), 0.7, seed=5)
    c = split_dataset(records(50), 0.7, seed=6)
    assert [r.image_path for r in a.train] == [r.image_path for r in b.train]
    assert [r.image_path for r in a.train] != [r.image_path for r in c.train]
    assert (len(c.train), len(c.test)) == (35, 15)


def test_split_rejects_tiny_input():
    with pytest.raises(DatasetError):
        split_dataset(records(1), 0.7, seed=0)


@settings(max_examples=40)
@given(st.integers(2, 200), st.floats(0.05, 0.95), st.integers(0, 2**32))
def test_split_partitions_exactly(n, fraction, seed):
    s = split_dataset(records(n), fraction, seed)
    train_paths = {r.image_path for r in s.train}
    test_paths = {r.image_path for r in s.test}
    assert not train_paths & test_paths
    assert len(s.train) + len(s.test) == n
    assert train_paths | test_paths == {f"img{i}" for i in range(n)}
    expected = min(max(int(round(fraction * n)), 1), n - 1)
    assert len(s.train) == expected


# -- toy dataset -----------------------------------------------------------------------


def test_toy_counts_and_caption_consistency(tmp_path):
    spec = ToySpec(n_images=8, seed=7)
    recs = gen_toy_dataset(spec, tmp_path)
    assert len(list((tmp_path / "images").glob("*.ppm"))) == 8
    total_lines = 0
    for rec in recs:
        lines = (tmp_path / "captions" / f"{rec.stem}.txt").read_text(encoding="utf-8").splitlines()
        total_lines += len(lines)
        for line in lines:
            toks = tokenize(line)
            assert rec.color_word in toks
            assert rec.shape_word in toks
    assert total_lines == 80


def test_toy_deterministic_bytes(tmp_path):
    spec = ToySpec(n_images=6, seed=3)
    d1, d2 = tmp_path / "a", tmp_path / "b"
    gen_toy_dataset(spec, d1)
    gen_toy_dataset(spec, d2)
    for sub in ("images", "captions"):
        for p1 in sorted((d1 / sub).iterdir()):
            p2 = d2 / sub / p1.name
            assert p1.read_bytes() == p2.read_bytes()
    assert (d1 / "classes.tsv").read_bytes() == (d2 / "classes.tsv").read_bytes()


def test_toy_foreground_matches_declared_rgb():
    spec = ToySpec(n_images=24, seed=13)
    recs = generate_toy_records(spec)
    for rec in recs:
        img = render_toy_image(spec, rec)
        fg = img[(img != np.array(BACKGROUND_RGB, dtype=np.uint8)).any(axis=2)]
        assert len(fg) > 20
        assert np.abs(fg.mean(axis=0) - np.array(rec.rgb)).max() < 1.0


def test_toy_covers_all_classes():
    recs = generate_toy_records(ToySpec(n_images=24, seed=1))
    assert sorted({r.class_label for r in recs}) == list(range(len(BANGLA_COLORS) * len(BANGLA_SHAPES)))


def test_toy_templates_all_name_both_attributes():
    for template in CAPTION_TEMPLATES:
        caption = template.format(c="COLORWORD", s="SHAPEWORD")
        assert "COLORWORD" in caption.split()
        assert "SHAPEWORD" in caption.split()


def test_load_dataset_roundtrip(tmp_path):
    gen_toy_dataset(ToySpec(n_images=6, seed=1), tmp_path)
    ds = load_dataset(tmp_path)
    assert len(ds.records) == 6
    assert ds.image_size == 32
    assert all(len(r.captions) == 10 for r in ds.records)
    # ingestion sorted by path
    assert [r.image_path for r in ds.records] == sorted(r.image_path for r in ds.records)
    img = read_ppm(ds.records[0].image_path)
    assert img.shape == (32, 32, 3)
