"""Bangla caption processing and datasets.

Covers tokenization, vocabulary construction, caption encoding, seeded
train/test splitting, ingestion of the on-disk dataset layout
(``images/`` + ``captions/<stem>.txt`` + ``classes.tsv``), and a synthetic
colored-shapes dataset whose captions provably describe the rendered image.
"""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DatasetError, EmptyCaptionError, EncodingError, IoError
from .imageio import read_ppm, u8_to_float, write_ppm
from .numerics.rng import RngStream

PAD_ID, UNK_ID, EOS_ID = 0, 1, 2
PAD_TOKEN, UNK_TOKEN, EOS_TOKEN = "<pad>", "<unk>", "<eos>"

DEFAULT_MAX_LEN = 18


def tokenize(text: str) -> list[str]:
    """NFC-normalize, split on whitespace/punctuation, lowercase Latin.

    Bengali danda (U+0964) and double danda (U+0965) carry Unicode punctuation
    category and are stripped with the rest; combining signs stay attached to
    their base characters since they are category M, not separators.
    """
    if not isinstance(text, str):
        raise EncodingError("tokenize expects a str")
    try:
        text = unicodedata.normalize("NFC", text)
    except TypeError as exc:  # pragma: no cover - normalize only fails on non-str
        raise EncodingError(str(exc)) from exc
    tokens: list[str] = []
    current: list[str] = []
    for ch in text:
        if ch.isspace() or unicodedata.category(ch).startswith("P"):
            if current:
                tokens.append("".join(current))
                current = []
        else:
            current.append(ch)
    if current:
        tokens.append("".join(current))
    return [t.lower() for t in tokens]


@dataclass
class Vocabulary:
    token_to_id: dict[str, int]
    id_to_token: list[str]
    min_freq: int

    def __len__(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def decode(self, idx: int) -> str:
        return self.id_to_token[idx]

    def to_json(self) -> dict:
        return {"id_to_token": self.id_to_token, "min_freq": self.min_freq}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        id_to_token = list(obj["id_to_token"])
        return cls({t: i for i, t in enumerate(id_to_token) if i >= 3},
                   id_to_token, int(obj["min_freq"]))


def build_vocab(corpus: list[list[str]], min_freq: int = 1) -> Vocabulary:
    """Ids in order of (frequency desc, first occurrence asc), specials first."""
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts: Counter[str] = Counter()
    first_seen: dict[str, int] = {}
    pos = 0
    for caption in corpus:
        for token in caption:
            counts[token] += 1
            if token not in first_seen:
                first_seen[token] = pos
            pos += 1
    kept = [t for t, c in counts.items() if c >= min_freq]
    kept.sort(key=lambda t: (-counts[t], first_seen[t]))
    id_to_token = [PAD_TOKEN, UNK_TOKEN, EOS_TOKEN] + kept
    return Vocabulary({t: i + 3 for i, t in enumerate(kept)}, id_to_token, min_freq)


@dataclass
class TokenizedCaption:
    ids: np.ndarray  # (max_len,) int64; ids[length-1] == EOS, PAD after
    length: int
    raw: str


def encode_caption(vocab: Vocabulary, tokens: list[str], max_len: int = DEFAULT_MAX_LEN) -> TokenizedCaption:
    """Truncate to max_len-1 tokens, append EOS, pad; unknown tokens -> UNK."""
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    if not tokens:
        raise EmptyCaptionError("caption has no tokens")
    body = [vocab.lookup(t) for t in tokens[: max_len - 1]]
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    ids[: len(body)] = body
    ids[len(body)] = EOS_ID
    return TokenizedCaption(ids=ids, length=len(body) + 1, raw=" ".join(tokens))


def decode_caption(vocab: Vocabulary, caption: TokenizedCaption) -> list[str]:
    return [vocab.decode(int(i)) for i in caption.ids[: caption.length - 1]]


@dataclass
class CaptionRecord:
    image_path: str
    captions: list[TokenizedCaption]
    class_label: int


@dataclass
class DatasetSplit:
    train: list[CaptionRecord]
    test: list[CaptionRecord]
    ratio: tuple[float, float]
    seed: int


def split_dataset(records: list[CaptionRecord], train_fraction: float, seed: int) -> DatasetSplit:
    """Seeded shuffle then partition; |train| = round(train_fraction * N)."""
    if not (0.0 < train_fraction < 1.0):
        raise ValueError("train_fraction must lie in (0, 1)")
    if len(records) < 2:
        raise DatasetError(f"need at least 2 records to split, got {len(records)}")
    order = RngStream(seed, "split").permutation(len(records))
    n_train = int(round(train_fraction * len(records)))
    n_train = min(max(n_train, 1), len(records) - 1)
    shuffled = [records[i] for i in order]
    return DatasetSplit(train=shuffled[:n_train], test=shuffled[n_train:],
                        ratio=(train_fraction, 1.0 - train_fraction), seed=seed)


# -- synthetic colored-shapes dataset ------------------------------------------------

BANGLA_COLORS: list[tuple[str, tuple[int, int, int]]] = [
    ("লাল", (220, 30, 30)),
    ("সবুজ", (30, 180, 60)),
    ("নীল", (40, 60, 220)),
    ("হলুদ", (230, 210, 40)),
    ("কমলা", (240, 140, 20)),
    ("বেগুনি", (140, 50, 180)),
    ("গোলাপি", (240, 120, 170)),
    ("সাদা", (235, 235, 235)),
]

BANGLA_SHAPES: list[str] = ["বৃত্ত", "বর্গ", "ত্রিভুজ"]

BACKGROUND_RGB = (18, 18, 18)

# Every template names the color and the shape as standalone words; word order
# and filler words vary so the text encoder sees the attribute words in
# different positions.
CAPTION_TEMPLATES: list[str] = [
    "একটি {c} {s}",
    "{c} রঙের একটি {s}",
    "ছবিতে একটি {c} {s} আছে",
    "এখানে একটি {c} {s} দেখা যায়",
    "অন্ধকার পটভূমিতে একটি {c} {s}",
    "{s} টি {c} রঙের",
    "একটি {s} যা {c}",
    "ছোট একটি {c} {s}",
    "{c} একটি {s} ছবির মাঝে",
    "একটি উজ্জ্বল {c} {s}",
]


@dataclass
class ToySpec:
    n_images: int
    image_size: int = 32
    shapes: list[str] = field(default_factory=lambda: list(BANGLA_SHAPES))
    colors: list[tuple[str, tuple[int, int, int]]] = field(default_factory=lambda: list(BANGLA_COLORS))
    captions_per_image: int = 10
    seed: int = 0


@dataclass
class ToyRecord:
    """Ground truth for one rendered image, used by tests and probes."""

    stem: str
    color_word: str
    rgb: tuple[int, int, int]
    shape_word: str
    class_label: int
    center: tuple[int, int]
    radius: int
    captions: list[str]


def _render_shape(size: int, shape: str, rgb: tuple[int, int, int],
                  center: tuple[int, int], radius: int) -> np.ndarray:
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:] = BACKGROUND_RGB
    yy, xx = np.mgrid[0:size, 0:size]
    cy, cx = center
    if shape == "বৃত্ত":
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius**2
    elif shape == "বর্গ":
        mask = np.maximum(np.abs(xx - cx), np.abs(yy - cy)) <= radius
    elif shape == "ত্রিভুজ":
        # upward triangle: apex at cy - radius, base at cy + radius
        t = (yy - (cy - radius)) / (2.0 * radius)
        mask = (t >= 0) & (t <= 1) & (np.abs(xx - cx) <= t * radius)
    else:
        raise ValueError(f"unknown shape {shape!r}")
    img[mask] = rgb
    return img


def generate_toy_records(spec: ToySpec) -> list[ToyRecord]:
    """Deterministic synthesis of images-with-true-captions, in memory."""
    if spec.n_images < 1:
        raise ValueError("n_images must be >= 1")
    if not spec.shapes or not spec.colors:
        raise ValueError("shapes and colors must be non-empty")
    geo = RngStream(spec.seed, "toy/geometry")
    tmpl = RngStream(spec.seed, "toy/templates")
    n_classes = len(spec.colors) * len(spec.shapes)
    records = []
    for i in range(spec.n_images):
        class_label = i % n_classes
        color_word, rgb = spec.colors[class_label // len(spec.shapes)]
        shape_word = spec.shapes[class_label % len(spec.shapes)]
        radius = int(geo.integers(5, 1)[0]) + 6  # 6..10 px
        margin = radius + 2
        lo, hi = margin, spec.image_size - 1 - margin
        cx = lo + int(geo.integers(hi - lo + 1, 1)[0])
        cy = lo + int(geo.integers(hi - lo + 1, 1)[0])
        k = spec.captions_per_image
        if k <= len(CAPTION_TEMPLATES):
            idxs = tmpl.permutation(len(CAPTION_TEMPLATES))[:k]
        else:
            idxs = tmpl.integers(len(CAPTION_TEMPLATES), k)
        captions = [CAPTION_TEMPLATES[j].format(c=color_word, s=shape_word) for j in idxs]
        records.append(ToyRecord(
            stem=f"toy_{i:05d}", color_word=color_word, rgb=rgb, shape_word=shape_word,
            class_label=class_label, center=(cy, cx), radius=radius, captions=captions,
        ))
    return records


def render_toy_image(spec: ToySpec, rec: ToyRecord) -> np.ndarray:
    return _render_shape(spec.image_size, rec.shape_word, rec.rgb, rec.center, rec.radius)


def gen_toy_dataset(spec: ToySpec, out_dir) -> list[ToyRecord]:
    """Write the dataset layout to out_dir and return ground-truth records."""
    out_dir = Path(out_dir)
    records = generate_toy_records(spec)
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
        (out_dir / "captions").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create dataset directories under {out_dir}: {exc}") from exc
    class_lines = []
    for rec in records:
        write_ppm(out_dir / "images" / f"{rec.stem}.ppm", render_toy_image(spec, rec))
        text = "".join(c + "\n" for c in rec.captions)
        try:
            (out_dir / "captions" / f"{rec.stem}.txt").write_text(text, encoding="utf-8", newline="\n")
        except OSError as exc:
            raise IoError(f"cannot write captions for {rec.stem}: {exc}") from exc
        class_lines.append(f"{rec.stem}\t{rec.class_label}\n")
    try:
        (out_dir / "classes.tsv").write_text("".join(class_lines), encoding="utf-8", newline="\n")
    except OSError as exc:
        raise IoError(f"cannot write classes.tsv: {exc}") from exc
    return records


# -- on-disk ingestion -----------------------------------------------------------------


@dataclass
class LoadedDataset:
    records: list[CaptionRecord]
    vocab: Vocabulary
    n_classes: int
    image_size: int


def load_dataset(data_dir, max_len: int = DEFAULT_MAX_LEN, min_freq: int = 1) -> LoadedDataset:
    """Read the images/captions/classes.tsv layout, sorted by path."""
    data_dir = Path(data_dir)
    classes_path = data_dir / "classes.tsv"
    captions_dir = data_dir / "captions"
    images_dir = data_dir / "images"
    for p in (classes_path, captions_dir, images_dir):
        if not p.exists():
            raise IoError(f"dataset path missing: {p}")
    labels: dict[str, int] = {}
    for line in classes_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        stem, label = line.split("\t")
        labels[stem] = int(label)
    stems = sorted(labels)
    if not stems:
        raise DatasetError(f"no records listed in {classes_path}")
    raw_captions: dict[str, list[list[str]]] = {}
    corpus: list[list[str]] = []
    for stem in stems:
        path = captions_dir / f"{stem}.txt"
        if not path.exists():
            raise IoError(f"caption file missing: {path}")
        lines = [ln for ln in path.read_text(encoding="utf-8").split("\n") if ln.strip()]
        toks = [tokenize(ln) for ln in lines]
        raw_captions[stem] = toks
        corpus.extend(toks)
    vocab = build_vocab(corpus, min_freq=min_freq)
    records = []
    image_size = None
    for stem in stems:
        img_path = images_dir / f"{stem}.ppm"
        if not img_path.exists():
            raise IoError(f"image file missing: {img_path}")
        if image_size is None:
            image_size = read_ppm(img_path).shape[0]
        captions = [encode_caption(vocab, t, max_len) for t in raw_captions[stem]]
        records.append(CaptionRecord(image_path=str(img_path), captions=captions,
                                     class_label=labels[stem]))
    n_classes = max(labels.values()) + 1
    return LoadedDataset(records=records, vocab=vocab, n_classes=n_classes,
                         image_size=int(image_size))


def load_image_float(path) -> np.ndarray:
    """Image file -> (3, H, W) float64 in [-1, 1]."""
    return u8_to_float(read_ppm(path))
