"""Save/load trained components as index-mapped tensor archives.

Each component's state goes under a stable dotted prefix
(``text_encoder.embedding``, ``generator.stage1.attn.projection``, ...);
the resolved configuration needed to rebuild module shapes travels in the
run manifest of the directory that owns the archive.
"""

from __future__ import annotations

import json
from pathlib import Path

from .config import FullConfig, config_from_dict
from .damsm import DamsmConfig
from .encoders import EncoderConfig, ImageEncoder, TextEncoder
from .errors import IoError
from .gan import STAGE_SIZES, Discriminator, GanTrainConfig, GeneratorStack
from .manifest import read_manifest
from .metrics import MetricsConfig, StandInClassifier
from .numerics import RngStream, load_archive, save_archive
from .textdata import Vocabulary

CHECKPOINT_DIR = "checkpoint"
VOCAB_FILE = "vocab.json"


def _prefixed(prefix: str, state: dict) -> dict:
    return {f"{prefix}.{name}": arr for name, arr in state.items()}


def _strip(prefix: str, archive: dict) -> dict:
    plen = len(prefix) + 1
    out = {name[plen:]: arr for name, arr in archive.items() if name.startswith(prefix + ".")}
    if not out:
        raise IoError(f"archive holds no tensors under prefix {prefix!r}")
    return out


def save_vocab(directory, vocab: Vocabulary) -> None:
    (Path(directory) / VOCAB_FILE).write_text(
        json.dumps(vocab.to_json(), ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8")


def load_vocab(directory) -> Vocabulary:
    path = Path(directory) / VOCAB_FILE
    if not path.exists():
        raise IoError(f"vocabulary file missing: {path}")
    return Vocabulary.from_json(json.loads(path.read_text(encoding="utf-8")))


def save_damsm_checkpoint(out_dir, text_enc: TextEncoder, img_enc: ImageEncoder,
                          vocab: Vocabulary) -> None:
    tensors = {}
    tensors.update(_prefixed("text_encoder", text_enc.state_dict()))
    tensors.update(_prefixed("image_encoder", img_enc.state_dict()))
    save_archive(Path(out_dir) / CHECKPOINT_DIR, tensors)
    save_vocab(out_dir, vocab)


def load_damsm_checkpoint(ckpt_dir) -> tuple[TextEncoder, ImageEncoder, Vocabulary, FullConfig]:
    manifest = read_manifest(ckpt_dir)
    cfg = config_from_dict(manifest["config"])
    vocab = load_vocab(ckpt_dir)
    archive = load_archive(Path(ckpt_dir) / CHECKPOINT_DIR)
    rng = RngStream(0, "rebuild")
    text_enc = TextEncoder(len(vocab), cfg.encoders, rng)
    text_enc.load_state_dict(_strip("text_encoder", archive))
    img_enc = ImageEncoder(cfg.encoders, rng)
    img_enc.load_state_dict(_strip("image_encoder", archive))
    text_enc.eval()
    img_enc.eval()
    return text_enc, img_enc, vocab, cfg


def save_gan_checkpoint(out_dir, gen: GeneratorStack, discs: list[Discriminator],
                        text_enc: TextEncoder, img_enc: ImageEncoder,
                        vocab: Vocabulary) -> None:
    tensors = {}
    tensors.update(_prefixed("generator", gen.state_dict()))
    for size, disc in zip(STAGE_SIZES, discs):
        tensors.update(_prefixed(f"discriminator{size}", disc.state_dict()))
    tensors.update(_prefixed("text_encoder", text_enc.state_dict()))
    tensors.update(_prefixed("image_encoder", img_enc.state_dict()))
    save_archive(Path(out_dir) / CHECKPOINT_DIR, tensors)
    save_vocab(out_dir, vocab)


def load_gan_checkpoint(ckpt_dir) -> tuple[GeneratorStack, TextEncoder, ImageEncoder,
                                           Vocabulary, FullConfig]:
    manifest = read_manifest(ckpt_dir)
    cfg = config_from_dict(manifest["config"])
    vocab = load_vocab(ckpt_dir)
    archive = load_archive(Path(ckpt_dir) / CHECKPOINT_DIR)
    rng = RngStream(0, "rebuild")
    text_enc = TextEncoder(len(vocab), cfg.encoders, rng)
    text_enc.load_state_dict(_strip("text_encoder", archive))
    img_enc = ImageEncoder(cfg.encoders, rng)
    img_enc.load_state_dict(_strip("image_encoder", archive))
    gen = GeneratorStack(cfg.encoders.dim, cfg.gan, rng)
    gen.load_state_dict(_strip("generator", archive))
    gen.eval()
    text_enc.eval()
    img_enc.eval()
    return gen, text_enc, img_enc, vocab, cfg


def save_classifier_checkpoint(out_dir, clf: StandInClassifier) -> None:
    save_archive(Path(out_dir) / CHECKPOINT_DIR, _prefixed("classifier", clf.state_dict()))


def load_classifier_checkpoint(ckpt_dir) -> tuple[StandInClassifier, dict]:
    manifest = read_manifest(ckpt_dir)
    meta = manifest["artifacts"]["classifier"]
    cfg = config_from_dict(manifest["config"])
    clf = StandInClassifier(int(meta["n_classes"]), int(meta["image_size"]), cfg.metrics,
                            RngStream(0, "rebuild"), meta.get("n_shapes"))
    clf.load_state_dict(_strip("classifier", load_archive(Path(ckpt_dir) / CHECKPOINT_DIR)))
    clf.eval()
    return clf, meta
