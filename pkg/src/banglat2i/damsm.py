"""Attention-driven image-text matching: score, contrastive loss, pretraining.

Word-region similarities are softmax-normalized over words, sharpened
attention over regions builds one region-context per word, word relevances
are cosines against the word features, and a smooth-max over words gives the
pair score. The loss contrasts matched pairs against the rest of the batch in
both directions at word and sentence level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import (EncoderConfig, ImageEncoder, TextEncoder, WordFeatures,
                       image_encode, text_encode)
from .errors import BatchError, NumericsError, TrainingError
from .numerics import Adam, RngStream, Tensor
from .numerics import tensor as ops
from .textdata import CaptionRecord, DatasetSplit, load_image_float

MatchScore = float


@dataclass
class DamsmConfig:
    gamma1: float = 4.0    # region-attention sharpening
    gamma2: float = 5.0    # smooth-max sharpening over words
    gamma3: float = 10.0   # posterior sharpening over batch pairs
    epochs: int = 40
    batch_size: int = 16
    learning_rate: float = 2e-3

    def __post_init__(self):
        if min(self.gamma1, self.gamma2, self.gamma3) <= 0:
            raise ValueError("gammas must be positive")
        if self.batch_size < 2:
            raise BatchError("batch_size must be >= 2 for the contrastive loss")


@dataclass
class DamsmLossReport:
    lw1: Tensor
    lw2: Tensor
    ls1: Tensor
    ls2: Tensor
    total: Tensor

    def as_floats(self) -> dict[str, float]:
        return {"lw1": self.lw1.item(), "lw2": self.lw2.item(), "ls1": self.ls1.item(),
                "ls2": self.ls2.item(), "total": self.total.item()}


def _unit_columns(x: Tensor, axis: int) -> Tensor:
    """L2-normalize along `axis`; zero columns (masked padding) stay zero-safe."""
    return x / ops.tsqrt(ops.clamp_min(ops.tsum(ops.square(x), axis=axis, keepdims=True), 1e-30))


def score_matrix(regions: Tensor, words: Tensor, mask: np.ndarray, cfg: DamsmConfig) -> Tensor:
    """Pairwise matching scores: images (K, D, N) x captions (L, D, T) -> (K, L).

    Similarities are cosines (features unit-normalized along D), so the score
    is invariant under joint positive rescaling of all inputs.
    """
    mask = np.asarray(mask, dtype=bool)
    regions = _unit_columns(regions, axis=1)
    words = _unit_columns(words, axis=1)
    words_t = ops.transpose(words, (0, 2, 1))                      # (L, T, D)
    lhs = ops.reshape(words_t, (1,) + words_t.shape)                # (1, L, T, D)
    rhs = ops.reshape(regions, (regions.shape[0], 1) + regions.shape[1:])  # (K, 1, D, N)
    sim = ops.matmul(lhs, rhs)                                      # (K, L, T, N)
    sim = ops.masked_fill_add(sim, mask[None, :, :, None])
    sim = ops.softmax(sim, axis=2)                                  # normalize over words
    attn = ops.softmax(sim * cfg.gamma1, axis=3)                    # attend over regions
    regions_t = ops.transpose(rhs, (0, 1, 3, 2))                    # (K, 1, N, D)
    context = ops.matmul(attn, regions_t)                           # (K, L, T, D)
    relevance = ops.cosine_similarity(context, lhs, axis=3)         # (K, L, T)
    relevance = ops.masked_fill_add(relevance * cfg.gamma2, mask[None, :, :])
    return ops.logsumexp(relevance, axis=2) * (1.0 / cfg.gamma2)


def matching_score(regions: Tensor | np.ndarray, words: Tensor | np.ndarray,
                   mask: np.ndarray, cfg: DamsmConfig) -> MatchScore:
    """Score one (image, caption) pair; raises on zero-norm feature vectors."""
    regions = regions if isinstance(regions, Tensor) else Tensor(np.asarray(regions, dtype=np.float64))
    words = words if isinstance(words, Tensor) else Tensor(np.asarray(words, dtype=np.float64))
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise BatchError("matching_score needs at least one unmasked word")
    if np.linalg.norm(regions.data, axis=0).min() == 0.0:
        raise NumericsError("matching_score: zero-norm region vector")
    norms = np.linalg.norm(words.data, axis=0)
    if norms[mask].min() == 0.0:
        raise NumericsError("matching_score: zero-norm word vector")
    r = score_matrix(ops.reshape(regions, (1,) + regions.shape),
                     ops.reshape(words, (1,) + words.shape),
                     mask[None, :], cfg)
    value = r.item()
    if not np.isfinite(value):
        raise NumericsError("matching_score: non-finite result")
    return value


def _sentence_scores(global_feats: Tensor, sentences: Tensor) -> Tensor:
    """Cosine matrix images x captions from (K, D) and (L, D)."""
    gn = global_feats / ops.tsqrt(ops.clamp_min(ops.tsum(ops.square(global_feats), axis=1, keepdims=True), 1e-30))
    sn = sentences / ops.tsqrt(ops.clamp_min(ops.tsum(ops.square(sentences), axis=1, keepdims=True), 1e-30))
    return ops.matmul(gn, ops.transpose(sn, (1, 0)))


def _bidirectional_nll(scores: Tensor, gamma3: float) -> tuple[Tensor, Tensor]:
    """Negative log posterior of the diagonal under softmax rows and columns."""
    m = scores.shape[0]
    sharp = scores * gamma3
    diag_idx = (np.arange(m), np.arange(m))
    log_p_rows = sharp - ops.logsumexp(sharp, axis=1, keepdims=True)
    log_p_cols = sharp - ops.logsumexp(sharp, axis=0, keepdims=True)
    loss_rows = -ops.tsum(log_p_rows[diag_idx])
    loss_cols = -ops.tsum(log_p_cols[diag_idx])
    return loss_rows, loss_cols


def damsm_loss(regions: Tensor, global_feats: Tensor, words: Tensor,
               sentences: Tensor, mask: np.ndarray, cfg: DamsmConfig) -> DamsmLossReport:
    """Four-part contrastive loss over an aligned batch (item k matches item k)."""
    m = regions.shape[0]
    if m < 2:
        raise BatchError(f"damsm_loss needs a batch of >= 2, got {m}")
    word_scores = score_matrix(regions, words, mask, cfg)
    lw1, lw2 = _bidirectional_nll(word_scores, cfg.gamma3)
    sent_scores = _sentence_scores(global_feats, sentences)
    ls1, ls2 = _bidirectional_nll(sent_scores, cfg.gamma3)
    total = lw1 + lw2 + ls1 + ls2
    ops.check_finite("damsm_loss", total)
    return DamsmLossReport(lw1=lw1, lw2=lw2, ls1=ls1, ls2=ls2, total=total)


# -- training and retrieval -------------------------------------------------------


def caption_batch(records: list[CaptionRecord], caption_ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ids = np.stack([records[i].captions[int(c)].ids for i, c in enumerate(caption_ids)])
    lengths = np.array([records[i].captions[int(c)].length for i, c in enumerate(caption_ids)])
    return ids, lengths


def load_images(records: list[CaptionRecord], dtype=np.float64) -> np.ndarray:
    return np.stack([load_image_float(r.image_path) for r in records]).astype(dtype)


def retrieval_eval(text_enc: TextEncoder, img_enc: ImageEncoder,
                   records: list[CaptionRecord], cfg: DamsmConfig,
                   images: np.ndarray | None = None, caption_index: int = 0) -> dict[str, float]:
    """Rank every test image for each caption (and vice versa), caption 0 per record."""
    if not records:
        raise BatchError("retrieval_eval needs a non-empty split")
    was_training = (text_enc.training, img_enc.training)
    text_enc.eval(), img_enc.eval()
    if images is None:
        images = load_images(records, img_enc.cfg.np_dtype)
    ids = np.stack([r.captions[caption_index].ids for r in records])
    lengths = np.array([r.captions[caption_index].length for r in records])
    words, sentences = text_encode(text_enc, ids, lengths)
    regions, _ = image_encode(img_enc, images)
    scores = score_matrix(regions, words.features, words.mask, cfg).data  # (imgs, caps)
    n = len(records)
    ranks_c2i = (scores > scores[np.arange(n), np.arange(n)][None, :]).sum(axis=0)
    ranks_i2c = (scores > scores[np.arange(n), np.arange(n)][:, None]).sum(axis=1)
    out = {
        "top1_c2i": float((ranks_c2i < 1).mean()),
        "top5_c2i": float((ranks_c2i < 5).mean()),
        "top1_i2c": float((ranks_i2c < 1).mean()),
        "top5_i2c": float((ranks_i2c < 5).mean()),
    }
    if was_training[0]:
        text_enc.train()
    if was_training[1]:
        img_enc.train()
    return out


def train_damsm(split: DatasetSplit, vocab_size: int, cfg: DamsmConfig,
                enc_cfg: EncoderConfig, rng: RngStream,
                log=None) -> tuple[TextEncoder, ImageEncoder, list[dict[str, float]]]:
    """Pretrain both encoders; deterministic in rng; returns per-epoch history."""
    if not split.train:
        raise TrainingError("empty training split")
    text_enc = TextEncoder(vocab_size, enc_cfg, rng.split("init/text"))
    img_enc = ImageEncoder(enc_cfg, rng.split("init/image"))
    params = [t for _, t in text_enc.named_parameters()] + [t for _, t in img_enc.named_parameters()]
    opt = Adam(params, lr=cfg.learning_rate, beta1=0.9)
    order_rng = rng.split("order")
    caption_rng = rng.split("captions")
    dropout_rng = rng.split("dropout")
    train_images = load_images(split.train, enc_cfg.np_dtype)
    test_images = load_images(split.test, enc_cfg.np_dtype) if split.test else None
    n = len(split.train)
    n_caps = len(split.train[0].captions)
    history: list[dict[str, float]] = []
    for epoch in range(1, cfg.epochs + 1):
        order = order_rng.permutation(n)
        picks = caption_rng.integers(n_caps, n)
        text_enc.train(), img_enc.train()
        sums = {"lw1": 0.0, "lw2": 0.0, "ls1": 0.0, "ls2": 0.0, "total": 0.0}
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if len(idx) < 2:
                continue
            recs = [split.train[i] for i in idx]
            ids, lengths = caption_batch(recs, picks[idx])
            words, sentences = text_encode(text_enc, ids, lengths, dropout_rng)
            regions, global_feats = image_encode(img_enc, train_images[idx])
            report = damsm_loss(regions, global_feats, words.features, sentences, words.mask, cfg)
            if not np.isfinite(report.total.data):
                raise TrainingError(f"DAMSM loss non-finite at epoch {epoch}")
            opt.zero_grad()
            report.total.backward()
            opt.step()
            for key, value in report.as_floats().items():
                sums[key] += value
            batches += 1
        row = {"epoch": float(epoch)}
        row.update({k: v / max(batches, 1) for k, v in sums.items()})
        if split.test:
            ret = retrieval_eval(text_enc, img_enc, split.test, cfg, images=test_images)
            row["top1_c2i"] = ret["top1_c2i"]
            row["top1_i2c"] = ret["top1_i2c"]
        else:
            row["top1_c2i"] = 0.0
            row["top1_i2c"] = 0.0
        history.append(row)
        if log is not None:
            log(row)
    text_enc.eval(), img_enc.eval()
    return text_enc, img_enc, history


HISTORY_COLUMNS = ["epoch", "lw1", "lw2", "ls1", "ls2", "total", "top1_c2i", "top1_i2c"]


def history_csv(history: list[dict[str, float]]) -> str:
    lines = [",".join(HISTORY_COLUMNS)]
    for row in history:
        lines.append(",".join(
            str(int(row["epoch"])) if col == "epoch" else f"{row[col]:.6f}"
            for col in HISTORY_COLUMNS))
    return "\n".join(lines) + "\n"
