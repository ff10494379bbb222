"""Word-to-subregion attention and attended-word reporting.

A learned projection moves word features into the image hidden space; each
subregion scores every word by dot product, masked positions are pushed to
an effectively minus-infinite score, and the softmax over words yields one
context vector per subregion. Reporting averages a word's attention across
subregions to rank the most-attended tokens.
"""

from __future__ import annotations

import numpy as np

from .encoders import WordFeatures, fan_in_param
from .errors import MaskError, ShapeError
from .numerics import Module, RngStream, Tensor
from .numerics import tensor as ops
from .textdata import TokenizedCaption, Vocabulary


def project_words(projection: Tensor, words: WordFeatures) -> Tensor:
    """(Dh, D) x (B, D, T) -> (B, Dh, T); the mask travels with `words`."""
    if projection.shape[1] != words.features.shape[1]:
        raise ShapeError(f"projection expects dim {projection.shape[1]}, got {words.features.shape[1]}")
    return ops.matmul(projection, words.features)


def word_context(projected: Tensor, mask: np.ndarray, hidden: Tensor) -> tuple[Tensor, Tensor]:
    """Context vectors and attention for projected words against hidden cells.

    projected: (B, Dh, T); hidden: (B, Dh, N). Returns context (B, Dh, N) and
    attention (B, T, N) that is column-stochastic over unmasked words.
    """
    if projected.shape[1] != hidden.shape[1]:
        raise ShapeError(f"shared dim mismatch: words {projected.shape[1]} vs hidden {hidden.shape[1]}")
    if not np.asarray(mask).any(axis=1).all():
        raise MaskError("an item has every word masked")
    scores = ops.matmul(ops.transpose(projected, (0, 2, 1)), hidden)  # (B, T, N)
    scores = ops.masked_fill_add(scores, np.asarray(mask)[:, :, None])
    alpha = ops.softmax(scores, axis=1)
    context = ops.matmul(projected, alpha)
    return context, alpha


class WordAttention(Module):
    """Projection + scoring for one generator stage."""

    def __init__(self, word_dim: int, hidden_dim: int, rng: RngStream, dtype):
        super().__init__()
        self.projection = fan_in_param(rng, (hidden_dim, word_dim), dtype)

    def forward(self, words: WordFeatures, hidden: Tensor) -> tuple[Tensor, Tensor]:
        return word_context(project_words(self.projection, words), words.mask, hidden)


def top_attended(alpha: np.ndarray, caption: TokenizedCaption, k: int,
                 vocab: Vocabulary) -> list[tuple[str, float]]:
    """Top-k (token, score) with score = mean attention over subregions.

    Masked positions carry exactly zero attention and are excluded (so a
    single-word caption reports that one word at score 1.0); ties rank the
    earlier token first; at most the caption's true length entries come back.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    alpha = np.asarray(alpha)
    scores = alpha.mean(axis=1)
    n = min(caption.length, scores.shape[0])
    live = [i for i in range(n) if alpha[i].any()]
    ranked = sorted(live, key=lambda i: (-scores[i], i))[: min(k, len(live))]
    return [(vocab.decode(int(caption.ids[i])), float(scores[i])) for i in ranked]
