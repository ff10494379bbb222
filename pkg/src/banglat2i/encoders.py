"""Text and image encoders mapping both modalities into one semantic space.

The text side is a bidirectional LSTM over caption token ids whose two
directions are concatenated per position (word features) and at the true
sequence ends (sentence feature). The image side is a small stride-2 CNN
trained from scratch; an intermediate layer provides per-subregion features
and the pooled top provides a global feature, each projected to the shared
dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, VocabError
from .numerics import Module, RngStream, Tensor
from .numerics import tensor as ops


@dataclass
class EncoderConfig:
    dim: int = 64                 # shared semantic dimension
    embed_dim: int = 32
    hidden: int = 32              # per direction; 2 * hidden == dim
    dropout: float = 0.2
    image_size: int = 32
    conv_channels: tuple[int, int, int, int] = (16, 32, 64, 64)
    dtype: str = "float32"        # training throughput; checks use float64

    def __post_init__(self):
        if 2 * self.hidden != self.dim:
            raise ShapeError(f"common-space mismatch: 2*hidden={2 * self.hidden} != dim={self.dim}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass
class WordFeatures:
    features: Tensor          # (B, dim, T)
    mask: np.ndarray          # (B, T) bool, True on real tokens


def uniform_param(rng: RngStream, shape, scale: float, dtype) -> Tensor:
    return Tensor(rng.uniform(shape, -scale, scale).astype(dtype), requires_grad=True)


def fan_in_param(rng: RngStream, shape, dtype) -> Tensor:
    fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
    return uniform_param(rng, shape, 1.0 / np.sqrt(fan_in), dtype)


class LstmCell(Module):
    """Single-direction LSTM cell; gate order i, f, g, o; forget bias 1."""

    def __init__(self, input_dim: int, hidden: int, rng: RngStream, dtype):
        super().__init__()
        self.hidden = hidden
        self.w_input = uniform_param(rng, (input_dim, 4 * hidden), 0.1, dtype)
        self.w_state = uniform_param(rng, (hidden, 4 * hidden), 0.1, dtype)
        bias = np.zeros(4 * hidden, dtype=dtype)
        bias[hidden : 2 * hidden] = 1.0
        self.bias = Tensor(bias, requires_grad=True)

    def step(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        gates = ops.affine(x, self.w_input, self.bias) + ops.matmul(h, self.w_state)
        n = self.hidden
        i = ops.sigmoid(gates[:, 0:n])
        f = ops.sigmoid(gates[:, n : 2 * n])
        g = ops.tanh(gates[:, 2 * n : 3 * n])
        o = ops.sigmoid(gates[:, 3 * n : 4 * n])
        c_new = f * c + i * g
        return o * ops.tanh(c_new), c_new


class TextEncoder(Module):
    def __init__(self, vocab_size: int, cfg: EncoderConfig, rng: RngStream):
        super().__init__()
        self.cfg = cfg
        self.vocab_size = vocab_size
        dt = cfg.np_dtype
        self.embedding = uniform_param(rng.split("embedding"), (vocab_size, cfg.embed_dim), 0.1, dt)
        self.fwd = LstmCell(cfg.embed_dim, cfg.hidden, rng.split("fwd"), dt)
        self.bwd = LstmCell(cfg.embed_dim, cfg.hidden, rng.split("bwd"), dt)

    def _run_direction(self, cell: LstmCell, emb: Tensor, mask_f: np.ndarray,
                       time_order) -> tuple[list, Tensor]:
        batch = emb.data.shape[0]
        dt = emb.data.dtype
        h = Tensor(np.zeros((batch, cell.hidden), dtype=dt))
        c = Tensor(np.zeros((batch, cell.hidden), dtype=dt))
        cols: dict[int, Tensor] = {}
        for t in time_order:
            m = Tensor(mask_f[:, t : t + 1])
            h_new, c_new = cell.step(emb[:, t, :], h, c)
            # freeze the carried state past each sequence's true end
            h = m * h_new + (1.0 - m) * h
            c = m * c_new + (1.0 - m) * c
            cols[t] = m * h_new
        return [cols[t] for t in range(emb.data.shape[1])], h

    def forward(self, ids: np.ndarray, lengths: np.ndarray,
                rng: RngStream | None = None) -> tuple[WordFeatures, Tensor]:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.max(initial=0) >= self.vocab_size or ids.min(initial=0) < 0:
            raise VocabError(f"token id out of range for vocab of {self.vocab_size}")
        batch, seq = ids.shape
        mask = np.arange(seq)[None, :] < np.asarray(lengths)[:, None]
        mask_f = mask.astype(self.cfg.np_dtype)
        emb = ops.embedding(self.embedding, ids)
        if self.training and self.cfg.dropout > 0:
            if rng is None:
                raise ValueError("training-mode text encoding needs an rng for dropout")
            emb = ops.dropout(emb, self.cfg.dropout, rng, True)
        cols_f, last_f = self._run_direction(self.fwd, emb, mask_f, range(seq))
        cols_b, last_b = self._run_direction(self.bwd, emb, mask_f, range(seq - 1, -1, -1))
        columns = [
            ops.reshape(ops.concat([cols_f[t], cols_b[t]], axis=1), (batch, self.cfg.dim, 1))
            for t in range(seq)
        ]
        words = ops.concat(columns, axis=2)
        sentence = ops.concat([last_f, last_b], axis=1)
        return WordFeatures(features=words, mask=mask), sentence


class ImageEncoder(Module):
    """Stride-2 conv trunk; subregion tap after block 2, global head after block 4."""

    def __init__(self, cfg: EncoderConfig, rng: RngStream):
        super().__init__()
        self.cfg = cfg
        dt = cfg.np_dtype
        c1, c2, c3, c4 = cfg.conv_channels
        r = rng.split("image")
        self.conv1_w = fan_in_param(r.split("c1"), (c1, 3, 3, 3), dt)
        self.conv1_b = Tensor(np.zeros(c1, dtype=dt), requires_grad=True)
        self.conv2_w = fan_in_param(r.split("c2"), (c2, c1, 3, 3), dt)
        self.conv2_b = Tensor(np.zeros(c2, dtype=dt), requires_grad=True)
        self.region_w = fan_in_param(r.split("region"), (cfg.dim, c2, 1, 1), dt)
        self.region_b = Tensor(np.zeros(cfg.dim, dtype=dt), requires_grad=True)
        self.conv3_w = fan_in_param(r.split("c3"), (c3, c2, 3, 3), dt)
        self.conv3_b = Tensor(np.zeros(c3, dtype=dt), requires_grad=True)
        self.conv4_w = fan_in_param(r.split("c4"), (c4, c3, 3, 3), dt)
        self.conv4_b = Tensor(np.zeros(c4, dtype=dt), requires_grad=True)
        self.global_w = fan_in_param(r.split("global"), (c4, cfg.dim), dt)
        self.global_b = Tensor(np.zeros(cfg.dim, dtype=dt), requires_grad=True)

    @property
    def region_grid(self) -> int:
        return self.cfg.image_size // 4

    def forward(self, images) -> tuple[Tensor, Tensor]:
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=self.cfg.np_dtype))
        if x.ndim != 4 or x.shape[2] != self.cfg.image_size or x.shape[3] != self.cfg.image_size:
            raise ShapeError(f"image batch must be (B, 3, {self.cfg.image_size}, {self.cfg.image_size}), got {x.shape}")
        h = ops.leaky_relu(ops.conv2d(x, self.conv1_w, self.conv1_b, stride=2, pad=1))
        h = ops.leaky_relu(ops.conv2d(h, self.conv2_w, self.conv2_b, stride=2, pad=1))
        region_map = ops.conv2d(h, self.region_w, self.region_b, stride=1, pad=0)
        batch = x.shape[0]
        regions = ops.reshape(region_map, (batch, self.cfg.dim, self.region_grid**2))
        h = ops.leaky_relu(ops.conv2d(h, self.conv3_w, self.conv3_b, stride=2, pad=1))
        h = ops.leaky_relu(ops.conv2d(h, self.conv4_w, self.conv4_b, stride=2, pad=1))
        pooled = ops.global_avg_pool(h)
        global_feat = ops.affine(pooled, self.global_w, self.global_b)
        ops.check_finite("image_encode", regions, global_feat)
        return regions, global_feat


def text_encode(encoder: TextEncoder, ids: np.ndarray, lengths: np.ndarray,
                rng: RngStream | None = None) -> tuple[WordFeatures, Tensor]:
    words, sentence = encoder.forward(ids, lengths, rng)
    ops.check_finite("text_encode", words.features, sentence)
    return words, sentence


def image_encode(encoder: ImageEncoder, images) -> tuple[Tensor, Tensor]:
    return encoder.forward(images)
