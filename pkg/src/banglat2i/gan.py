"""Staged attentional generator, per-stage discriminators, and GAN training.

Stage 0 maps noise plus the augmented condition to an 8x8 hidden grid; stages
1 and 2 refine with word-context attention, residual blocks and nearest
upsampling to 16x16 and 32x32. Each stage has a discriminator with an
unconditional head (real vs fake) and a conditional head (image-sentence
match, with mismatches made by rotating sentences within the batch). The
generator objective adds the matching loss of the frozen encoders, weighted
by `beta`, and the condition regularizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention import WordAttention
from .damsm import DamsmConfig, damsm_loss
from .encoders import (EncoderConfig, ImageEncoder, TextEncoder, WordFeatures,
                       fan_in_param, image_encode, text_encode)
from .errors import ShapeError, TrainingError
from .imageio import float_to_u8, tile_grid, write_ppm
from .numerics import Adam, Module, RngStream, Tensor, gaussian_kl, reparam_sample
from .numerics import tensor as ops
from .textdata import DatasetSplit

STAGE_SIZES = (8, 16, 32)


@dataclass
class GanTrainConfig:
    beta: float = 5.0          # weight of the matching loss in the total
    epochs: int = 120
    batch_size: int = 16
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    z_dim: int = 16
    cond_dim: int = 16
    ngf: int = 16
    ndf: int = 16
    adam_beta1: float = 0.5
    sample_every: int = 20
    dtype: str = "float32"        # training throughput; checks use float64

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.z_dim < 1 or self.cond_dim < 1:
            raise ValueError("z_dim and cond_dim must be >= 1")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass
class CAOutput:
    c_hat: Tensor
    mu: Tensor
    logvar: Tensor
    kl: Tensor  # scalar, averaged over the batch


@dataclass
class ImagePyramid:
    images: list[Tensor]   # [(B,3,8,8), (B,3,16,16), (B,3,32,32)], values in [-1,1]
    attn: list[Tensor]     # attention maps for stages 1 and 2, (B, T, N)


class BatchNorm2d(Module):
    """Per-channel batch statistics in train mode, running averages in eval."""

    def __init__(self, channels: int, dtype, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gain = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.shift = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.register_buffer("running_mean", Tensor(np.zeros(channels, dtype=dtype)))
        self.register_buffer("running_var", Tensor(np.ones(channels, dtype=dtype)))

    def forward(self, x: Tensor) -> Tensor:
        c = x.shape[1]
        if self.training:
            mean = ops.tmean(x, axis=(0, 2, 3), keepdims=True)
            var = ops.tmean(ops.square(x - mean), axis=(0, 2, 3), keepdims=True)
            m = self.momentum
            self.running_mean.data = (1 - m) * self.running_mean.data + m * mean.data.reshape(c)
            self.running_var.data = (1 - m) * self.running_var.data + m * var.data.reshape(c)
        else:
            mean = Tensor(self.running_mean.data.reshape(1, c, 1, 1))
            var = Tensor(self.running_var.data.reshape(1, c, 1, 1))
        norm = (x - mean) / ops.tsqrt(var + self.eps)
        return norm * ops.reshape(self.gain, (1, c, 1, 1)) + ops.reshape(self.shift, (1, c, 1, 1))


class Conv(Module):
    def __init__(self, c_in: int, c_out: int, k: int, stride: int, pad: int,
                 rng: RngStream, dtype, bias: bool = True):
        super().__init__()
        self.stride = stride
        self.pad = pad
        self.weight = fan_in_param(rng, (c_out, c_in, k, k), dtype)
        self.bias = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class CondAugment(Module):
    """Sentence feature -> Gaussian condition (mu, logvar) -> sampled vector."""

    def __init__(self, sent_dim: int, cond_dim: int, rng: RngStream, dtype):
        super().__init__()
        self.cond_dim = cond_dim
        self.weight = fan_in_param(rng, (sent_dim, 2 * cond_dim), dtype)
        self.bias = Tensor(np.zeros(2 * cond_dim, dtype=dtype), requires_grad=True)

    def forward(self, sentence: Tensor, rng: RngStream | None) -> CAOutput:
        stats = ops.affine(sentence, self.weight, self.bias)
        mu = stats[:, : self.cond_dim]
        logvar = stats[:, self.cond_dim :]
        if self.training:
            if rng is None:
                raise ValueError("train-mode conditioning needs an rng")
            c_hat = reparam_sample(mu, logvar, rng)
        else:
            c_hat = mu
        kl = gaussian_kl(mu, logvar) * (1.0 / sentence.shape[0])
        return CAOutput(c_hat=c_hat, mu=mu, logvar=logvar, kl=kl)


class ResBlock(Module):
    def __init__(self, channels: int, rng: RngStream, dtype):
        super().__init__()
        self.conv1 = Conv(channels, channels, 3, 1, 1, rng.split("c1"), dtype)
        self.bn1 = BatchNorm2d(channels, dtype)
        self.conv2 = Conv(channels, channels, 3, 1, 1, rng.split("c2"), dtype)
        self.bn2 = BatchNorm2d(channels, dtype)

    def forward(self, x: Tensor) -> Tensor:
        h = ops.relu(self.bn1.forward(self.conv1.forward(x)))
        return x + self.bn2.forward(self.conv2.forward(h))


class StageZero(Module):
    """Noise + condition -> 8x8 hidden grid."""

    def __init__(self, z_dim: int, cond_dim: int, ngf: int, rng: RngStream, dtype):
        super().__init__()
        self.ngf = ngf
        self.fc_w = fan_in_param(rng.split("fc"), (z_dim + cond_dim, 2 * ngf * 16), dtype)
        self.fc_b = Tensor(np.zeros(2 * ngf * 16, dtype=dtype), requires_grad=True)
        self.bn0 = BatchNorm2d(2 * ngf, dtype)
        self.conv = Conv(2 * ngf, ngf, 3, 1, 1, rng.split("conv"), dtype)
        self.bn1 = BatchNorm2d(ngf, dtype)

    def forward(self, zc: Tensor) -> Tensor:
        batch = zc.shape[0]
        h = ops.affine(zc, self.fc_w, self.fc_b)
        h = ops.reshape(h, (batch, 2 * self.ngf, 4, 4))
        h = ops.relu(self.bn0.forward(h))
        h = ops.upsample_nearest2x(h)
        return ops.relu(self.bn1.forward(self.conv.forward(h)))


class AttnStage(Module):
    """Previous hidden grid + word context -> doubled-resolution hidden grid."""

    def __init__(self, word_dim: int, ngf: int, rng: RngStream, dtype):
        super().__init__()
        self.ngf = ngf
        self.attn = WordAttention(word_dim, ngf, rng.split("attn"), dtype)
        self.res1 = ResBlock(2 * ngf, rng.split("res1"), dtype)
        self.res2 = ResBlock(2 * ngf, rng.split("res2"), dtype)
        self.conv = Conv(2 * ngf, ngf, 3, 1, 1, rng.split("up"), dtype)
        self.bn = BatchNorm2d(ngf, dtype)

    def forward(self, hidden: Tensor, words: WordFeatures) -> tuple[Tensor, Tensor]:
        batch, c, side, _ = hidden.shape
        flat = ops.reshape(hidden, (batch, c, side * side))
        context, alpha = self.attn.forward(words, flat)
        context_map = ops.reshape(context, (batch, c, side, side))
        joint = ops.concat([hidden, context_map], axis=1)
        h = self.res2.forward(self.res1.forward(joint))
        h = ops.upsample_nearest2x(h)
        return ops.relu(self.bn.forward(self.conv.forward(h))), alpha


class ToRgb(Module):
    def __init__(self, ngf: int, rng: RngStream, dtype):
        super().__init__()
        self.conv = Conv(ngf, 3, 3, 1, 1, rng, dtype)

    def forward(self, h: Tensor) -> Tensor:
        return ops.tanh(self.conv.forward(h))


def content_mask(mask: np.ndarray) -> np.ndarray:
    """Drop each caption's end-of-sentence position (the last real token).

    Generator attention and the attended-word reports rank content words
    only; the text encoder itself still consumes the full sequence.
    """
    mask = np.asarray(mask, dtype=bool)
    out = mask.copy()
    lengths = mask.sum(axis=1)
    rows = lengths > 1
    out[np.nonzero(rows)[0], lengths[rows] - 1] = False
    return out


class GeneratorStack(Module):
    def __init__(self, word_dim: int, cfg: GanTrainConfig, rng: RngStream):
        super().__init__()
        dt = cfg.np_dtype
        self.cfg = cfg
        self.cond = CondAugment(word_dim, cfg.cond_dim, rng.split("ca"), dt)
        self.stage0 = StageZero(cfg.z_dim, cfg.cond_dim, cfg.ngf, rng.split("f0"), dt)
        self.stage1 = AttnStage(word_dim, cfg.ngf, rng.split("f1"), dt)
        self.stage2 = AttnStage(word_dim, cfg.ngf, rng.split("f2"), dt)
        self.rgb = [ToRgb(cfg.ngf, rng.split(f"g{i}"), dt) for i in range(3)]

    def forward(self, z: np.ndarray, sentence: Tensor, words: WordFeatures,
                rng: RngStream | None) -> tuple[ImagePyramid, CAOutput]:
        if z.shape[1] != self.cfg.z_dim:
            raise ShapeError(f"noise dim {z.shape[1]} != configured {self.cfg.z_dim}")
        ca = self.cond.forward(sentence, rng)
        zc = ops.concat([Tensor(np.asarray(z, dtype=ca.c_hat.data.dtype)), ca.c_hat], axis=1)
        attended = WordFeatures(words.features, content_mask(words.mask))
        h0 = self.stage0.forward(zc)
        h1, attn1 = self.stage1.forward(h0, attended)
        h2, attn2 = self.stage2.forward(h1, attended)
        images = [self.rgb[0].forward(h0), self.rgb[1].forward(h1), self.rgb[2].forward(h2)]
        return ImagePyramid(images=images, attn=[attn1, attn2]), ca


def generate(gen: GeneratorStack, z: np.ndarray, sentence: Tensor,
             words: WordFeatures, rng: RngStream | None = None) -> ImagePyramid:
    """Sampling entry point; respects the stack's train/eval mode."""
    pyramid, _ = gen.forward(z, sentence, words, rng)
    for i, img in enumerate(pyramid.images):
        if not np.isfinite(img.data).all():
            raise TrainingError(f"generate: non-finite image at stage {i}")
    return pyramid


class Discriminator(Module):
    """Stride-2 trunk to a 2x2 grid; unconditional and conditional heads."""

    def __init__(self, stage_size: int, sent_dim: int, ndf: int, rng: RngStream, dtype):
        super().__init__()
        if stage_size not in STAGE_SIZES:
            raise ShapeError(f"unsupported stage size {stage_size}")
        self.stage_size = stage_size
        n_down = {8: 2, 16: 3, 32: 4}[stage_size]
        chans = [min(ndf * (2**i), 4 * ndf) for i in range(n_down)]
        self.convs = []
        c_prev = 3
        for i, c in enumerate(chans):
            self.convs.append(Conv(c_prev, c, 3, 2, 1, rng.split(f"d{i}"), dtype))
            c_prev = c
        self.top_channels = c_prev
        self.uncond_w = fan_in_param(rng.split("u"), (c_prev * 4, 1), dtype)
        self.uncond_b = Tensor(np.zeros(1, dtype=dtype), requires_grad=True)
        self.sent_w = fan_in_param(rng.split("s"), (sent_dim, 16), dtype)
        self.sent_b = Tensor(np.zeros(16, dtype=dtype), requires_grad=True)
        self.joint = Conv(c_prev + 16, c_prev, 1, 1, 0, rng.split("j"), dtype)
        self.cond_w = fan_in_param(rng.split("c"), (c_prev * 4, 1), dtype)
        self.cond_b = Tensor(np.zeros(1, dtype=dtype), requires_grad=True)

    def trunk(self, images: Tensor) -> Tensor:
        if images.shape[2] != self.stage_size or images.shape[3] != self.stage_size:
            raise ShapeError(f"discriminator expects {self.stage_size}px input, got {images.shape}")
        h = images
        for conv in self.convs:
            h = ops.leaky_relu(conv.forward(h))
        return h  # (B, C, 2, 2)

    def uncond_logit(self, feat: Tensor) -> Tensor:
        flat = ops.reshape(feat, (feat.shape[0], self.top_channels * 4))
        return ops.affine(flat, self.uncond_w, self.uncond_b)

    def cond_logit(self, feat: Tensor, sentence: Tensor) -> Tensor:
        batch = feat.shape[0]
        s = ops.leaky_relu(ops.affine(sentence, self.sent_w, self.sent_b))
        tiled = ops.reshape(s, (batch, 16, 1, 1)) * Tensor(np.ones((1, 1, 2, 2), dtype=feat.data.dtype))
        joint = ops.leaky_relu(self.joint.forward(ops.concat([feat, tiled], axis=1)))
        flat = ops.reshape(joint, (batch, self.top_channels * 4))
        return ops.affine(flat, self.cond_w, self.cond_b)


@dataclass
class DiscLossReport:
    uncond: float
    cond: float
    total: Tensor


def rotate_batch(sentence: Tensor) -> Tensor:
    """Detached within-batch rotation used for mismatched pairs."""
    return Tensor(np.roll(sentence.data, 1, axis=0))


def discriminator_loss(disc: Discriminator, real: Tensor, fake: Tensor,
                       sentence: Tensor) -> DiscLossReport:
    """BCE on real->1, fake->0, matched->1, fake-cond->0, mismatched->0.

    total = uncond + cond/2, with uncond the mean of the two unconditional
    terms and cond the mean of the three conditional terms.
    """
    feat_real = disc.trunk(real)
    feat_fake = disc.trunk(fake)
    ones = np.ones((real.shape[0], 1))
    zeros = np.zeros((real.shape[0], 1))
    uncond = (ops.bce_with_logits(disc.uncond_logit(feat_real), ones)
              + ops.bce_with_logits(disc.uncond_logit(feat_fake), zeros)) * 0.5
    cond = (ops.bce_with_logits(disc.cond_logit(feat_real, sentence), ones)
            + ops.bce_with_logits(disc.cond_logit(feat_fake, sentence), zeros)
            + ops.bce_with_logits(disc.cond_logit(feat_real, rotate_batch(sentence)), zeros)) * (1.0 / 3.0)
    total = uncond + cond * 0.5
    return DiscLossReport(uncond=uncond.item(), cond=cond.item(), total=total)


@dataclass
class GenLossReport:
    stage_losses: list[Tensor]
    damsm: Tensor
    kl: Tensor
    total: Tensor

    def as_floats(self) -> dict[str, float]:
        out = {f"lg{i}": t.item() for i, t in enumerate(self.stage_losses)}
        out["damsm"] = self.damsm.item()
        out["kl"] = self.kl.item()
        out["total"] = self.total.item()
        return out


def combine_generator_loss(stage_losses: list[Tensor], damsm_total: Tensor,
                           kl: Tensor, beta: float) -> Tensor:
    """total = sum_i stage_i + beta * matching + kl (kl weight fixed at 1)."""
    total = stage_losses[0]
    for term in stage_losses[1:]:
        total = total + term
    return total + damsm_total * beta + kl


def generator_loss(gen_pyramid: ImagePyramid, ca: CAOutput, discs: list[Discriminator],
                   sentence: Tensor, words: WordFeatures, damsm_image_enc: ImageEncoder,
                   cfg: GanTrainConfig, damsm_cfg: DamsmConfig) -> GenLossReport:
    """Adversarial + matching + condition-regularizer objective for one batch."""
    stage_losses = []
    ones = np.ones((sentence.shape[0], 1))
    for disc, img in zip(discs, gen_pyramid.images):
        feat = disc.trunk(img)
        term = (ops.bce_with_logits(disc.uncond_logit(feat), ones)
                + ops.bce_with_logits(disc.cond_logit(feat, sentence), ones))
        stage_losses.append(term)
    regions, global_feat = image_encode(damsm_image_enc, gen_pyramid.images[-1])
    damsm_total = damsm_loss(regions, global_feat, words.features, sentence,
                             words.mask, damsm_cfg).total
    total = combine_generator_loss(stage_losses, damsm_total, ca.kl, cfg.beta)
    return GenLossReport(stage_losses=stage_losses, damsm=damsm_total, kl=ca.kl, total=total)


# -- training ---------------------------------------------------------------------------


def downsample_avg2x(images: np.ndarray) -> np.ndarray:
    b, c, h, w = images.shape
    return images.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def build_real_pyramid(images32: np.ndarray) -> list[np.ndarray]:
    images16 = downsample_avg2x(images32)
    images8 = downsample_avg2x(images16)
    return [images8, images16, images32]


def freeze(module: Module):
    for _, p in module.named_parameters():
        p.requires_grad = False


GAN_HISTORY_COLUMNS = ["epoch", "d0", "d1", "d2", "lg0", "lg1", "lg2", "damsm", "kl", "total"]


def gan_history_csv(history: list[dict[str, float]]) -> str:
    lines = [",".join(GAN_HISTORY_COLUMNS)]
    for row in history:
        lines.append(",".join(
            str(int(row["epoch"])) if col == "epoch" else f"{row[col]:.6f}"
            for col in GAN_HISTORY_COLUMNS))
    return "\n".join(lines) + "\n"


def train_gan(split: DatasetSplit, text_enc: TextEncoder, damsm_image_enc: ImageEncoder,
              cfg: GanTrainConfig, damsm_cfg: DamsmConfig, rng: RngStream,
              sample_dir=None, log=None,
              ) -> tuple[GeneratorStack, list[Discriminator], list[dict[str, float]]]:
    """Alternating D/G updates with Adam; the encoders stay frozen throughout."""
    if not split.train:
        raise TrainingError("empty training split")
    freeze(text_enc)
    freeze(damsm_image_enc)
    text_enc.eval()
    damsm_image_enc.eval()
    word_dim = text_enc.cfg.dim
    gen = GeneratorStack(word_dim, cfg, rng.split("init/gen"))
    discs = [Discriminator(s, word_dim, cfg.ndf, rng.split(f"init/d{s}"), cfg.np_dtype)
             for s in STAGE_SIZES]
    g_params = [t for _, t in gen.named_parameters()]
    d_params = [t for d in discs for _, t in d.named_parameters()]
    opt_g = Adam(g_params, lr=cfg.lr_g, beta1=cfg.adam_beta1)
    opt_d = Adam(d_params, lr=cfg.lr_d, beta1=cfg.adam_beta1)

    from .damsm import caption_batch, load_images

    reals = build_real_pyramid(load_images(split.train, cfg.np_dtype))
    order_rng = rng.split("order")
    caption_rng = rng.split("captions")
    noise_rng = rng.split("noise")
    n = len(split.train)
    n_caps = len(split.train[0].captions)

    # fixed evaluation batch for periodic sample grids
    eval_records = (split.test or split.train)[: min(cfg.batch_size, len(split.test or split.train))]
    eval_ids = np.stack([r.captions[0].ids for r in eval_records])
    eval_lengths = np.array([r.captions[0].length for r in eval_records])
    eval_z = rng.split("eval-noise").normal((len(eval_records), cfg.z_dim))

    def save_samples(epoch: int):
        if sample_dir is None:
            return
        gen.eval()
        words, sentence = text_encode(text_enc, eval_ids, eval_lengths)
        pyramid = generate(gen, eval_z, sentence, words)
        tiles = [float_to_u8(img) for img in pyramid.images[-1].data]
        grid = tile_grid(tiles, cols=4, gutter=2)
        Path(sample_dir).mkdir(parents=True, exist_ok=True)
        write_ppm(Path(sample_dir) / f"epoch_{epoch:04d}.ppm", grid)
        gen.train()

    history: list[dict[str, float]] = []
    gen.train()
    for epoch in range(1, cfg.epochs + 1):
        order = order_rng.permutation(n)
        picks = caption_rng.integers(n_caps, n)
        sums = {k: 0.0 for k in GAN_HISTORY_COLUMNS if k != "epoch"}
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if len(idx) < 2:
                continue
            recs = [split.train[i] for i in idx]
            ids, lengths = caption_batch(recs, picks[idx])
            words_live, sentence_live = text_encode(text_enc, ids, lengths)
            words = WordFeatures(Tensor(words_live.features.data), words_live.mask)
            sentence = Tensor(sentence_live.data)

            z = noise_rng.normal((len(idx), cfg.z_dim))
            pyramid, ca = gen.forward(z, sentence, words, noise_rng)

            opt_d.zero_grad()
            d_terms = []
            for stage, disc in enumerate(discs):
                real = Tensor(reals[stage][idx])
                fake = Tensor(pyramid.images[stage].data)  # detached from the generator
                report = discriminator_loss(disc, real, fake, sentence)
                if not np.isfinite(report.total.data):
                    raise TrainingError(f"discriminator d{stage} loss non-finite at epoch {epoch}")
                d_terms.append(report.total)
                sums[f"d{stage}"] += report.total.item()
            d_sum = d_terms[0] + d_terms[1] + d_terms[2]
            d_sum.backward()
            opt_d.step()

            opt_g.zero_grad()
            g_report = generator_loss(pyramid, ca, discs, sentence, words,
                                      damsm_image_enc, cfg, damsm_cfg)
            for name, value in g_report.as_floats().items():
                if not np.isfinite(value):
                    raise TrainingError(f"generator component {name} non-finite at epoch {epoch}")
                sums[name] += value
            g_report.total.backward()
            opt_g.step()
            batches += 1
        row = {"epoch": float(epoch)}
        row.update({k: v / max(batches, 1) for k, v in sums.items()})
        history.append(row)
        if log is not None:
            log(row)
        if epoch % cfg.sample_every == 0 or epoch == cfg.epochs:
            save_samples(epoch)
    gen.eval()
    for d in discs:
        d.eval()
    return gen, discs, history
