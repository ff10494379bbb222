"""Quantitative evaluation: feature Gaussians, Frechet distance, diversity score.

The Frechet distance between Gaussian fits of penultimate-layer activations
uses the symmetrized product S^(1/2) B S^(1/2) so the matrix square root only
ever sees symmetric PSD input. The diversity score exponentiates the mean KL
between per-image class posteriors and their split marginal. Both formulas
are computed exactly as usual; the feature extractor is a small classifier
trained on the labelled toy shapes (no pretrained network exists for 32x32
synthetic data), and its identity is recorded in every report.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .encoders import fan_in_param
from .errors import ShapeError, StatsError, TrainingError
from .gan import Conv, GeneratorStack, generate
from .numerics import Adam, Module, RngStream, Tensor, sqrtm_psd
from .numerics import tensor as ops
from .textdata import CaptionRecord

logger = logging.getLogger(__name__)


@dataclass
class MetricsConfig:
    feature_dim: int = 32
    n_samples: int = 512
    splits: int = 4
    classifier_channels: int = 24
    classifier_epochs: int = 120
    classifier_lr: float = 3e-3
    classifier_batch: int = 32
    classifier_target: float = 0.95
    dtype: str = "float32"

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass
class GaussianStats:
    mu: np.ndarray      # (F,)
    sigma: np.ndarray   # (F, F), unbiased
    n: int


@dataclass
class FidResult:
    fid: float
    mean_term: float
    trace_term: float


@dataclass
class IsResult:
    mean: float
    std: float
    splits: int


class StandInClassifier(Module):
    """Small conv net over color-x-shape classes; penultimate layer feeds FID.

    Average- and max-pooled trunk activations are concatenated so the feature
    layer sees both area-weighted color statistics and position-invariant
    structure cues. When the label space factors as color x shape (class id =
    color * n_shapes + shape, the toy layout), two heads predict the factors
    and the joint posterior is their outer product; otherwise one flat head.
    """

    def __init__(self, n_classes: int, image_size: int, cfg: MetricsConfig,
                 rng: RngStream, n_shapes: int | None = 3):
        super().__init__()
        self.n_classes = n_classes
        self.image_size = image_size
        self.feature_dim = cfg.feature_dim
        factored = bool(n_shapes) and n_classes % n_shapes == 0 and n_classes > n_shapes
        self.n_shapes = n_shapes if factored else None
        dt = cfg.np_dtype
        c = cfg.classifier_channels
        self.conv1 = Conv(3, c, 3, 2, 1, rng.split("c1"), dt)
        self.conv2 = Conv(c, 2 * c, 3, 2, 1, rng.split("c2"), dt)
        self.conv3 = Conv(2 * c, 2 * c, 3, 2, 1, rng.split("c3"), dt)
        self.feat_w = fan_in_param(rng.split("feat"), (4 * c, cfg.feature_dim), dt)
        self.feat_b = Tensor(np.zeros(cfg.feature_dim, dtype=dt), requires_grad=True)
        if factored:
            n_colors = n_classes // n_shapes
            self.color_w = fan_in_param(rng.split("color"), (cfg.feature_dim, n_colors), dt)
            self.color_b = Tensor(np.zeros(n_colors, dtype=dt), requires_grad=True)
            self.shape_w = fan_in_param(rng.split("shape"), (cfg.feature_dim, n_shapes), dt)
            self.shape_b = Tensor(np.zeros(n_shapes, dtype=dt), requires_grad=True)
        else:
            self.head_w = fan_in_param(rng.split("head"), (cfg.feature_dim, n_classes), dt)
            self.head_b = Tensor(np.zeros(n_classes, dtype=dt), requires_grad=True)

    def features(self, images) -> Tensor:
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images))
        if x.shape[2] != self.image_size or x.shape[3] != self.image_size:
            raise ShapeError(f"classifier expects {self.image_size}px input, got {x.shape}")
        h = ops.leaky_relu(self.conv1.forward(x))
        h = ops.leaky_relu(self.conv2.forward(h))
        h = ops.leaky_relu(self.conv3.forward(h))
        pooled = ops.concat([ops.global_avg_pool(h), ops.global_max_pool(h)], axis=1)
        return ops.relu(ops.affine(pooled, self.feat_w, self.feat_b))

    def loss(self, images, labels: np.ndarray) -> Tensor:
        feats = self.features(images)
        if self.n_shapes is None:
            return cross_entropy(ops.affine(feats, self.head_w, self.head_b), labels)
        color_logits = ops.affine(feats, self.color_w, self.color_b)
        shape_logits = ops.affine(feats, self.shape_w, self.shape_b)
        return (cross_entropy(color_logits, labels // self.n_shapes)
                + cross_entropy(shape_logits, labels % self.n_shapes))

    def predict_probs(self, images: np.ndarray, batch: int = 64) -> np.ndarray:
        rows = []
        for start in range(0, len(images), batch):
            feats = self.features(images[start : start + batch])
            if self.n_shapes is None:
                p = ops.softmax(ops.affine(feats, self.head_w, self.head_b), axis=1).data
            else:
                pc = ops.softmax(ops.affine(feats, self.color_w, self.color_b), axis=1).data
                ps = ops.softmax(ops.affine(feats, self.shape_w, self.shape_b), axis=1).data
                p = (pc[:, :, None] * ps[:, None, :]).reshape(len(pc), self.n_classes)
            rows.append(p)
        return np.concatenate(rows, axis=0)

    def accuracy(self, images: np.ndarray, labels: np.ndarray, batch: int = 64) -> float:
        probs = self.predict_probs(images, batch)
        return float((probs.argmax(axis=1) == labels).mean())


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    log_probs = logits - ops.logsumexp(logits, axis=1, keepdims=True)
    picked = log_probs[(np.arange(len(labels)), labels)]
    return -ops.tmean(picked)


BACKGROUND_FLOAT = np.array([18, 18, 18], dtype=np.float64) / 127.5 - 1.0


def _augment_shift_flip(images: np.ndarray, rng: RngStream, max_shift: int = 3) -> np.ndarray:
    """Random integer translations (background fill) and horizontal flips.

    All toy shapes are mirror-symmetric, so flips preserve labels; shifts
    cover the position jitter between train and held-out renders.
    """
    n = len(images)
    dy = rng.integers(2 * max_shift + 1, n) - max_shift
    dx = rng.integers(2 * max_shift + 1, n) - max_shift
    flips = rng.integers(2, n).astype(bool)
    h, w = images.shape[2], images.shape[3]
    out = np.empty_like(images)
    out[:] = BACKGROUND_FLOAT[None, :, None, None].astype(images.dtype)
    for i, (y, x) in enumerate(zip(dy, dx)):
        ys0, ys1 = max(0, y), min(h, h + y)
        xs0, xs1 = max(0, x), min(w, w + x)
        out[i, :, ys0:ys1, xs0:xs1] = images[i, :, ys0 - y : ys1 - y, xs0 - x : xs1 - x]
    out[flips] = out[flips][:, :, :, ::-1]
    return out


def train_standin_classifier(train_images: np.ndarray, train_labels: np.ndarray,
                             test_images: np.ndarray, test_labels: np.ndarray,
                             n_classes: int, image_size: int, cfg: MetricsConfig,
                             rng: RngStream, n_shapes: int | None = 3,
                             ) -> tuple[StandInClassifier, float]:
    """Train to the held-out accuracy target; deterministic in rng."""
    clf = StandInClassifier(n_classes, image_size, cfg, rng.split("init"), n_shapes)
    opt = Adam(clf.parameters(), lr=cfg.classifier_lr)
    order_rng = rng.split("order")
    aug_rng = rng.split("augment")
    n = len(train_images)
    for epoch in range(1, cfg.classifier_epochs + 1):
        order = order_rng.permutation(n)
        for start in range(0, n, cfg.classifier_batch):
            idx = order[start : start + cfg.classifier_batch]
            batch = _augment_shift_flip(train_images[idx], aug_rng)
            loss = clf.loss(batch, train_labels[idx])
            if not np.isfinite(loss.data):
                raise TrainingError(f"classifier loss non-finite at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
    clf.eval()
    acc = clf.accuracy(test_images, test_labels)
    if acc < cfg.classifier_target:
        raise TrainingError(
            f"classifier held-out accuracy {acc:.3f} below target {cfg.classifier_target} "
            f"after {cfg.classifier_epochs} epochs")
    return clf, acc


def activation_stats(classifier: StandInClassifier, images: np.ndarray,
                     batch: int = 64) -> GaussianStats:
    """Mean and unbiased covariance of penultimate features."""
    n = len(images)
    if n < 2:
        raise StatsError(f"activation_stats needs >= 2 images, got {n}")
    feats = []
    for start in range(0, n, batch):
        feats.append(classifier.features(images[start : start + batch]).data)
    x = np.concatenate(feats, axis=0).astype(np.float64)
    mu = x.mean(axis=0)
    centered = x - mu
    sigma = centered.T @ centered / (n - 1)
    return GaussianStats(mu=mu, sigma=0.5 * (sigma + sigma.T), n=n)


def stats_from_features(features: np.ndarray) -> GaussianStats:
    """Gaussian fit for injected feature fixtures (bypasses the classifier)."""
    x = np.asarray(features, dtype=np.float64)
    if len(x) < 2:
        raise StatsError(f"need >= 2 feature rows, got {len(x)}")
    mu = x.mean(axis=0)
    centered = x - mu
    sigma = centered.T @ centered / (len(x) - 1)
    return GaussianStats(mu=mu, sigma=0.5 * (sigma + sigma.T), n=len(x))


def fid(a: GaussianStats, b: GaussianStats) -> FidResult:
    """|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)), clamped at zero."""
    if a.mu.shape != b.mu.shape:
        raise ShapeError(f"fid dims differ: {a.mu.shape} vs {b.mu.shape}")
    diff = a.mu - b.mu
    mean_term = float(diff @ diff)
    root_a = sqrtm_psd(a.sigma)
    inner = sqrtm_psd(root_a @ b.sigma @ root_a)
    trace_term = float(np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * np.trace(inner))
    value = mean_term + trace_term
    return FidResult(fid=max(value, 0.0), mean_term=mean_term, trace_term=trace_term)


def inception_score(probs: np.ndarray, splits: int = 4) -> IsResult:
    """exp(mean KL(posterior || split marginal)), mean and std over splits."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise StatsError(f"probs must be 2-D, got shape {p.shape}")
    n = len(p)
    if splits < 1 or n < splits:
        raise StatsError(f"need n >= splits >= 1, got n={n} splits={splits}")
    if p.min(initial=0.0) < -1e-12 or np.abs(p.sum(axis=1) - 1.0).max(initial=0.0) > 1e-6:
        raise StatsError("rows must be probability vectors summing to 1")
    part_size = n // splits
    scores = []
    for k in range(splits):
        part = p[k * part_size : (k + 1) * part_size]
        marginal = part.mean(axis=0)
        ratio = np.zeros_like(part)
        positive = part > 0
        ratio[positive] = np.log(part[positive]) - np.log(marginal[np.nonzero(positive)[1]])
        kl = (part * ratio).sum(axis=1)
        scores.append(float(np.exp(kl.mean())))
    return IsResult(mean=float(np.mean(scores)), std=float(np.std(scores)), splits=splits)


def generate_eval_images(gen: GeneratorStack, text_enc, records: list[CaptionRecord],
                         n_samples: int, z_dim: int, rng: RngStream,
                         batch: int = 32) -> np.ndarray:
    """Stage-2 images for captions drawn from the records; eval mode, seeded."""
    from .encoders import text_encode

    gen.eval()
    rec_idx = rng.integers(len(records), n_samples)
    cap_idx = rng.integers(len(records[0].captions), n_samples)
    z_all = rng.normal((n_samples, z_dim))
    out = []
    for start in range(0, n_samples, batch):
        sel = slice(start, min(start + batch, n_samples))
        ids = np.stack([records[r].captions[c].ids for r, c in zip(rec_idx[sel], cap_idx[sel])])
        lengths = np.array([records[r].captions[c].length for r, c in zip(rec_idx[sel], cap_idx[sel])])
        words, sentence = text_encode(text_enc, ids, lengths)
        pyramid = generate(gen, z_all[sel], sentence, words)
        out.append(pyramid.images[-1].data)
    return np.concatenate(out, axis=0)


def evaluate_model(gen: GeneratorStack, text_enc, classifier: StandInClassifier,
                   test_records: list[CaptionRecord], real_images: np.ndarray,
                   cfg: MetricsConfig, z_dim: int, rng: RngStream,
                   ) -> tuple[FidResult, IsResult, dict]:
    """FID of generated vs real test activations plus the diversity score."""
    if cfg.n_samples < 2 * cfg.splits:
        raise StatsError(f"n_samples must be >= 2*splits, got {cfg.n_samples}")
    if cfg.n_samples < 10 * cfg.feature_dim:
        logger.warning("n_samples=%d below 10*feature_dim=%d; covariance estimate may be poor",
                       cfg.n_samples, 10 * cfg.feature_dim)
    fake_images = generate_eval_images(gen, text_enc, test_records, cfg.n_samples,
                                       z_dim, rng.split("generate"))
    fake_images = fake_images.astype(real_images.dtype)
    stats_fake = activation_stats(classifier, fake_images)
    stats_real = activation_stats(classifier, real_images)
    fid_result = fid(stats_fake, stats_real)
    probs = classifier.predict_probs(fake_images)
    is_result = inception_score(probs, cfg.splits)
    extras = {"n_samples": cfg.n_samples, "n_real": len(real_images)}
    return fid_result, is_result, extras
