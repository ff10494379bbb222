"""Text and image encoder contracts: shapes, masking, padding invariance, gradients."""

import numpy as np
import pytest

from banglat2i.encoders import (EncoderConfig, ImageEncoder, TextEncoder,
                                image_encode, text_encode)
from banglat2i.errors import ShapeError, VocabError
from banglat2i.numerics import RngStream, grad_check
from banglat2i.numerics import tensor as ops

CFG64 = EncoderConfig(dim=8, embed_dim=4, hidden=4, image_size=8,
                      conv_channels=(3, 4, 5, 5), dtype="float64")


def make_text_encoder(vocab_size=12, cfg=CFG64, seed=1):
    enc = TextEncoder(vocab_size, cfg, RngStream(seed, "init"))
    enc.eval()
    return enc


def test_common_space_dimension_enforced_at_construction():
    with pytest.raises(ShapeError):
        EncoderConfig(dim=10, hidden=4)


def test_text_encoder_shapes():
    cfg = EncoderConfig(dtype="float64")
    enc = TextEncoder(40, cfg, RngStream(0, "init"))
    enc.eval()
    ids = np.tile(np.array([3, 4, 5, 2, 0, 0]), (2, 1))
    words, sentence = text_encode(enc, ids, np.array([4, 4]))
    assert words.features.shape == (2, 64, 6)
    assert sentence.shape == (2, 64)


def test_text_encoder_zeroes_padded_positions():
    enc = make_text_encoder()
    ids = np.array([[3, 4, 5, 2, 0, 0], [6, 2, 0, 0, 0, 0]])
    words, _ = text_encode(enc, ids, np.array([4, 2]))
    assert np.abs(words.features.data[0, :, 4:]).max() == 0.0
    assert np.abs(words.features.data[1, :, 2:]).max() == 0.0
    assert words.mask.tolist() == [[True] * 4 + [False] * 2, [True] * 2 + [False] * 4]


def test_text_encoder_padding_invariance():
    enc = make_text_encoder()
    ids = np.array([[3, 4, 5, 2], [6, 7, 2, 0]])
    lengths = np.array([4, 3])
    words_a, sent_a = text_encode(enc, ids, lengths)
    padded = np.concatenate([ids, np.zeros((2, 3), dtype=np.int64)], axis=1)
    words_b, sent_b = text_encode(enc, padded, lengths)
    assert np.abs(words_b.features.data[:, :, :4] - words_a.features.data).max() < 1e-10
    assert np.abs(sent_b.data - sent_a.data).max() < 1e-10


def test_text_encoder_train_mode_deterministic_given_seed():
    enc = make_text_encoder()
    enc.train()
    ids = np.array([[3, 4, 2, 0]])
    a = text_encode(enc, ids, np.array([3]), RngStream(9, "drop"))[1].data
    b = text_encode(enc, ids, np.array([3]), RngStream(9, "drop"))[1].data
    c = text_encode(enc, ids, np.array([3]), RngStream(10, "drop"))[1].data
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_text_encoder_rejects_out_of_range_ids():
    enc = make_text_encoder(vocab_size=5)
    with pytest.raises(VocabError):
        text_encode(enc, np.array([[7, 2]]), np.array([2]))


def test_text_encoder_grad_check():
    enc = make_text_encoder()
    enc.train()
    ids = np.array([[3, 4, 5, 2, 0], [6, 2, 0, 0, 0]])
    lengths = np.array([4, 2])

    def f():
        words, sentence = enc.forward(ids, lengths, RngStream(3, "drop"))
        return ops.tsum(ops.square(words.features)) + ops.tsum(ops.square(sentence))

    report = grad_check(f, enc.named_parameters())
    assert report.passed and report.max_rel_err < 1e-4, report


def test_image_encoder_shapes_and_hygiene():
    cfg = EncoderConfig(dtype="float64")
    enc = ImageEncoder(cfg, RngStream(2, "init"))
    imgs = RngStream(5, "imgs").uniform((4, 3, 32, 32), -1, 1)
    regions, global_feat = image_encode(enc, imgs)
    assert regions.shape == (4, 64, 64)
    assert global_feat.shape == (4, 64)
    zero_regions, zero_global = image_encode(enc, np.zeros((2, 3, 32, 32)))
    assert np.isfinite(zero_regions.data).all()
    assert np.isfinite(zero_global.data).all()


def test_image_encoder_rejects_wrong_resolution():
    enc = ImageEncoder(CFG64, RngStream(2, "init"))
    with pytest.raises(ShapeError):
        image_encode(enc, np.zeros((1, 3, 16, 16)))


def test_image_encoder_grad_check():
    enc = ImageEncoder(CFG64, RngStream(2, "init"))
    imgs = RngStream(5, "imgs").uniform((2, 3, 8, 8), -1, 1)

    def f():
        regions, global_feat = enc.forward(imgs)
        return ops.tsum(ops.square(regions)) + ops.tsum(ops.square(global_feat))

    report = grad_check(f, enc.named_parameters())
    assert report.passed and report.max_rel_err < 1e-4, report


def test_encoders_deterministic_under_same_init_seed():
    a = make_text_encoder(seed=4)
    b = make_text_encoder(seed=4)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        assert np.array_equal(pa.data, pb.data)
