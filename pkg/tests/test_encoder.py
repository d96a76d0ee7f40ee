#!/usr/bin/env python3

import numpy as np
import pytest
from scipy.spatial.distance import pdist

from hand.encoder import (
    Encoder, EncoderConfig, GatedConvFCN, GatedDSConv, OctaveConv, SEFuse,
    Stem, flatten_with_pe, positional_encoding_1d, positional_encoding_2d,
)
from hand.lib.errors import DimensionError, ParameterError
from hand.tensor.tensor import Tensor
from hand.verify import run_case


def _zero_biases(module):
    for name, p in module.named_parameters():
        if name.endswith("bias"):
            p.data = np.zeros_like(p.data)


def small_config(level, **kw):
    kw.setdefault("stem_channels", (2, 4, 4))
    kw.setdefault("channels", 8)
    kw.setdefault("d_model", 8)
    return EncoderConfig(scale_level=level, **kw)


@pytest.mark.parametrize("level,channels,divisor", [
    ("line", 64, 8),
    ("single_page", 64, 8),
    ("double_page", 128, 16),
    ("triple_page", 256, 32),
])
def test_scale_plans(level, channels, divisor):
    cfg = EncoderConfig(scale_level=level)
    assert cfg.feature_channels == channels
    assert cfg.width_divisor == divisor


def test_config_validation():
    with pytest.raises(ParameterError):
        EncoderConfig(scale_level="poster")
    with pytest.raises(ParameterError):
        EncoderConfig(octave_alpha=1.0)
    with pytest.raises(ParameterError):
        EncoderConfig(octave_alpha=0.3, channels=8)


def test_single_page_output_grid():
    rng = np.random.default_rng(0)
    enc = Encoder(small_config("single_page"), rng).eval()
    out = enc(Tensor(rng.random((3, 256, 256))))
    assert out.f1.shape == (4, 32, 32)
    assert out.f5.shape == (8, 8, 32)
    assert enc.output_shape(256, 256) == (8, 8, 32)


@pytest.mark.parametrize("level,width", [
    ("double_page", 64), ("triple_page", 64),
])
def test_wide_levels_downsample_width(level, width):
    rng = np.random.default_rng(1)
    enc = Encoder(small_config(level), rng).eval()
    out = enc(Tensor(rng.random((3, 64, width))))
    assert out.f5.shape == enc.output_shape(64, width)


def test_zero_image_gives_zero_features():
    rng = np.random.default_rng(2)
    enc = Encoder(small_config("line"), rng).eval()
    _zero_biases(enc)
    out = enc(Tensor(np.zeros((3, 32, 64))))
    for f in out:
        assert np.all(f.data == 0.0)


def test_rejects_unaligned_image():
    enc = Encoder(small_config("line"), np.random.default_rng(0))
    with pytest.raises(DimensionError):
        enc(Tensor(np.zeros((3, 30, 64))))
    stem = Stem((2, 2, 2), np.random.default_rng(0))
    with pytest.raises(DimensionError):
        stem(Tensor(np.zeros((1, 32, 32))))


def test_gated_dsconv_zero_gate_is_half_local():
    rng = np.random.default_rng(3)
    block = GatedDSConv(2, 4, rng)
    block.w_g.weight.data[:] = 0.0
    block.w_g.bias.data[:] = 0.0
    x = Tensor(rng.standard_normal((2, 8, 8)))
    _, local = block.branches(x)
    expected = 0.5 * block.w_l(local).data
    assert np.allclose(block(x).data, expected)
    assert block(x).shape == (4, 4, 8)


def test_octave_split():
    rng = np.random.default_rng(4)
    block = OctaveConv(64, 64, 0.5, rng)
    high, low = block(Tensor(rng.standard_normal((64, 4, 8))))
    assert high.shape == (32, 4, 8)
    assert low.shape == (32, 2, 4)


def test_octave_zero_input():
    rng = np.random.default_rng(5)
    block = OctaveConv(4, 4, 0.5, rng)
    _zero_biases(block)
    high, low = block(Tensor(np.zeros((4, 4, 4))))
    assert np.all(high.data == 0.0)
    assert np.all(low.data == 0.0)


def test_octave_rejects_empty_branch():
    with pytest.raises(ParameterError):
        OctaveConv(2, 2, 0.1, np.random.default_rng(0))


def test_se_zero_excitation_halves():
    rng = np.random.default_rng(6)
    block = SEFuse(4, 2, rng)
    block.excite.weight.data[:] = 0.0
    block.excite.bias.data[:] = 0.0
    high = rng.standard_normal((2, 4, 4))
    low = rng.standard_normal((2, 2, 2))
    out = block(Tensor(high), Tensor(low)).data
    up = np.repeat(np.repeat(low, 2, axis=1), 2, axis=2)
    assert np.allclose(out, 0.5 * np.concatenate([high, up]))


def test_se_rejects_mismatched_branches():
    block = SEFuse(4, 2, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        block(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((2, 3, 2))))


def test_gated_fcn_zero_mask_is_half_feature():
    rng = np.random.default_rng(7)
    block = GatedConvFCN(2, rng, dropout=0.0)
    block.mask.weight.data[:] = 0.0
    block.mask.bias.data[:] = 0.0
    x = Tensor(rng.standard_normal((2, 4, 4)))
    assert np.allclose(
        block.gated_conv(x).data, 0.5 * block.feature(x).data
    )


def test_gated_fcn_full_dropout_zeroes():
    rng = np.random.default_rng(8)
    block = GatedConvFCN(2, rng, dropout=1.0)
    out = block(Tensor(rng.standard_normal((2, 4, 4))))
    assert np.all(out.data == 0.0)
    block.eval()
    assert np.any(block(Tensor(rng.standard_normal((2, 4, 4)))).data != 0.0)


def test_flatten_order_is_row_major():
    f = np.zeros((4, 1, 3))
    f[0, 0, :] = [10.0, 20.0, 30.0]
    seq = flatten_with_pe(Tensor(f), scale=0.0)
    assert seq.shape == (3, 4)
    assert seq.data[:, 0].tolist() == [10.0, 20.0, 30.0]

    f = np.arange(2 * 2 * 3, dtype=float).reshape(2, 2, 3)
    seq = flatten_with_pe(Tensor(f), scale=0.0).data
    for y in range(2):
        for x in range(3):
            assert seq[y * 3 + x].tolist() == f[:, y, x].tolist()


def test_flatten_zero_map_is_pe():
    seq = flatten_with_pe(Tensor(np.zeros((8, 2, 3))))
    pe = positional_encoding_2d(2, 3, 8)
    assert np.array_equal(seq.data, pe.reshape(8, 6).T)


def test_flatten_pe_scale():
    seq = flatten_with_pe(Tensor(np.zeros((4, 1, 2))), scale=0.25)
    pe = positional_encoding_2d(1, 2, 4)
    assert np.allclose(seq.data, 0.25 * pe.reshape(4, 2).T)


def test_positional_encodings():
    assert positional_encoding_1d(1, 6).tolist() == [[0, 1, 0, 1, 0, 1]]
    pe = positional_encoding_2d(3, 4, 8)
    assert np.allclose(pe[0, 0, :], np.sin(np.arange(4)))
    assert np.allclose(pe[4, :, 0], np.sin(np.arange(3)))
    with pytest.raises(ParameterError):
        positional_encoding_2d(1, 1, 6)
    with pytest.raises(ParameterError):
        positional_encoding_1d(1, 5)


def test_positions_are_distinct():
    pe = positional_encoding_2d(64, 64, 64)
    vectors = pe.reshape(64, -1).T
    assert vectors.shape == (4096, 64)
    assert pdist(vectors).min() > 0.0


def test_encoder_deterministic():
    cfg = small_config("line", dropout=0.5)
    x = np.random.default_rng(9).random((3, 32, 64))
    outs = []
    for _ in range(2):
        enc = Encoder(cfg, np.random.default_rng(10),
                      dropout_rng=np.random.default_rng(11))
        outs.append(enc(Tensor(x)).f5.data)
    assert np.array_equal(outs[0], outs[1])


@pytest.mark.parametrize("name", [
    "encoder.stem", "encoder.gated_dsconv", "encoder.octave",
    "encoder.se_fuse", "encoder.gated_fcn", "encoder.flatten_with_pe",
])
def test_block_gradients(name):
    result = run_case(name)
    assert result.passed, result.errors
