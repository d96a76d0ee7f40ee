#!/usr/bin/env python3
"""
Convolutional encoder: image [3, H, W] to feature grid [C_f, H/32, W/d].

Blocks
------
1. stem: three stride-2 convolutions (7x7, 3x3, 3x3) and one 3x3
   convolution, each followed by instance norm and ReLU.
2. gated depthwise-separable convolution, halving the height (and the
   width for double/triple pages).
3. octave convolution into a full-resolution high branch and a
   half-resolution low branch.
4. squeeze-and-excitation fusion of the two branches.
5. gated convolution followed by a final stride-2 stage and MixDropout.

The grid is flattened row by row (j = y * W_f + x) after adding the 2D
sinusoidal positional encoding.
"""
from collections import namedtuple
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .lib.errors import DimensionError, ParameterError
from .tensor import ops
from .tensor.nn import Conv2d, DepthwiseSeparableConv2d, InstanceNorm, \
    Linear, MixDropout, Module
from .tensor.tensor import Tensor, as_tensor

SCALE_LEVELS = (
    "line", "paragraph", "single_page", "double_page", "triple_page"
)

# level -> (C_f, width divisor)
SCALE_PLANS = {
    "line": (64, 8),
    "paragraph": (64, 8),
    "single_page": (64, 8),
    "double_page": (128, 16),
    "triple_page": (256, 32),
}

# width divisor -> width strides of block 2 and block 5
WIDTH_STRIDES = {8: (1, 1), 16: (2, 1), 32: (2, 2)}


@dataclass
class EncoderConfig:
    scale_level: str = "single_page"
    d_model: int = 128
    stem_channels: Tuple[int, int, int] = (16, 32, 32)
    octave_alpha: float = 0.5
    se_reduction: int = 4
    dropout: float = 0.2
    norm_eps: float = 1e-5
    # Overrides the level's C_f; micro models use narrower maps.
    channels: Optional[int] = None

    def __post_init__(self):
        if self.scale_level not in SCALE_PLANS:
            raise ParameterError(
                "unknown scale level {!r}".format(self.scale_level)
            )
        if not 0.0 < self.octave_alpha < 1.0:
            raise ParameterError("octave_alpha must be in (0, 1)")
        low = self.octave_alpha * self.feature_channels
        if abs(low - round(low)) > 1e-9 or round(low) == 0:
            raise ParameterError(
                "octave_alpha {} does not split {} channels".format(
                    self.octave_alpha, self.feature_channels
                )
            )
        if len(self.stem_channels) != 3:
            raise ParameterError("stem_channels needs three widths")

    @property
    def feature_channels(self):
        if self.channels is not None:
            return int(self.channels)
        return SCALE_PLANS[self.scale_level][0]

    @property
    def width_divisor(self):
        return SCALE_PLANS[self.scale_level][1]

    @property
    def width_strides(self):
        return WIDTH_STRIDES[self.width_divisor]


class ConvNormReLU(Module):

    def __init__(self, c_in, c_out, kernel, rng, stride=1, eps=1e-5):
        self.conv = Conv2d(c_in, c_out, kernel, rng, stride=stride)
        self.norm = InstanceNorm(c_out, eps)

    def forward(self, x):
        return ops.relu(self.norm(self.conv(x)))


class Stem(Module):
    """Block 1: Conv2D(FCN(X))."""

    def __init__(self, channels, rng, eps=1e-5):
        c0, c1, c2 = channels
        self.fcn = [
            ConvNormReLU(3, c0, 7, rng, stride=2, eps=eps),
            ConvNormReLU(c0, c1, 3, rng, stride=2, eps=eps),
            ConvNormReLU(c1, c2, 3, rng, stride=2, eps=eps),
        ]
        self.conv = ConvNormReLU(c2, c2, 3, rng, eps=eps)

    def forward(self, x):
        x = as_tensor(x)
        if x.ndim != 3 or x.shape[0] != 3:
            raise DimensionError(
                "encoder expects a [3, H, W] image, got {}".format(x.shape)
            )
        for stage in self.fcn:
            x = stage(x)
        return self.conv(x)


class GatedDSConv(Module):
    """Block 2: sigmoid(W_g * DSConv(f1)) * (W_l * DSConv(f1))."""

    def __init__(self, c_in, c_out, rng, width_stride=1, eps=1e-5):
        stride = (2, width_stride)
        self.c_in = c_in
        self.global_branch = DepthwiseSeparableConv2d(
            c_in, c_out, 3, rng, stride=stride
        )
        self.local_branch = DepthwiseSeparableConv2d(
            c_in, c_out, 3, rng, stride=stride
        )
        self.global_norm = InstanceNorm(c_out, eps)
        self.local_norm = InstanceNorm(c_out, eps)
        self.w_g = Conv2d(c_out, c_out, 1, rng)
        self.w_l = Conv2d(c_out, c_out, 1, rng)

    def branches(self, f1):
        f1 = as_tensor(f1)
        if f1.shape[0] != self.c_in:
            raise DimensionError(
                "gated DSConv expects {} channels, got {}".format(
                    self.c_in, f1.shape[0]
                )
            )
        g = ops.relu(self.global_norm(self.global_branch(f1)))
        loc = ops.relu(self.local_norm(self.local_branch(f1)))
        return g, loc

    def gate(self, f1):
        g, _ = self.branches(f1)
        return ops.sigmoid(self.w_g(g))

    def forward(self, f1):
        g, loc = self.branches(f1)
        return ops.mul(ops.sigmoid(self.w_g(g)), self.w_l(loc))


class OctaveConv(Module):
    """Block 3: split into high/low frequency branches with four paths.

    The first (1 - alpha) * C channels of the input form the high branch;
    the remaining channels, average-pooled 2x, form the low branch.
    """

    def __init__(self, c_in, c_out, alpha, rng, eps=1e-5):
        self.alpha = alpha
        self.c_in_low = int(round(alpha * c_in))
        self.c_in_high = c_in - self.c_in_low
        self.c_out_low = int(round(alpha * c_out))
        self.c_out_high = c_out - self.c_out_low
        if min(self.c_in_low, self.c_in_high,
               self.c_out_low, self.c_out_high) < 1:
            raise ParameterError(
                "octave alpha {} leaves an empty branch".format(alpha)
            )
        self.hh = Conv2d(self.c_in_high, self.c_out_high, 3, rng)
        self.hl = Conv2d(self.c_in_high, self.c_out_low, 3, rng)
        self.ll = Conv2d(self.c_in_low, self.c_out_low, 3, rng)
        self.lh = Conv2d(self.c_in_low, self.c_out_high, 3, rng)
        self.high_norm = InstanceNorm(self.c_out_high, eps)
        self.low_norm = InstanceNorm(self.c_out_low, eps)

    def forward(self, f2):
        f2 = as_tensor(f2)
        x_h = f2[:self.c_in_high]
        x_l = ops.avg_pool2x(f2[self.c_in_high:])
        y_h = ops.add(self.hh(x_h), ops.upsample_nearest2x(self.lh(x_l)))
        y_l = ops.add(self.ll(x_l), self.hl(ops.avg_pool2x(x_h)))
        return (
            ops.relu(self.high_norm(y_h)),
            ops.relu(self.low_norm(y_l)),
        )


class SEFuse(Module):
    """Block 4: upsample low branch, concatenate, squeeze and excite."""

    def __init__(self, channels, reduction, rng):
        hidden = max(1, channels // reduction)
        self.channels = channels
        self.squeeze = Linear(channels, hidden, rng)
        self.excite = Linear(hidden, channels, rng)

    def gates(self, fused):
        pooled = ops.mean(fused, axis=(1, 2)).reshape(1, self.channels)
        hidden = ops.relu(self.squeeze(pooled))
        return ops.sigmoid(self.excite(hidden)).reshape(self.channels, 1, 1)

    def forward(self, high, low):
        up = ops.upsample_nearest2x(low)
        if up.shape[1:] != high.shape[1:]:
            raise DimensionError(
                "octave branches disagree: {} vs upsampled {}".format(
                    high.shape, up.shape
                )
            )
        fused = ops.concat([high, up], axis=0)
        if fused.shape[0] != self.channels:
            raise DimensionError(
                "SE expects {} channels, got {}".format(
                    self.channels, fused.shape[0]
                )
            )
        return ops.mul(fused, self.gates(fused))


class GatedConvFCN(Module):
    """Block 5: gated convolution then the last stride-2 stage."""

    def __init__(self, channels, rng, width_stride=1, dropout=0.2,
                 dropout_rng=None, eps=1e-5):
        self.feature = Conv2d(channels, channels, 3, rng)
        self.mask = Conv2d(channels, channels, 3, rng)
        self.final = ConvNormReLU(
            channels, channels, 3, rng, stride=(2, width_stride), eps=eps
        )
        self.dropout = MixDropout(
            dropout, dropout_rng if dropout_rng is not None else rng
        )

    def gated_conv(self, f4):
        return ops.mul(self.feature(f4), ops.sigmoid(self.mask(f4)))

    def forward(self, f4):
        return self.dropout(self.final(self.gated_conv(f4)))


def _sinusoid(pos, d):
    """[len(pos), d] table with sin on even, cos on odd channels."""
    pos = np.asarray(pos, dtype=np.float64)[:, None]
    i = np.arange(d // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d)
    table = np.zeros((pos.shape[0], d))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


def positional_encoding_1d(length, d_model):
    """Sinusoidal encoding [length, d_model].

    >>> positional_encoding_1d(1, 4).tolist()
    [[0.0, 1.0, 0.0, 1.0]]
    """
    if d_model % 2:
        raise ParameterError("d_model must be even, got {}".format(d_model))
    return _sinusoid(np.arange(length), d_model)


def positional_encoding_2d(h, w, d_model):
    """2D encoding [d_model, h, w]: x in the first half, y in the second.

    Channel 2i of each half is sin(pos / 10000^(2i/d_model)) and
    channel 2i+1 the matching cos.

    >>> pe = positional_encoding_2d(2, 3, 8)
    >>> pe.shape
    (8, 2, 3)
    >>> float(pe[0, 0, 0]), float(pe[1, 0, 0])
    (0.0, 1.0)
    """
    if d_model % 4:
        raise ParameterError(
            "d_model must be divisible by 4, got {}".format(d_model)
        )
    half = d_model // 2
    i = np.arange(half // 2, dtype=np.float64)
    div = np.power(10000.0, 2.0 * i / d_model)
    pe = np.zeros((d_model, h, w))
    xs = np.arange(w, dtype=np.float64)[None, :] / div[:, None]
    ys = np.arange(h, dtype=np.float64)[None, :] / div[:, None]
    pe[0:half:2] = np.sin(xs)[:, None, :]
    pe[1:half:2] = np.cos(xs)[:, None, :]
    pe[half::2] = np.sin(ys)[:, :, None]
    pe[half + 1::2] = np.cos(ys)[:, :, None]
    return pe


EncoderOutput = namedtuple(
    "EncoderOutput", "f1 f2 f3_high f3_low f4 f5"
)


class Encoder(Module):

    def __init__(self, cfg, rng, dropout_rng=None):
        self.cfg = cfg
        c_f = cfg.feature_channels
        sw2, sw5 = cfg.width_strides
        eps = cfg.norm_eps
        self.stem = Stem(cfg.stem_channels, rng, eps)
        self.gated_dsconv = GatedDSConv(
            cfg.stem_channels[-1], c_f, rng, width_stride=sw2, eps=eps
        )
        self.octave = OctaveConv(c_f, c_f, cfg.octave_alpha, rng, eps)
        self.se = SEFuse(c_f, cfg.se_reduction, rng)
        self.fcn = GatedConvFCN(
            c_f, rng, width_stride=sw5, dropout=cfg.dropout,
            dropout_rng=dropout_rng, eps=eps,
        )
        if c_f != cfg.d_model:
            self.projection = Conv2d(c_f, cfg.d_model, 1, rng)
        else:
            self.projection = None

    def output_shape(self, h, w):
        """(C_f, H_f, W_f) for an input of h x w pixels."""
        return (self.cfg.feature_channels, h // 32,
                w // self.cfg.width_divisor)

    def forward(self, x):
        x = as_tensor(x)
        if x.ndim == 3 and (x.shape[1] % 32 or x.shape[2] % 32):
            raise DimensionError(
                "image dims {}x{} are not multiples of 32".format(
                    x.shape[1], x.shape[2]
                )
            )
        f1 = self.stem(x)
        f2 = self.gated_dsconv(f1)
        f3_high, f3_low = self.octave(f2)
        f4 = self.se(f3_high, f3_low)
        f5 = self.fcn(f4)
        return EncoderOutput(f1, f2, f3_high, f3_low, f4, f5)

    def flatten_with_pe(self, f5, pe=None, scale=1.0):
        """f5 [C_f, H_f, W_f] -> sequence [H_f * W_f, d_model].

        scale multiplies the positional term (1 for plain encoding, the
        warmup factor during the first pass).
        """
        f5 = as_tensor(f5)
        if self.projection is not None:
            f5 = self.projection(f5)
        return flatten_with_pe(f5, pe, scale)

    def encode(self, x, scale=1.0):
        return self.flatten_with_pe(self.forward(x).f5, scale=scale)


def flatten_with_pe(f, pe=None, scale=1.0):
    """Add the 2D encoding and flatten [d, H, W] to [H*W, d] row-major.

    >>> seq = flatten_with_pe(Tensor(np.zeros((4, 1, 3))))
    >>> bool(np.all(seq.data == positional_encoding_2d(1, 3, 4)
    ...     .reshape(4, 3).T))
    True
    """
    f = as_tensor(f)
    d, h, w = f.shape
    if pe is None:
        pe = positional_encoding_2d(h, w, d)
    pe = np.asarray(pe.data if isinstance(pe, Tensor) else pe)
    if pe.shape != f.shape:
        raise DimensionError(
            "positional encoding {} does not match features {}".format(
                pe.shape, f.shape
            )
        )
    if scale != 0.0:
        f = ops.add(f, scale * pe)
    return ops.transpose(f.reshape(d, h * w), (1, 0))


if __name__ == "__main__":
    import doctest
    failure_count, test_count = doctest.testmod()
    assert test_count > 0
    assert failure_count == 0, "Doctests failed!"
