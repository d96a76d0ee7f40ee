#!/usr/bin/env python3
"""
Parameterized layers built on the tensor operations.

A `Module` finds its parameters by walking its attributes: `Parameter`
instances, child modules and lists of either. Names are the dotted
attribute paths (``decoder.layers.0.ffn.w1.weight``), which is also the
key format of checkpoints.
"""
import numpy as np

from ..lib.asserts import check_shape
from ..lib.errors import ContractError, ParameterError, TokenError
from . import ops
from .tensor import Tensor, as_tensor


class Parameter(Tensor):
    """Learnable leaf tensor; always requires a gradient."""

    def __init__(self, data, name=None):
        Tensor.__init__(self, data, requires_grad=True, name=name)


class Module:

    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self):
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, (Parameter, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield "{}.{}".format(key, i), item

    def named_parameters(self, prefix=""):
        for key, value in self._children():
            name = prefix + key
            if isinstance(value, Parameter):
                yield name, value
            else:
                yield from value.named_parameters(name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self):
        return int(np.sum([p.size for p in self.parameters()]))

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state, strict=True):
        """Copy arrays into parameters of the same name and shape."""
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise ContractError(
                    "state mismatch: missing {}, unexpected {}".format(
                        missing, unexpected
                    )
                )
        for name, value in state.items():
            if name not in own:
                continue
            value = np.asarray(value, dtype=np.float64)
            check_shape(name, value.shape, own[name].shape)
            own[name].data = value.copy()
            own[name].zero_grad()


def glorot(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """y = x W + b with W stored as [in, out]."""

    def __init__(self, d_in, d_out, rng, bias=True):
        self.weight = Parameter(glorot(rng, (d_in, d_out), d_in, d_out))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x):
        y = ops.matmul(x, self.weight)
        if self.bias is not None:
            y = ops.add(y, self.bias)
        return y


class Conv2d(Module):

    def __init__(self, c_in, c_out, kernel, rng, stride=1, pad=None,
                 bias=True):
        kh, kw = ops._pair(kernel)
        self.stride = stride
        self.pad = (kh // 2, kw // 2) if pad is None else pad
        fan_in = c_in * kh * kw
        self.weight = Parameter(
            rng.standard_normal((c_out, c_in, kh, kw)) * np.sqrt(2.0 / fan_in)
        )
        self.bias = Parameter(np.zeros((c_out, 1, 1))) if bias else None

    @property
    def out_channels(self):
        return self.weight.shape[0]

    def forward(self, x):
        y = ops.conv2d(x, self.weight, self.stride, self.pad)
        if self.bias is not None:
            y = ops.add(y, self.bias)
        return y


class DepthwiseSeparableConv2d(Module):

    def __init__(self, c_in, c_out, kernel, rng, stride=1, pad=None):
        kh, kw = ops._pair(kernel)
        self.stride = stride
        self.pad = (kh // 2, kw // 2) if pad is None else pad
        self.depth = Parameter(
            rng.standard_normal((c_in, 1, kh, kw)) * np.sqrt(2.0 / (kh * kw))
        )
        self.point = Parameter(
            rng.standard_normal((c_out, c_in, 1, 1)) * np.sqrt(2.0 / c_in)
        )
        self.bias = Parameter(np.zeros((c_out, 1, 1)))

    def forward(self, x):
        y = ops.depthwise_separable_conv2d(
            x, self.depth, self.point, self.stride, self.pad
        )
        return ops.add(y, self.bias)


class InstanceNorm(Module):
    """Instance normalization over (H, W) with a per-channel affine."""

    def __init__(self, channels, eps=1e-5, affine=True):
        if eps <= 0:
            raise ParameterError("eps must be > 0")
        self.eps = eps
        self.weight = Parameter(np.ones((channels, 1, 1))) if affine else None
        self.bias = Parameter(np.zeros((channels, 1, 1))) if affine else None

    def forward(self, x):
        return ops.normalize(x, "instance", self.eps, self.weight, self.bias)


class LayerNorm(Module):

    def __init__(self, d, eps=1e-5):
        if eps <= 0:
            raise ParameterError("eps must be > 0")
        self.eps = eps
        self.weight = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))

    def forward(self, x):
        return ops.normalize(x, "layer", self.eps, self.weight, self.bias)


class Embedding(Module):

    def __init__(self, num, d, rng):
        self.weight = Parameter(rng.standard_normal((num, d)) * d ** -0.5)

    def forward(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        n = self.weight.shape[0]
        bad = ids[(ids < 0) | (ids >= n)]
        if bad.size:
            raise TokenError(
                "token id {} outside vocabulary of {}".format(int(bad[0]), n)
            )
        return ops.getitem(self.weight, ids)


def _dropout_mask(rng, shape, p):
    if p >= 1.0:
        return np.zeros(shape)
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


class Dropout(Module):
    """Inverted dropout; the identity in eval mode."""

    def __init__(self, p, rng):
        if not 0.0 <= p <= 1.0:
            raise ParameterError(
                "dropout p must be in [0, 1], got {}".format(p)
            )
        self.p = p
        self._rng = rng

    def forward(self, x):
        x = as_tensor(x)
        if not self.training or self.p == 0.0:
            return x
        return ops.mul(x, _dropout_mask(self._rng, x.shape, self.p))


class MixDropout(Module):
    """Element dropout or whole-channel dropout, chosen per call.

    Both variants use the same p; channel masks are drawn over the leading
    axis of a [C, H, W] map. `mode` pins one variant ("element" or
    "channel"); None draws a fair coin each call.
    """

    def __init__(self, p, rng, mode=None):
        if not 0.0 <= p <= 1.0:
            raise ParameterError(
                "dropout p must be in [0, 1], got {}".format(p)
            )
        if mode not in (None, "element", "channel"):
            raise ParameterError("unknown MixDropout mode {!r}".format(mode))
        self.p = p
        self.mode = mode
        self._rng = rng

    def forward(self, x):
        x = as_tensor(x)
        if not self.training or self.p == 0.0:
            return x
        mode = self.mode
        if mode is None:
            mode = "element" if self._rng.random() < 0.5 else "channel"
        if mode == "element":
            shape = x.shape
        else:
            shape = (x.shape[0],) + (1,) * (x.ndim - 1)
        return ops.mul(x, _dropout_mask(self._rng, shape, self.p))
