#!/usr/bin/env python3
"""
Differentiable operations over `Tensor`.

Each operation is a forward function on `numpy` arrays plus a
vector-Jacobian product, registered through `tensor.apply`. Elementwise
operations broadcast like `numpy`; gradients are summed back down to the
shape of each input.

>>> from hand.tensor.tensor import Tensor
>>> a = Tensor([[1., 2.], [3., 4.]])
>>> b = Tensor([[5., 6.], [7., 8.]])
>>> matmul(a, b).data.tolist()
[[19.0, 22.0], [43.0, 50.0]]
>>> softmax(Tensor([0.0, np.log(2.0)])).data.round(12).tolist()
[0.333333333333, 0.666666666667]
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ..lib.errors import DimensionError, NumericError, ParameterError
from .tensor import Tensor, apply, as_tensor

# Additive surrogate for -inf in attention masks; exp() of it underflows to 0.
MASK_VALUE = -1e30


def _unbroadcast(g, shape):
    """Sum g down to shape, undoing numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _pair(v):
    if isinstance(v, (tuple, list)):
        assert len(v) == 2, v
        return int(v[0]), int(v[1])
    return int(v), int(v)


# Elementwise ---------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return apply(
        "add", np.add,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        a, b,
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return apply(
        "sub", np.subtract,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        a, b,
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return apply(
        "mul", np.multiply,
        lambda g: (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        ),
        a, b,
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return apply(
        "div", np.divide,
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
        a, b,
    )


def neg(a):
    a = as_tensor(a)
    return apply("neg", np.negative, lambda g: (-g,), a)


def exp(a):
    a = as_tensor(a)
    out = {}

    def forward(x):
        out["y"] = np.exp(x)
        return out["y"]

    return apply("exp", forward, lambda g: (g * out["y"],), a)


def log(a):
    a = as_tensor(a)
    return apply("log", np.log, lambda g: (g / a.data,), a)


def sqrt(a):
    a = as_tensor(a)
    return apply(
        "sqrt", np.sqrt, lambda g: (g * 0.5 / np.sqrt(a.data),), a
    )


def power(a, exponent):
    a = as_tensor(a)
    p = float(exponent)
    return apply(
        "pow",
        lambda x: np.power(x, p),
        lambda g: (g * p * np.power(a.data, p - 1.0),),
        a,
    )


def absolute(a):
    a = as_tensor(a)
    return apply("abs", np.abs, lambda g: (g * np.sign(a.data),), a)


def relu(a):
    a = as_tensor(a)
    return apply(
        "relu",
        lambda x: np.maximum(x, 0.0),
        lambda g: (g * (a.data > 0),),
        a,
    )


def sigmoid(a):
    a = as_tensor(a)

    def vjp(g):
        s = expit(a.data)
        return (g * s * (1.0 - s),)

    return apply("sigmoid", expit, vjp, a)


def tanh(a):
    a = as_tensor(a)

    def vjp(g):
        t = np.tanh(a.data)
        return (g * (1.0 - t * t),)

    return apply("tanh", np.tanh, vjp, a)


# Reductions and shape ------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum(a, axis=None, keepdims=False):  # noqa: A001
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return apply(
        "sum", lambda x: np.sum(x, axis=axes, keepdims=keepdims), vjp, a
    )


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    n = 1
    for ax in axes:
        n *= a.shape[ax]
    return div(sum(a, axis=axes, keepdims=keepdims), float(n))


def reshape(a, shape):
    a = as_tensor(a)
    return apply(
        "reshape",
        lambda x: np.reshape(x, shape),
        lambda g: (np.reshape(g, a.shape),),
        a,
    )


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return apply(
        "transpose",
        lambda x: np.transpose(x, axes),
        lambda g: (np.transpose(g, inverse),),
        a,
    )


def getitem(a, index):
    a = as_tensor(a)

    def vjp(g):
        z = np.zeros_like(a.data)
        np.add.at(z, index, g)
        return (z,)

    return apply("getitem", lambda x: x[index], vjp, a)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of an empty list")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    try:
        return apply(
            "concat",
            lambda *xs: np.concatenate(xs, axis=axis),
            vjp,
            *tensors
        )
    except ValueError as e:
        raise DimensionError("concat: {}".format(e))


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("stack of an empty list")

    def vjp(g):
        return tuple(
            np.take(g, i, axis=axis) for i in range(len(tensors))
        )

    try:
        return apply(
            "stack", lambda *xs: np.stack(xs, axis=axis), vjp, *tensors
        )
    except ValueError as e:
        raise DimensionError("stack: {}".format(e))


# Linear algebra ------------------------------------------------------------

def matmul(a, b):
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            "matmul: shapes {} and {} do not agree".format(a.shape, b.shape)
        )

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return apply("matmul", np.matmul, vjp, a, b)


# Convolution ---------------------------------------------------------------

def _conv_geometry(x_shape, kh, kw, stride, pad):
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    _, h, w = x_shape
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise DimensionError(
            "kernel {}x{} larger than padded input {}x{}".format(
                kh, kw, h + 2 * ph, w + 2 * pw
            )
        )
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    return sh, sw, ph, pw, ho, wo


def _windows(x, kh, kw, sh, sw, ph, pw):
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    return xp.shape, win[:, ::sh, ::sw]


def _scatter_windows(padded_shape, kh, kw, sh, sw, ph, pw, ho, wo, piece):
    """Adjoint of `_windows`: piece(i, j) is the [C, ho, wo] contribution
    of kernel tap (i, j)."""
    dxp = np.zeros(padded_shape)
    for i in range(kh):
        rows = slice(i, i + sh * (ho - 1) + 1, sh)
        for j in range(kw):
            cols = slice(j, j + sw * (wo - 1) + 1, sw)
            dxp[:, rows, cols] += piece(i, j)
    h, w = padded_shape[1] - 2 * ph, padded_shape[2] - 2 * pw
    return dxp[:, ph:ph + h, pw:pw + w]


def conv2d(x, k, stride=1, pad=0):
    """Cross-correlation of x [C_in, H, W] with k [C_out, C_in, kh, kw].

    >>> from hand.tensor.tensor import Tensor
    >>> conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 3, 3)))).data
    array([[[9.]]])
    >>> conv2d(Tensor(np.ones((1, 8, 8))), Tensor(np.ones((1, 1, 3, 3))),
    ...        stride=2, pad=1).shape
    (1, 4, 4)
    """
    x, k = as_tensor(x), as_tensor(k)
    if x.ndim != 3 or k.ndim != 4:
        raise DimensionError(
            "conv2d expects [C,H,W] and [O,C,kh,kw], got {} and {}".format(
                x.shape, k.shape
            )
        )
    if k.shape[1] != x.shape[0]:
        raise DimensionError(
            "conv2d: kernel expects {} input channels, got {}".format(
                k.shape[1], x.shape[0]
            )
        )
    kh, kw = k.shape[2:]
    sh, sw, ph, pw, ho, wo = _conv_geometry(x.shape, kh, kw, stride, pad)
    cache = {}

    def forward(xd, kd):
        padded_shape, win = _windows(xd, kh, kw, sh, sw, ph, pw)
        cache["win"], cache["padded"] = win, padded_shape
        return np.tensordot(kd, win, axes=([1, 2, 3], [0, 3, 4]))

    def vjp(g):
        win = cache["win"]
        dk = np.tensordot(g, win, axes=([1, 2], [1, 2]))
        dx = _scatter_windows(
            cache["padded"], kh, kw, sh, sw, ph, pw, ho, wo,
            lambda i, j: np.tensordot(k.data[:, :, i, j], g, axes=(0, 0)),
        )
        return dx, dk

    return apply("conv2d", forward, vjp, x, k)


def depthwise_conv2d(x, k, stride=1, pad=0):
    """Per-channel cross-correlation of x [C, H, W] with k [C, 1, kh, kw]."""
    x, k = as_tensor(x), as_tensor(k)
    if k.ndim == 3:
        k = reshape(k, (k.shape[0], 1) + k.shape[1:])
    if x.ndim != 3 or k.shape[0] != x.shape[0] or k.shape[1] != 1:
        raise DimensionError(
            "depthwise kernel {} does not match input {}".format(
                k.shape, x.shape
            )
        )
    kh, kw = k.shape[2:]
    sh, sw, ph, pw, ho, wo = _conv_geometry(x.shape, kh, kw, stride, pad)
    cache = {}

    def forward(xd, kd):
        padded_shape, win = _windows(xd, kh, kw, sh, sw, ph, pw)
        cache["win"], cache["padded"] = win, padded_shape
        return np.einsum("chwij,cij->chw", win, kd[:, 0])

    def vjp(g):
        dk = np.einsum("chw,chwij->cij", g, cache["win"])[:, None]
        dx = _scatter_windows(
            cache["padded"], kh, kw, sh, sw, ph, pw, ho, wo,
            lambda i, j: k.data[:, 0, i, j][:, None, None] * g,
        )
        return dx, dk

    return apply("depthwise_conv2d", forward, vjp, x, k)


def depthwise_separable_conv2d(x, depth_k, point_k, stride=1, pad=0):
    """Depthwise spatial convolution followed by a 1x1 channel mix.

    point_k is [C_out, C] or [C_out, C, 1, 1].
    """
    x, point_k = as_tensor(x), as_tensor(point_k)
    if point_k.ndim == 2:
        point_k = reshape(point_k, point_k.shape + (1, 1))
    if point_k.shape[2:] != (1, 1):
        raise DimensionError(
            "point kernel must be 1x1, got {}".format(point_k.shape)
        )
    if point_k.shape[1] != x.shape[0]:
        raise DimensionError(
            "point kernel expects {} channels, got {}".format(
                point_k.shape[1], x.shape[0]
            )
        )
    return conv2d(depthwise_conv2d(x, depth_k, stride, pad), point_k)


# Pooling and resampling ----------------------------------------------------

def pool_matrix(size_in, size_out):
    """Row i averages inputs floor(i*n/m) .. floor((i+1)*n/m) - 1.

    >>> pool_matrix(4, 2).tolist()
    [[0.5, 0.5, 0.0, 0.0], [0.0, 0.0, 0.5, 0.5]]
    """
    if size_out < 1:
        raise DimensionError("pool output size must be >= 1")
    if size_out > size_in:
        raise DimensionError(
            "pool output {} exceeds input {}".format(size_out, size_in)
        )
    p = np.zeros((size_out, size_in))
    for i in range(size_out):
        lo = (i * size_in) // size_out
        hi = ((i + 1) * size_in) // size_out
        p[i, lo:hi] = 1.0 / (hi - lo)
    return p


def adaptive_avg_pool2d(x, out_h, out_w):
    x = as_tensor(x)
    if x.ndim != 3:
        raise DimensionError("expected [C,H,W], got {}".format(x.shape))
    ph = pool_matrix(x.shape[1], out_h)
    pw = pool_matrix(x.shape[2], out_w)
    return apply(
        "adaptive_avg_pool2d",
        lambda xd: np.einsum("ih,chw,jw->cij", ph, xd, pw),
        lambda g: (np.einsum("ih,cij,jw->chw", ph, g, pw),),
        x,
    )


def avg_pool2x(x):
    """2x2 average pooling; spatial dims must be even."""
    x = as_tensor(x)
    if x.shape[1] % 2 or x.shape[2] % 2:
        raise DimensionError(
            "2x pooling needs even spatial dims, got {}".format(x.shape)
        )
    return adaptive_avg_pool2d(x, x.shape[1] // 2, x.shape[2] // 2)


def upsample_nearest2x(x):
    x = as_tensor(x)
    c, h, w = x.shape

    def vjp(g):
        return (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),)

    return apply(
        "upsample_nearest2x",
        lambda xd: np.repeat(np.repeat(xd, 2, axis=1), 2, axis=2),
        vjp,
        x,
    )


# Normalization and softmax -------------------------------------------------

def softmax(x, axis=-1):
    x = as_tensor(x)
    if np.isnan(x.data).any():
        raise NumericError("softmax input contains NaN")
    cache = {}

    def forward(xd):
        e = np.exp(xd - xd.max(axis=axis, keepdims=True))
        cache["s"] = e / e.sum(axis=axis, keepdims=True)
        return cache["s"]

    def vjp(g):
        s = cache["s"]
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return apply("softmax", forward, vjp, x)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    if np.isnan(x.data).any():
        raise NumericError("log_softmax input contains NaN")

    def forward(xd):
        m = xd.max(axis=axis, keepdims=True)
        z = xd - m
        return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def vjp(g):
        s = np.exp(forward(x.data))
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return apply("log_softmax", forward, vjp, x)


def normalize(x, mode="layer", eps=1e-5, weight=None, bias=None):
    """Zero-mean unit-variance normalization.

    instance: over the spatial axes (H, W) of each channel of [C, H, W].
    layer: over the last axis (one token per row).
    weight/bias, when given, broadcast against the normalized result.
    """
    if eps <= 0:
        raise ParameterError(
            "normalization eps must be > 0, got {}".format(eps)
        )
    x = as_tensor(x)
    if mode == "instance":
        if x.ndim != 3:
            raise DimensionError(
                "instance norm expects [C,H,W], got {}".format(x.shape)
            )
        axes = (1, 2)
    elif mode == "layer":
        axes = (-1,)
    else:
        raise ParameterError("unknown normalization mode {!r}".format(mode))
    centered = sub(x, mean(x, axis=axes, keepdims=True))
    var = mean(mul(centered, centered), axis=axes, keepdims=True)
    out = div(centered, sqrt(add(var, eps)))
    if weight is not None:
        out = mul(out, weight)
    if bias is not None:
        out = add(out, bias)
    return out


def masked_fill_constant(shape, allowed):
    """Additive mask: 0 where allowed, MASK_VALUE elsewhere."""
    allowed = np.asarray(allowed, dtype=bool)
    assert allowed.shape == tuple(shape), (allowed.shape, shape)
    return Tensor(np.where(allowed, 0.0, MASK_VALUE))


if __name__ == "__main__":
    import doctest
    failure_count, test_count = doctest.testmod()
    assert test_count > 0
    assert failure_count == 0, "Doctests failed!"
