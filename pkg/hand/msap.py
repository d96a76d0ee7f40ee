#!/usr/bin/env python3
"""
Multi-scale adaptive processing.

- `ComplexityNetwork` maps the stem feature map to a score C in (0, 1).
- `FeatureSelector` gates the first-pass sequence with
  sigmoid(W_g [C; mean(F)] + b_g).
- `first_pass` encodes an image with a warmup-scaled positional term.
- `compute_scaling_factors` evaluates alpha(C), beta(C), omega(C).
- `SecondPass` builds adaptive queries and runs memory/sparse attention
  with omega-scaled logits, scaled by alpha(C) at the end.
"""
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

from .decoder import integrated_head_kinds, MultiHeadAttention
from .encoder import _sinusoid
from .lib.errors import ParameterError
from .tensor import ops
from .tensor.nn import Dropout, LayerNorm, Linear, Module
from .tensor.tensor import Tensor, as_tensor

# Pooled grid of the complexity network per scale level; pages use
# [16, 16r] with r the column count.
POOL_DIMS = {
    "line": (4, 16),
    "paragraph": (8, 16),
    "single_page": (16, 16),
    "double_page": (16, 32),
    "triple_page": (16, 48),
}


@dataclass
class FactorParams:
    """base * (1 + gamma * C) / (1 + exp(delta * (C - theta)))"""
    base: float = 1.0
    gamma: float = 0.5
    delta: float = 4.0
    theta: float = 0.5

    def __call__(self, c):
        return self.base * (1.0 + self.gamma * c) / (
            1.0 + np.exp(self.delta * (c - self.theta))
        )


@dataclass
class ScalingParams:
    alpha: FactorParams = field(default_factory=FactorParams)
    beta: FactorParams = field(default_factory=FactorParams)
    omega: FactorParams = field(default_factory=FactorParams)


ScalingFactors = namedtuple("ScalingFactors", "alpha beta omega")


def compute_scaling_factors(c, params=None):
    """Evaluate the three complexity-dependent factors at score c.

    >>> f = compute_scaling_factors(0.5)
    >>> f.alpha == 1.25 / 2
    True
    """
    params = params or ScalingParams()
    c = float(c.item() if isinstance(c, Tensor) else c)
    return ScalingFactors(
        float(params.alpha(c)), float(params.beta(c)), float(params.omega(c))
    )


@dataclass
class WarmupSchedule:
    alpha0: float = 0.1
    gamma: float = 0.5
    warmup_epochs: int = 150

    def __call__(self, epoch):
        """alpha_e = alpha0 * (1 + gamma * min(1, e / E_warmup))

        >>> s = WarmupSchedule()
        >>> s(0), round(s(150), 12), round(s(300), 12)
        (0.1, 0.15, 0.15)
        """
        if epoch < 0:
            raise ParameterError("epoch must be >= 0")
        ramp = 1.0 if self.warmup_epochs <= 0 else \
            min(1.0, epoch / self.warmup_epochs)
        return self.alpha0 * (1.0 + self.gamma * ramp)


class ComplexityNetwork(Module):
    """phi: pool -> LN(ReLU(W1)) -> Dropout(ReLU(W2)) -> sigmoid(W3)."""

    def __init__(self, channels, rng, hidden=128, dropout=0.2,
                 dropout_rng=None, levels=None):
        self.levels = list(levels or POOL_DIMS)
        self.w1 = []
        for level in self.levels:
            ph, pw = POOL_DIMS[level]
            self.w1.append(Linear(channels * ph * pw, hidden, rng))
        self.norm = LayerNorm(hidden)
        self.w2 = Linear(hidden, hidden, rng)
        self.dropout = Dropout(
            dropout, dropout_rng if dropout_rng is not None else rng
        )
        self.w3 = Linear(hidden, 1, rng)

    def forward(self, f, level):
        if level not in self.levels:
            raise ParameterError("unknown scale level {!r}".format(level))
        f = as_tensor(f)
        ph, pw = POOL_DIMS[level]
        pooled = ops.adaptive_avg_pool2d(f, ph, pw).reshape(1, -1)
        h = self.norm(ops.relu(self.w1[self.levels.index(level)](pooled)))
        h = self.dropout(ops.relu(self.w2(h)))
        return ops.sigmoid(self.w3(h)).reshape(())


class FeatureSelector(Module):
    """F * sigmoid(W_g [C; mean(F)] + b_g), gate broadcast over positions."""

    def __init__(self, d_model, rng):
        self.gate_proj = Linear(d_model + 1, d_model, rng)

    def gate(self, seq, c):
        pooled = ops.mean(seq, axis=0)
        joint = ops.concat([ops.reshape(c, (1,)), pooled], axis=0)
        return ops.sigmoid(self.gate_proj(joint.reshape(1, -1)))

    def forward(self, seq, c):
        seq = as_tensor(seq)
        return ops.mul(seq, self.gate(seq, as_tensor(c)))


def first_pass(encoder, x, epoch, schedule=None):
    """Encode x and flatten with the warmup-scaled positional term.

    Returns (EncoderOutput, f1 sequence, alpha_e).
    """
    schedule = schedule or WarmupSchedule()
    alpha_e = schedule(epoch)
    out = encoder(x)
    return out, encoder.flatten_with_pe(out.f5, scale=alpha_e), alpha_e


def relative_position_encoding(length, d_model):
    """Sinusoidal encoding of i / T for i in 0..T-1."""
    return _sinusoid(np.arange(length) / max(1, length), d_model)


def complexity_scaled_multihead(attention, q_src, kv_src, omega,
                                allowed=None):
    """Multi-head attention with per-head logits multiplied by omega."""
    return attention(q_src, kv_src, allowed=allowed, omega=omega)


class SecondPass(Module):
    """q_i = E(f1_i) + alpha * P_doc + beta * R_i, attended over f1."""

    def __init__(self, d_model, num_heads, rng, k_mem=32, sparse_window=64,
                 anchor_every=16, lambda_mem=0.5, lambda_sparse=0.5):
        self.d_model = d_model
        self.content = Linear(d_model, d_model, rng)
        self.doc_context = Linear(d_model, d_model, rng)
        self.attention = MultiHeadAttention(
            d_model, num_heads, rng,
            kinds=integrated_head_kinds(num_heads),
            k_mem=k_mem,
            sparse_window=sparse_window,
            anchor_every=anchor_every,
            lambda_mem=lambda_mem,
            lambda_sparse=lambda_sparse,
        )

    def queries(self, f1, factors):
        t = f1.shape[0]
        doc = self.doc_context(ops.mean(f1, axis=0).reshape(1, -1))
        q = ops.add(self.content(f1), ops.mul(doc, factors.alpha))
        rel = relative_position_encoding(t, self.d_model)
        return ops.add(q, factors.beta * rel)

    def forward(self, f1, factors):
        f1 = as_tensor(f1)
        q = self.queries(f1, factors)
        attended = complexity_scaled_multihead(
            self.attention, q, f1, factors.omega
        )
        return ops.mul(attended, factors.alpha)


class Msap(Module):
    """Complexity network, feature gate and second pass of one model."""

    def __init__(self, stem_channels, d_model, num_heads, rng, cfg=None,
                 dropout_rng=None, k_mem=32, sparse_window=64,
                 anchor_every=16, lambda_mem=0.5, lambda_sparse=0.5):
        from .config import MsapConfig
        self.cfg = cfg or MsapConfig()
        self.complexity = ComplexityNetwork(
            stem_channels, rng, hidden=self.cfg.hidden,
            dropout=self.cfg.dropout, dropout_rng=dropout_rng,
        )
        self.selector = FeatureSelector(d_model, rng)
        self.second = SecondPass(
            d_model, num_heads, rng, k_mem=k_mem,
            sparse_window=sparse_window, anchor_every=anchor_every,
            lambda_mem=lambda_mem, lambda_sparse=lambda_sparse,
        )

    @property
    def schedule(self):
        return WarmupSchedule(
            self.cfg.alpha0, self.cfg.gamma, self.cfg.warmup_epochs
        )

    def scaling_params(self):
        return self.cfg.scaling_params()

    def assess_complexity(self, stem_map, level):
        return self.complexity(stem_map, level)

    def select_features(self, seq, c):
        return self.selector(seq, c)

    def second_pass(self, f1, c):
        factors = compute_scaling_factors(c, self.scaling_params())
        return self.second(f1, factors), factors


if __name__ == "__main__":
    import doctest
    failure_count, test_count = doctest.testmod()
    assert test_count > 0
    assert failure_count == 0, "Doctests failed!"
