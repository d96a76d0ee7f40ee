#!/usr/bin/env python3
"""
Composite training loss.

    total = lambda_layout(C) * L_layout + lambda_text(C) * L_text
            + lambda_c * L_c

L_layout   cross-entropy over positions whose target is a layout tag.
L_text     cross-entropy over the remaining positions (text and <eot>),
           divided by their count.
L_c        (C - C_target)^2 + lambda_reg * |dC/dx|_1, the input-gradient
           norm estimated by central differences over sampled pixels.

lambda_k(C) = lambda_k0 * (1 + gamma_k C) / (1 + exp(delta_k (C - theta_k)))
is evaluated on the detached score.
"""
import logging
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

from ..config import LossModulation
from ..lib.errors import ContractError
from ..tensor import ops
from ..tensor.tensor import Tensor, as_tensor

log = logging.getLogger(__name__)

LossComponents = namedtuple(
    "LossComponents",
    "total layout text complexity lambda_layout lambda_text",
)


@dataclass
class LossWeights:
    lambda_layout: float = 1.0
    lambda_text: float = 1.0
    lambda_c: float = 0.1
    layout: LossModulation = field(default_factory=LossModulation)
    text: LossModulation = field(default_factory=LossModulation)
    lambda_reg: float = 0.01

    @classmethod
    def from_config(cls, tcfg):
        return cls(
            lambda_layout=tcfg.lambda_layout,
            lambda_text=tcfg.lambda_text,
            lambda_c=tcfg.lambda_c,
            layout=tcfg.layout_modulation,
            text=tcfg.text_modulation,
            lambda_reg=tcfg.lambda_reg,
        )


def modulated_weight(base, mod, c):
    """base * (1 + gamma c) / (1 + exp(delta (c - theta)))

    >>> modulated_weight(2.0, LossModulation(0.0, 0.0, 0.5), 0.3)
    1.0
    """
    c = float(c.item() if isinstance(c, Tensor) else c)
    return float(base * (1.0 + mod.gamma * c) / (
        1.0 + np.exp(mod.delta * (c - mod.theta))
    ))


def complexity_target(level_number, targets=None):
    """C_target for 1-based curriculum level l: (l - 1) / 4 by default.

    >>> [complexity_target(n) for n in range(1, 6)]
    [0.0, 0.25, 0.5, 0.75, 1.0]
    """
    if targets:
        return float(targets[level_number - 1])
    return (level_number - 1) / 4.0


def token_cross_entropy(logits, targets, positions):
    """Summed -log p(target) over positions; returns (sum, count)."""
    positions = [int(p) for p in positions]
    if not positions:
        return Tensor(0.0), 0
    logp = ops.log_softmax(logits, axis=-1)
    picked = logp[np.asarray(positions), np.asarray(targets)[positions]]
    return ops.neg(ops.sum(picked)), len(positions)


def split_positions(target_ids, layout_ids):
    """Indices of layout-tag targets and of everything else."""
    layout_ids = set(layout_ids)
    layout, text = [], []
    for i, t in enumerate(target_ids):
        (layout if t in layout_ids else text).append(i)
    return layout, text


def gradient_penalty(complexity_fn, image, n_pixels, step, rng=None,
                     pixels=None):
    """Estimate |dC/dx|_1 from central differences at sampled pixels.

    The sampled sum is rescaled to the full pixel count. The result is a
    Tensor differentiable with respect to the network parameters.
    """
    image = np.asarray(image.data if isinstance(image, Tensor) else image)
    flat = image.reshape(-1)
    if pixels is None:
        if n_pixels <= 0:
            return Tensor(0.0)
        n = min(n_pixels, flat.size)
        pixels = rng.choice(flat.size, size=n, replace=False)
    pixels = np.asarray(pixels, dtype=np.int64)
    total = None
    for p in pixels:
        plus = flat.copy()
        plus[p] += step
        minus = flat.copy()
        minus[p] -= step
        diff = ops.sub(
            complexity_fn(Tensor(plus.reshape(image.shape))),
            complexity_fn(Tensor(minus.reshape(image.shape))),
        )
        term = ops.absolute(ops.div(diff, 2.0 * step))
        total = term if total is None else ops.add(total, term)
    return ops.mul(total, flat.size / float(len(pixels)))


def complexity_loss(c, c_target, penalty=None, lambda_reg=0.0):
    c = as_tensor(c)
    d = ops.sub(c, c_target)
    loss = ops.mul(d, d)
    if penalty is not None and lambda_reg:
        loss = ops.add(loss, ops.mul(penalty, lambda_reg))
    return loss


def composite_loss(logits, target_ids, c, weights, c_target, layout_ids,
                   penalty=None):
    """Weighted sum of layout, text and complexity terms.

    Parameters
    ----------
    logits : Tensor
        Decoder logits [T, V], one row per target position.
    target_ids : list of int
        Target ids including the final <eot>.
    c : Tensor
        Complexity score (scalar).
    weights : LossWeights
    c_target : float
    layout_ids : collection of int
        Ids of layout-tag tokens.
    penalty : Tensor, optional
        Gradient-penalty estimate for L_c.

    Returns
    -------
    LossComponents
    """
    target_ids = [int(t) for t in target_ids]
    if not target_ids:
        raise ContractError("empty target sequence")
    if logits.shape[0] != len(target_ids):
        raise ContractError(
            "{} logit rows for {} targets".format(
                logits.shape[0], len(target_ids)
            )
        )
    layout_pos, text_pos = split_positions(target_ids, layout_ids)
    layout_sum, n_layout = token_cross_entropy(logits, target_ids, layout_pos)
    text_sum, n_text = token_cross_entropy(logits, target_ids, text_pos)
    l_layout = ops.div(layout_sum, max(1, n_layout))
    l_text = ops.div(text_sum, max(1, n_text))

    lam_layout = modulated_weight(weights.lambda_layout, weights.layout, c)
    lam_text = modulated_weight(weights.lambda_text, weights.text, c)
    total = ops.add(ops.mul(l_layout, lam_layout), ops.mul(l_text, lam_text))
    if weights.lambda_c:
        l_c = complexity_loss(c, c_target, penalty, weights.lambda_reg)
        total = ops.add(total, ops.mul(l_c, weights.lambda_c))
    else:
        l_c = Tensor(0.0)
    return LossComponents(total, l_layout, l_text, l_c, lam_layout, lam_text)


if __name__ == "__main__":
    import doctest
    failure_count, test_count = doctest.testmod()
    assert test_count > 0
    assert failure_count == 0, "Doctests failed!"
