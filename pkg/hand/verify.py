#!/usr/bin/env python3
"""
Finite-difference gradient suite.

Every differentiable building block of the network is checked on a tiny
random instance: tensor primitives, the five encoder blocks, the
positional flattening, the decoder sublayers, the complexity network,
the feature gate, the second pass and the training losses.

Outputs are contracted with a fixed random tensor before summing, so
blocks whose plain sum is constant (softmax, normalization) are still
checked in every direction.
"""
import logging
from collections import OrderedDict

import numpy as np

from .decoder import (
    AdaptiveFeatureFusion, DecoderConfig, DecoderLayer, MultiHeadAttention,
    PositionwiseFFN, feature_levels, integrated_head_kinds,
    memory_augmented_attention, scaled_dot_attention, sparse_attention,
    sparse_mask,
)
from .encoder import (
    GatedConvFCN, GatedDSConv, OctaveConv, SEFuse, Stem, flatten_with_pe,
)
from .msap import (
    ComplexityNetwork, FeatureSelector, ScalingFactors, SecondPass,
)
from .tensor import ops
from .tensor.gradcheck import check_gradients, random_tensor
from .tensor.tensor import Tensor
from .tokens import Vocabulary
from .training.ctc import ctc_loss
from .training.losses import LossWeights, complexity_loss, composite_loss

log = logging.getLogger(__name__)

EPS = 1e-5
RTOL = 1e-4


def _contracted(fn, rng):
    """fn's output dotted with a fixed random tensor of the same shape."""
    projection = {}

    def wrapped(*args):
        out = fn(*args)
        if "r" not in projection:
            projection["r"] = rng.standard_normal(out.shape)
        return ops.sum(ops.mul(out, projection["r"]))

    return wrapped


def _tiny_decoder_config():
    return DecoderConfig(
        num_layers=1, d_model=8, num_heads=2, ffn_hidden=16, k_mem=2,
        sparse_window=3, anchor_every=2, fusion_levels=2,
    )


def _allowed(rng, t, s):
    allowed = rng.random((t, s)) < 0.6
    allowed[np.arange(t), rng.integers(0, s, size=t)] = True
    return allowed


# Cases: each builds (fn, inputs, wrt) from a generator.

def case_matmul(rng):
    return ops.matmul, [random_tensor(rng, 3, 4), random_tensor(rng, 4, 2)], \
        None


def case_conv2d(rng):
    def fn(x, k):
        return ops.conv2d(x, k, stride=2, pad=1)
    return fn, [random_tensor(rng, 2, 5, 5), random_tensor(rng, 3, 2, 3, 3)], \
        None


def case_depthwise_separable(rng):
    def fn(x, dk, pk):
        return ops.depthwise_separable_conv2d(x, dk, pk, stride=1, pad=1)
    inputs = [random_tensor(rng, 2, 5, 5), random_tensor(rng, 2, 1, 3, 3),
              random_tensor(rng, 3, 2)]
    return fn, inputs, None


def case_softmax(rng):
    return ops.softmax, [random_tensor(rng, 3, 4)], None


def case_log_softmax(rng):
    return ops.log_softmax, [random_tensor(rng, 3, 4)], None


def case_instance_norm(rng):
    def fn(x, w, b):
        return ops.normalize(x, "instance", 1e-5, w, b)
    inputs = [random_tensor(rng, 2, 3, 4), random_tensor(rng, 2, 1, 1),
              random_tensor(rng, 2, 1, 1)]
    return fn, inputs, None


def case_layer_norm(rng):
    def fn(x, w, b):
        return ops.normalize(x, "layer", 1e-5, w, b)
    inputs = [random_tensor(rng, 3, 6), random_tensor(rng, 6),
              random_tensor(rng, 6)]
    return fn, inputs, None


def case_adaptive_pool(rng):
    def fn(x):
        return ops.adaptive_avg_pool2d(x, 2, 3)
    return fn, [random_tensor(rng, 2, 5, 7)], None


def case_upsample(rng):
    return ops.upsample_nearest2x, [random_tensor(rng, 2, 2, 3)], None


def case_stem(rng):
    stem = Stem((2, 3, 3), rng)
    x = random_tensor(rng, 3, 16, 16)
    return stem, [x], [x] + stem.parameters()


def case_gated_dsconv(rng):
    block = GatedDSConv(2, 4, rng, width_stride=2)
    x = random_tensor(rng, 2, 4, 4)
    return block, [x], [x] + block.parameters()


def case_octave(rng):
    block = OctaveConv(4, 4, 0.5, rng)

    def fn(x):
        high, low = block(x)
        return ops.concat([high.reshape(-1), low.reshape(-1)], axis=0)
    x = random_tensor(rng, 4, 4, 4)
    return fn, [x], [x] + block.parameters()


def case_se_fuse(rng):
    block = SEFuse(4, 2, rng)
    high, low = random_tensor(rng, 2, 4, 4), random_tensor(rng, 2, 2, 2)
    return block, [high, low], [high, low] + block.parameters()


def case_gated_fcn(rng):
    block = GatedConvFCN(2, rng, width_stride=2, dropout=0.0).eval()
    x = random_tensor(rng, 2, 4, 4)
    return block, [x], [x] + block.parameters()


def case_flatten_with_pe(rng):
    def fn(f):
        return flatten_with_pe(f, scale=0.15)
    return fn, [random_tensor(rng, 4, 2, 3)], None


def case_scaled_dot_attention(rng):
    allowed = _allowed(rng, 3, 5)

    def fn(q, k, v):
        return scaled_dot_attention(q, k, v, allowed, omega=0.7)[0]
    return fn, [random_tensor(rng, 3, 4), random_tensor(rng, 5, 4),
                random_tensor(rng, 5, 4)], None


def case_memory_attention(rng):
    allowed = _allowed(rng, 3, 5)

    def fn(q, k, v, m):
        return memory_augmented_attention(q, k, v, m, allowed)[0]
    return fn, [random_tensor(rng, 3, 4), random_tensor(rng, 5, 4),
                random_tensor(rng, 5, 4), random_tensor(rng, 2, 4)], None


def case_sparse_attention(rng):
    allowed = sparse_mask(3, 5, 3, anchor_every=2)

    def fn(q, k, v):
        return sparse_attention(q, k, v, allowed)[0]
    return fn, [random_tensor(rng, 3, 4), random_tensor(rng, 5, 4),
                random_tensor(rng, 5, 4)], None


def case_integrated_attention(rng):
    attn = MultiHeadAttention(
        8, 2, rng, kinds=integrated_head_kinds(2), k_mem=2,
        sparse_window=3, anchor_every=2,
    )

    def fn(q, kv):
        return attn(q, kv, omega=1.3)
    q, kv = random_tensor(rng, 3, 8), random_tensor(rng, 5, 8)
    return fn, [q, kv], [q, kv] + attn.parameters()


def case_feature_fusion(rng):
    fusion = AdaptiveFeatureFusion(_tiny_decoder_config(), rng)

    def fn(q, seq):
        return fusion(q, feature_levels(seq, 2, 4, 2))
    q, seq = random_tensor(rng, 3, 8), random_tensor(rng, 8, 8)
    return fn, [q, seq], [q, seq] + fusion.parameters()


def case_ffn(rng):
    ffn = PositionwiseFFN(8, 16, rng)
    x = random_tensor(rng, 3, 8)
    return ffn, [x], [x] + ffn.parameters()


def case_decoder_layer(rng):
    layer = DecoderLayer(_tiny_decoder_config(), rng)

    def fn(x, seq):
        return layer(x, feature_levels(seq, 2, 4, 2))
    x, seq = random_tensor(rng, 3, 8), random_tensor(rng, 8, 8)
    return fn, [x, seq], [x, seq] + layer.parameters()


def case_complexity_network(rng):
    phi = ComplexityNetwork(
        2, rng, hidden=8, dropout=0.0, levels=["line"]
    ).eval()

    def fn(f):
        return phi(f, "line")
    f = random_tensor(rng, 2, 8, 32)
    return fn, [f], [f] + phi.parameters()


def case_feature_gate(rng):
    gate = FeatureSelector(8, rng)
    seq, c = random_tensor(rng, 5, 8), Tensor(0.4)
    return gate, [seq, c], [seq, c] + gate.parameters()


def case_second_pass(rng):
    second = SecondPass(8, 2, rng, k_mem=2, sparse_window=3, anchor_every=2)
    factors = ScalingFactors(0.8, 0.6, 1.2)

    def fn(f1):
        return second(f1, factors)
    f1 = random_tensor(rng, 5, 8)
    return fn, [f1], [f1] + second.parameters()


def case_composite_loss(rng):
    vocab = Vocabulary.build("ab")
    targets = vocab.encode("<S>ab</S>", sot=False)
    weights = LossWeights(lambda_c=0.5, lambda_reg=0.0)

    def fn(logits):
        return composite_loss(
            logits, targets, Tensor(0.3), weights, 0.25, vocab.tag_ids
        ).total
    return fn, [random_tensor(rng, len(targets), len(vocab))], None


def case_complexity_loss(rng):
    def fn(c, penalty):
        return complexity_loss(c, 0.25, penalty, lambda_reg=0.01)
    return fn, [Tensor(0.3), Tensor(2.0)], None


def case_ctc(rng):
    def fn(x):
        return ctc_loss(ops.log_softmax(x, axis=-1), [1, 2, 2], blank=0)
    return fn, [random_tensor(rng, 6, 3)], None


CASES = OrderedDict([
    ("ops.matmul", case_matmul),
    ("ops.conv2d", case_conv2d),
    ("ops.depthwise_separable_conv2d", case_depthwise_separable),
    ("ops.softmax", case_softmax),
    ("ops.log_softmax", case_log_softmax),
    ("ops.instance_norm", case_instance_norm),
    ("ops.layer_norm", case_layer_norm),
    ("ops.adaptive_avg_pool2d", case_adaptive_pool),
    ("ops.upsample_nearest2x", case_upsample),
    ("encoder.stem", case_stem),
    ("encoder.gated_dsconv", case_gated_dsconv),
    ("encoder.octave", case_octave),
    ("encoder.se_fuse", case_se_fuse),
    ("encoder.gated_fcn", case_gated_fcn),
    ("encoder.flatten_with_pe", case_flatten_with_pe),
    ("decoder.scaled_dot_attention", case_scaled_dot_attention),
    ("decoder.memory_attention", case_memory_attention),
    ("decoder.sparse_attention", case_sparse_attention),
    ("decoder.integrated_attention", case_integrated_attention),
    ("decoder.feature_fusion", case_feature_fusion),
    ("decoder.ffn", case_ffn),
    ("decoder.layer", case_decoder_layer),
    ("msap.complexity_network", case_complexity_network),
    ("msap.feature_gate", case_feature_gate),
    ("msap.second_pass", case_second_pass),
    ("training.composite_loss", case_composite_loss),
    ("training.complexity_loss", case_complexity_loss),
    ("training.ctc_loss", case_ctc),
])


def run_case(name, seed=0, eps=EPS, rtol=RTOL):
    rng = np.random.default_rng(seed)
    fn, inputs, wrt = CASES[name](rng)
    result = check_gradients(
        _contracted(fn, rng), inputs, eps=eps, rtol=rtol, wrt=wrt
    )
    worst = max(result.errors.values()) if result.errors else 0.0
    log.debug("%s: worst relative error %.2e", name, worst)
    return result


def gradcheck_suite(seed=0, names=None):
    """[(name, GradcheckResult)] for every (or the named) case."""
    names = list(CASES) if names is None else list(names)
    return [(name, run_case(name, seed)) for name in names]
