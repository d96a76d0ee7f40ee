#!/usr/bin/env python3
"""
Transformer decoder over encoder feature sequences.

Each layer runs three residual sublayers, each wrapped as
``LayerNorm(x + sublayer(x))``:

  1. causal multi-head self-attention;
  2. adaptive feature fusion: one integrated attention per feature level
     (half memory-augmented heads, half sparse heads), mixed with
     softmax-normalized level weights;
  3. position-wise feed-forward network.

Masks are boolean "allowed" arrays; disallowed positions get an additive
`ops.MASK_VALUE` before the softmax so their weight is exactly zero.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .encoder import positional_encoding_1d
from .lib.errors import ContractError, DimensionError, ParameterError
from .tensor import ops
from .tensor.nn import Embedding, LayerNorm, Linear, Module, Parameter
from .tensor.tensor import Tensor, as_tensor, no_grad
from .tokens import EOT_ID, SOT_ID, TokenSequence

log = logging.getLogger(__name__)

HEAD_DENSE = "dense"
HEAD_MEMORY = "memory"
HEAD_SPARSE = "sparse"


@dataclass
class DecoderConfig:
    num_layers: int = 6
    d_model: int = 128
    num_heads: int = 4
    ffn_hidden: int = 256
    k_mem: int = 32
    sparse_window: int = 64
    anchor_every: int = 16
    fusion_levels: int = 2
    lambda_mem: float = 0.5
    lambda_sparse: float = 0.5
    norm_eps: float = 1e-5
    max_decode_len: int = 256

    def __post_init__(self):
        if self.d_model % self.num_heads:
            raise ParameterError(
                "d_model {} is not divisible by {} heads".format(
                    self.d_model, self.num_heads
                )
            )
        if self.k_mem < 0:
            raise ParameterError("k_mem must be >= 0")
        if self.sparse_window < 1:
            raise ParameterError("sparse_window must be >= 1")
        if self.fusion_levels < 1:
            raise ParameterError("fusion_levels must be >= 1")

    @property
    def d_k(self):
        return self.d_model // self.num_heads


# Masks ---------------------------------------------------------------------

def causal_mask(t):
    """allowed[i, j] iff j <= i.

    >>> causal_mask(3).astype(int).tolist()
    [[1, 0, 0], [1, 1, 0], [1, 1, 1]]
    """
    return np.tril(np.ones((t, t), dtype=bool))


def sparse_mask(t, s, window, anchor_every=0):
    """Banded window plus periodic anchors.

    Query i sees a window of `window` keys starting (window - 1) // 2
    before its centre min(i, s - 1), and every key whose index is a
    multiple of anchor_every (0 disables anchors).

    >>> sparse_mask(3, 3, 1).astype(int).tolist()
    [[1, 0, 0], [0, 1, 0], [0, 0, 1]]
    >>> sparse_mask(1, 5, 1, anchor_every=2).astype(int).tolist()
    [[1, 0, 1, 0, 1]]
    """
    if window < 1:
        raise ParameterError("sparse window must be >= 1")
    allowed = np.zeros((t, s), dtype=bool)
    for i in range(t):
        centre = min(i, s - 1)
        lo = max(0, centre - (window - 1) // 2)
        hi = min(s, centre - (window - 1) // 2 + window)
        allowed[i, lo:hi] = True
    if anchor_every:
        allowed[:, ::anchor_every] = True
    return allowed


def _check_rows(allowed):
    empty = ~allowed.any(axis=-1)
    if empty.any():
        raise ContractError(
            "attention row {} has no allowed position".format(
                int(np.argmax(empty))
            )
        )


# Single-head attention -----------------------------------------------------

def scaled_dot_attention(q, k, v, allowed=None, omega=1.0):
    """softmax(q k^T / sqrt(d_k) * omega + mask) v

    Returns (output, weights).
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(
            "query width {} != key width {}".format(q.shape[-1], k.shape[-1])
        )
    if k.shape[0] != v.shape[0]:
        raise DimensionError(
            "{} keys but {} values".format(k.shape[0], v.shape[0])
        )
    logits = ops.div(ops.matmul(q, ops.transpose(k)), np.sqrt(q.shape[-1]))
    if not (isinstance(omega, float) and omega == 1.0):
        logits = ops.mul(logits, omega)
    if allowed is not None:
        allowed = np.asarray(allowed, dtype=bool)
        if allowed.shape != logits.shape:
            raise DimensionError(
                "mask {} does not match logits {}".format(
                    allowed.shape, logits.shape
                )
            )
        _check_rows(allowed)
        logits = ops.add(logits, np.where(allowed, 0.0, ops.MASK_VALUE))
    weights = ops.softmax(logits, axis=-1)
    return ops.matmul(weights, v), weights


def memory_augmented_attention(q, k, v, memory, allowed=None, omega=1.0):
    """Attention over [K; M] and [V; M].

    allowed masks the real keys only; memory slots are always visible.
    """
    memory = as_tensor(memory)
    if memory.shape[0] == 0:
        return scaled_dot_attention(q, k, v, allowed, omega)
    if memory.shape[-1] != as_tensor(k).shape[-1]:
        raise DimensionError(
            "memory width {} != key width {}".format(
                memory.shape[-1], as_tensor(k).shape[-1]
            )
        )
    keys = ops.concat([k, memory], axis=0)
    values = ops.concat([v, memory], axis=0)
    if allowed is not None:
        allowed = np.concatenate(
            [np.asarray(allowed, dtype=bool),
             np.ones((allowed.shape[0], memory.shape[0]), dtype=bool)],
            axis=1,
        )
    return scaled_dot_attention(q, keys, values, allowed, omega)


def sparse_attention(q, k, v, allowed, omega=1.0):
    if allowed is None:
        raise ContractError("sparse attention needs a mask")
    return scaled_dot_attention(q, k, v, allowed, omega)


# Multi-head ----------------------------------------------------------------

class MultiHeadAttention(Module):
    """Projected multi-head attention with per-head mechanisms.

    kinds assigns each head "dense", "memory" or "sparse". When memory or
    sparse heads are present, the two groups are scaled by the learnable
    lambda_mem / lambda_sparse before the output projection.

    With k_mem=0, a sparse window covering every key and
    lambda_mem = lambda_sparse = 1, every head computes dense attention and
    the layer matches an all-dense one with the same projections bitwise.
    Forward passes keep no state on the module.
    """

    def __init__(self, d_model, num_heads, rng, kinds=None, k_mem=0,
                 sparse_window=64, anchor_every=16, lambda_mem=0.5,
                 lambda_sparse=0.5):
        if d_model % num_heads:
            raise ParameterError("d_model must be divisible by num_heads")
        self.d_model = d_model
        self.num_heads = num_heads
        self.d_k = d_model // num_heads
        self.kinds = list(kinds or [HEAD_DENSE] * num_heads)
        if len(self.kinds) != num_heads:
            raise DimensionError(
                "{} head kinds for {} heads".format(len(self.kinds), num_heads)
            )
        self.sparse_window = sparse_window
        self.anchor_every = anchor_every
        self.w_q = Linear(d_model, d_model, rng)
        self.w_k = Linear(d_model, d_model, rng)
        self.w_v = Linear(d_model, d_model, rng)
        self.w_o = Linear(d_model, d_model, rng)
        self.memory = [
            Parameter(
                rng.standard_normal((k_mem, self.d_k)) * self.d_k ** -0.5
            )
            for kind in self.kinds if kind == HEAD_MEMORY
        ]
        integrated = any(k != HEAD_DENSE for k in self.kinds)
        self.lambda_mem = Parameter(lambda_mem) if integrated else None
        self.lambda_sparse = Parameter(lambda_sparse) if integrated else None

    def head_outputs(self, q_src, kv_src, allowed=None, omega=1.0):
        """Per-head outputs [T, d_k] and attention weights [T, S]."""
        q_all = self.w_q(q_src)
        k_all = self.w_k(kv_src)
        v_all = self.w_v(kv_src)
        t, s = q_all.shape[0], k_all.shape[0]
        sparse_allowed = None
        if HEAD_SPARSE in self.kinds:
            sparse_allowed = sparse_mask(
                t, s, self.sparse_window, self.anchor_every
            )
            if allowed is not None:
                sparse_allowed = sparse_allowed & allowed
        outputs, weights = [], []
        mem = iter(self.memory)
        for h, kind in enumerate(self.kinds):
            cols = slice(h * self.d_k, (h + 1) * self.d_k)
            q = q_all[:, cols]
            k = k_all[:, cols]
            v = v_all[:, cols]
            if kind == HEAD_MEMORY:
                out, w = memory_augmented_attention(
                    q, k, v, next(mem), allowed, omega
                )
            elif kind == HEAD_SPARSE:
                out, w = sparse_attention(q, k, v, sparse_allowed, omega)
            else:
                out, w = scaled_dot_attention(q, k, v, allowed, omega)
            outputs.append(out)
            weights.append(w)
        return outputs, weights

    def integrate_heads(self, outputs):
        """Concat(heads) W_O, group-scaled by lambda_mem / lambda_sparse."""
        if len(outputs) != self.num_heads:
            raise DimensionError(
                "{} head outputs for {} heads".format(
                    len(outputs), self.num_heads
                )
            )
        scaled = []
        for kind, out in zip(self.kinds, outputs):
            if kind == HEAD_MEMORY:
                out = ops.mul(out, self.lambda_mem)
            elif kind == HEAD_SPARSE:
                out = ops.mul(out, self.lambda_sparse)
            scaled.append(out)
        return self.w_o(ops.concat(scaled, axis=1))

    def forward(self, q_src, kv_src, allowed=None, omega=1.0):
        outputs, _ = self.head_outputs(q_src, kv_src, allowed, omega)
        return self.integrate_heads(outputs)


def integrated_head_kinds(num_heads):
    """First half memory-augmented, the rest sparse.

    >>> integrated_head_kinds(4)
    ['memory', 'memory', 'sparse', 'sparse']
    """
    n_mem = (num_heads + 1) // 2
    return [HEAD_MEMORY] * n_mem + [HEAD_SPARSE] * (num_heads - n_mem)


def integrated_attention(cfg, rng):
    return MultiHeadAttention(
        cfg.d_model, cfg.num_heads, rng,
        kinds=integrated_head_kinds(cfg.num_heads),
        k_mem=cfg.k_mem,
        sparse_window=cfg.sparse_window,
        anchor_every=cfg.anchor_every,
        lambda_mem=cfg.lambda_mem,
        lambda_sparse=cfg.lambda_sparse,
    )


def feature_levels(seq, h, w, n_levels):
    """Full-resolution sequence plus 2x, 4x ... average-pooled copies.

    seq is [h * w, d] in row-major grid order.
    """
    seq = as_tensor(seq)
    if seq.shape[0] != h * w:
        raise DimensionError(
            "sequence of {} does not cover a {}x{} grid".format(
                seq.shape[0], h, w
            )
        )
    d = seq.shape[1]
    levels = [seq]
    grid = ops.transpose(seq).reshape(d, h, w)
    for lvl in range(1, n_levels):
        oh, ow = max(1, h >> lvl), max(1, w >> lvl)
        pooled = ops.adaptive_avg_pool2d(grid, oh, ow)
        levels.append(ops.transpose(pooled.reshape(d, oh * ow)))
    return levels


class AdaptiveFeatureFusion(Module):
    """sum_l softmax(lambda)_l * Attn_l(Q, K_l, V_l)"""

    def __init__(self, cfg, rng, n_levels=None):
        n_levels = n_levels or cfg.fusion_levels
        self.attention = [
            integrated_attention(cfg, rng) for _ in range(n_levels)
        ]
        self.weights = Parameter(np.zeros(n_levels))

    def normalized_weights(self):
        return ops.softmax(self.weights)

    def forward(self, q, levels):
        if not levels:
            raise ContractError("feature fusion needs at least one level")
        if len(levels) != len(self.attention):
            raise ContractError(
                "{} feature levels for {} fusion branches".format(
                    len(levels), len(self.attention)
                )
            )
        lam = self.normalized_weights()
        out = None
        for i, (attn, kv) in enumerate(zip(self.attention, levels)):
            term = ops.mul(attn(q, kv), lam[i])
            out = term if out is None else ops.add(out, term)
        return out


class PositionwiseFFN(Module):

    def __init__(self, d_model, hidden, rng, eps=1e-5):
        self.w1 = Linear(d_model, hidden, rng)
        self.w2 = Linear(hidden, d_model, rng)
        self.norm = LayerNorm(d_model, eps)

    def hidden(self, x):
        return ops.relu(self.w1(x))

    def forward(self, x):
        return self.norm(ops.add(x, self.w2(self.hidden(x))))


class DecoderLayer(Module):

    def __init__(self, cfg, rng):
        self.self_attention = MultiHeadAttention(
            cfg.d_model, cfg.num_heads, rng
        )
        self.self_norm = LayerNorm(cfg.d_model, cfg.norm_eps)
        self.fusion = AdaptiveFeatureFusion(cfg, rng)
        self.fusion_norm = LayerNorm(cfg.d_model, cfg.norm_eps)
        self.ffn = PositionwiseFFN(
            cfg.d_model, cfg.ffn_hidden, rng, cfg.norm_eps
        )

    def masked_self_attention(self, x):
        return self.self_attention(x, x, allowed=causal_mask(x.shape[0]))

    def forward(self, x, levels):
        x = self.self_norm(ops.add(x, self.masked_self_attention(x)))
        x = self.fusion_norm(ops.add(x, self.fusion(x, levels)))
        return self.ffn(x)


class Decoder(Module):

    def __init__(self, cfg, vocab_size, rng):
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.embedding = Embedding(vocab_size, cfg.d_model, rng)
        self.layers = [DecoderLayer(cfg, rng) for _ in range(cfg.num_layers)]
        self.output = Linear(cfg.d_model, vocab_size, rng)

    def embed_with_pe1d(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        pe = positional_encoding_1d(len(ids), self.cfg.d_model)
        return ops.add(self.embedding(ids), pe)

    def forward(self, ids, levels):
        """Logits [T, V] for decoder input ids (starting with <sot>)."""
        x = self.embed_with_pe1d(ids)
        for layer in self.layers:
            x = layer(x, levels)
        return self.output(x)

    def decode_sequence(self, levels, max_len=None, mode="greedy",
                        targets=None, vocab=None, inputs=None):
        """Decode against encoder feature levels.

        teacher_forced: targets are the ground-truth ids (without <sot>,
        ending with <eot>); the decoder sees <sot> + targets[:-1], or the
        given inputs (corrupted teacher forcing), and the returned logits
        cover every target position.

        greedy: start from <sot>, append the argmax token until <eot> or
        max_len steps. The returned sequence includes the <eot> token when
        one was emitted; otherwise it is flagged truncated.
        """
        max_len = max_len or self.cfg.max_decode_len
        if max_len < 1:
            raise ContractError("max_len must be >= 1")
        if mode == "teacher_forced":
            if targets is None or len(targets) == 0:
                raise ContractError("teacher forcing needs targets")
            targets = [int(i) for i in targets]
            if inputs is None:
                inputs = [SOT_ID] + targets[:-1]
            elif len(inputs) != len(targets):
                raise ContractError(
                    "{} decoder inputs for {} targets".format(
                        len(inputs), len(targets)
                    )
                )
            logits = self.forward(inputs, levels)
            ids = np.argmax(logits.data, axis=-1).tolist()
            return logits, self._sequence(ids, vocab, truncated=False)
        if mode != "greedy":
            raise ParameterError("unknown decode mode {!r}".format(mode))

        ids = [SOT_ID]
        rows = []
        with no_grad():
            for _ in range(max_len):
                step = self.forward(ids, levels).data[-1]
                rows.append(step)
                nxt = int(np.argmax(step))
                ids.append(nxt)
                if nxt == EOT_ID:
                    break
        emitted = ids[1:]
        truncated = emitted[-1] != EOT_ID
        if truncated:
            log.debug("greedy decode stopped at max_len=%d", max_len)
        seq = self._sequence(emitted, vocab, truncated)
        return Tensor(np.stack(rows)), seq

    @staticmethod
    def _sequence(ids, vocab, truncated):
        if vocab is None:
            return TokenSequence([str(i) for i in ids], truncated)
        return TokenSequence.from_ids(ids, vocab, truncated)


def probabilities(logits):
    """p_t = softmax(W_out h_t + b_out) row by row."""
    return ops.softmax(logits, axis=-1)


if __name__ == "__main__":
    import doctest
    failure_count, test_count = doctest.testmod()
    assert test_count > 0
    assert failure_count == 0, "Doctests failed!"
