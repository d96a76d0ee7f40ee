#!/usr/bin/env python3

import numpy as np
import pytest

from hand.decoder import (
    AdaptiveFeatureFusion, Decoder, DecoderConfig, DecoderLayer, HEAD_SPARSE,
    MultiHeadAttention, PositionwiseFFN, causal_mask, feature_levels,
    integrated_head_kinds, memory_augmented_attention, scaled_dot_attention,
    sparse_attention, sparse_mask,
)
from hand.lib.errors import ContractError, DimensionError, ParameterError
from hand.tensor import ops
from hand.tensor.tensor import Tensor
from hand.tokens import EOT_ID, SOT_ID, Vocabulary
from hand.verify import run_case


def tiny_config(**kw):
    base = dict(
        num_layers=1, d_model=8, num_heads=2, ffn_hidden=16, k_mem=2,
        sparse_window=3, anchor_every=2, fusion_levels=2, max_decode_len=6,
    )
    base.update(kw)
    return DecoderConfig(**base)


def rand(rng, *shape):
    return Tensor(rng.standard_normal(shape))


def test_config_validation():
    with pytest.raises(ParameterError):
        DecoderConfig(d_model=10, num_heads=4)
    with pytest.raises(ParameterError):
        DecoderConfig(k_mem=-1)
    with pytest.raises(ParameterError):
        DecoderConfig(fusion_levels=0)


def test_single_key_returns_its_value():
    rng = np.random.default_rng(0)
    v = rand(rng, 1, 4)
    out, w = scaled_dot_attention(rand(rng, 3, 4), rand(rng, 1, 4), v)
    assert np.allclose(out.data, np.repeat(v.data, 3, axis=0))
    assert np.allclose(w.data, 1.0)


def test_identical_keys_average_values():
    rng = np.random.default_rng(1)
    k = Tensor(np.repeat(rng.standard_normal((1, 4)), 5, axis=0))
    v = rand(rng, 5, 4)
    out, _ = scaled_dot_attention(rand(rng, 2, 4), k, v)
    assert np.allclose(out.data, v.data.mean(axis=0, keepdims=True))


def test_causal_self_attention_first_row():
    rng = np.random.default_rng(2)
    x = rand(rng, 4, 4)
    out, _ = scaled_dot_attention(x, x, x, causal_mask(4))
    assert np.allclose(out.data[0], x.data[0])


def test_fully_masked_row_is_rejected():
    rng = np.random.default_rng(3)
    allowed = np.ones((2, 3), dtype=bool)
    allowed[1] = False
    with pytest.raises(ContractError):
        scaled_dot_attention(rand(rng, 2, 4), rand(rng, 3, 4),
                             rand(rng, 3, 4), allowed)


def test_attention_shape_errors():
    rng = np.random.default_rng(4)
    with pytest.raises(DimensionError):
        scaled_dot_attention(rand(rng, 2, 4), rand(rng, 3, 5),
                             rand(rng, 3, 4))
    with pytest.raises(DimensionError):
        scaled_dot_attention(rand(rng, 2, 4), rand(rng, 3, 4),
                             rand(rng, 2, 4))


def test_empty_memory_is_plain_attention():
    rng = np.random.default_rng(5)
    q, k, v = rand(rng, 3, 4), rand(rng, 5, 4), rand(rng, 5, 4)
    plain, _ = scaled_dot_attention(q, k, v)
    mem, _ = memory_augmented_attention(q, k, v, Tensor(np.zeros((0, 4))))
    assert np.array_equal(plain.data, mem.data)


def test_memory_slots_always_visible():
    rng = np.random.default_rng(6)
    q, k, v = rand(rng, 2, 4), rand(rng, 3, 4), rand(rng, 3, 4)
    allowed = np.zeros((2, 3), dtype=bool)
    allowed[:, 0] = True
    _, w = memory_augmented_attention(q, k, v, rand(rng, 2, 4), allowed)
    assert w.shape == (2, 5)
    assert np.all(w.data[:, 1:3] == 0.0)
    assert np.all(w.data[:, 3:] > 0.0)


def test_full_sparse_mask_equals_dense():
    rng = np.random.default_rng(7)
    q, k, v = rand(rng, 3, 4), rand(rng, 6, 4), rand(rng, 6, 4)
    dense, _ = scaled_dot_attention(q, k, v)
    sparse, _ = sparse_attention(q, k, v, np.ones((3, 6), dtype=bool))
    assert np.allclose(dense.data, sparse.data, atol=1e-12)
    with pytest.raises(ContractError):
        sparse_attention(q, k, v, None)


def test_unit_window_attends_own_position():
    rng = np.random.default_rng(8)
    x = rand(rng, 4, 4)
    v = rand(rng, 4, 4)
    out, _ = sparse_attention(x, x, v, sparse_mask(4, 4, 1))
    assert np.allclose(out.data, v.data)


def test_sparse_mask_centre_clamps():
    allowed = sparse_mask(5, 3, 1)
    assert allowed[3].tolist() == [False, False, True]
    assert allowed[4].tolist() == [False, False, True]
    band = sparse_mask(2, 8, 3, anchor_every=4)
    assert band[1].astype(int).tolist() == [1, 1, 1, 0, 1, 0, 0, 0]


def test_omega_sharpens_attention():
    q = Tensor([[1.0, 0.0]])
    k = Tensor([[1.0, 0.0], [0.5, 0.0], [0.0, 0.0]])
    v = Tensor(np.eye(3)[:, :2])
    _, soft = scaled_dot_attention(q, k, v)
    _, sharp = scaled_dot_attention(q, k, v, omega=50.0)
    assert soft.data.max() < 0.5
    assert sharp.data[0, 0] > 0.99


def test_single_head_is_output_projection():
    rng = np.random.default_rng(9)
    attn = MultiHeadAttention(4, 1, rng)
    q, kv = rand(rng, 2, 4), rand(rng, 3, 4)
    (head,), (weights,) = attn.head_outputs(q, kv)
    assert weights.shape == (2, 3)
    assert np.allclose(attn(q, kv).data, attn.w_o(head).data)


def test_integrated_heads():
    assert integrated_head_kinds(2) == ["memory", "sparse"]
    assert integrated_head_kinds(3) == ["memory", "memory", "sparse"]
    rng = np.random.default_rng(10)
    attn = MultiHeadAttention(8, 2, rng, kinds=integrated_head_kinds(2),
                              k_mem=3, sparse_window=1, anchor_every=0)
    assert len(attn.memory) == 1
    assert attn.memory[0].shape == (3, 4)
    _, weights = attn.head_outputs(rand(rng, 2, 8), rand(rng, 5, 8))
    sparse_w = weights[attn.kinds.index(HEAD_SPARSE)].data
    assert not hasattr(attn, "last_weights")
    assert np.count_nonzero(sparse_w, axis=1).tolist() == [1, 1]
    with pytest.raises(DimensionError):
        MultiHeadAttention(8, 2, rng, kinds=["memory"])


def test_feature_levels_pool():
    seq = Tensor(np.arange(16.0).reshape(8, 2))
    levels = feature_levels(seq, 2, 4, 2)
    assert [lv.shape for lv in levels] == [(8, 2), (2, 2)]
    grid = seq.data.T.reshape(2, 2, 4)
    assert np.allclose(levels[1].data[0], grid[:, :, 0:2].mean(axis=(1, 2)))
    with pytest.raises(DimensionError):
        feature_levels(seq, 3, 3, 2)


def test_fusion_single_level_equals_attention():
    rng = np.random.default_rng(11)
    fusion = AdaptiveFeatureFusion(tiny_config(fusion_levels=1), rng)
    q, kv = rand(rng, 3, 8), rand(rng, 4, 8)
    assert np.allclose(fusion(q, [kv]).data, fusion.attention[0](q, kv).data)


def test_fusion_identical_levels_ignore_weights():
    rng = np.random.default_rng(12)
    fusion = AdaptiveFeatureFusion(tiny_config(), rng)
    fusion.attention[1].load_state_dict(fusion.attention[0].state_dict())
    q, kv = rand(rng, 3, 8), rand(rng, 4, 8)
    before = fusion(q, [kv, kv]).data
    fusion.weights.data = np.array([3.0, -1.0])
    after = fusion(q, [kv, kv]).data
    assert np.allclose(before, after)


def test_fusion_level_count_errors():
    rng = np.random.default_rng(13)
    fusion = AdaptiveFeatureFusion(tiny_config(), rng)
    with pytest.raises(ContractError):
        fusion(rand(rng, 3, 8), [])
    with pytest.raises(ContractError):
        fusion(rand(rng, 3, 8), [rand(rng, 4, 8)])


def test_zero_ffn_is_layer_norm():
    rng = np.random.default_rng(14)
    ffn = PositionwiseFFN(8, 16, rng)
    for p in ffn.w1.parameters() + ffn.w2.parameters():
        p.data = np.zeros_like(p.data)
    x = rand(rng, 3, 8)
    assert np.allclose(ffn(x).data, ops.normalize(x, "layer").data)


def _decoder(rng, vocab_size=20, **kw):
    return Decoder(tiny_config(**kw), vocab_size, rng)


def _levels(rng):
    return feature_levels(rand(rng, 8, 8), 2, 4, 2)


def test_forced_eot_stops_after_one_step():
    rng = np.random.default_rng(15)
    dec = _decoder(rng)
    dec.output.weight.data[:] = 0.0
    dec.output.bias.data[:] = 0.0
    dec.output.bias.data[EOT_ID] = 10.0
    logits, seq = dec.decode_sequence(_levels(rng))
    assert len(seq) == 1
    assert logits.shape == (1, 20)
    assert not seq.truncated


def test_greedy_truncates_at_max_len():
    rng = np.random.default_rng(16)
    dec = _decoder(rng)
    dec.output.weight.data[:] = 0.0
    dec.output.bias.data[:] = 0.0
    dec.output.bias.data[5] = 10.0
    _, seq = dec.decode_sequence(_levels(rng), max_len=4)
    assert len(seq) == 4
    assert seq.truncated


def test_greedy_matches_teacher_forcing_on_own_output():
    rng = np.random.default_rng(17)
    vocab = Vocabulary.build("ab")
    dec = _decoder(rng, vocab_size=len(vocab))
    levels = _levels(rng)
    greedy_logits, seq = dec.decode_sequence(levels, vocab=vocab)
    ids = seq.to_ids(vocab)
    forced, forced_seq = dec.decode_sequence(
        levels, mode="teacher_forced", targets=ids, vocab=vocab
    )
    assert np.allclose(greedy_logits.data, forced.data)
    assert forced_seq == seq


def test_teacher_forcing_contracts():
    rng = np.random.default_rng(18)
    dec = _decoder(rng)
    levels = _levels(rng)
    logits, _ = dec.decode_sequence(
        levels, mode="teacher_forced", targets=[5, 6, EOT_ID]
    )
    assert logits.shape == (3, 20)
    custom, _ = dec.decode_sequence(
        levels, mode="teacher_forced", targets=[5, 6, EOT_ID],
        inputs=[SOT_ID, 5, 6],
    )
    assert np.array_equal(logits.data, custom.data)
    with pytest.raises(ContractError):
        dec.decode_sequence(levels, mode="teacher_forced", targets=[])
    with pytest.raises(ContractError):
        dec.decode_sequence(levels, mode="teacher_forced", targets=[5],
                            inputs=[SOT_ID, 5])
    with pytest.raises(ParameterError):
        dec.decode_sequence(levels, mode="beam")


def test_embedding_row_zero_gives_pe():
    rng = np.random.default_rng(19)
    dec = _decoder(rng)
    dec.embedding.weight.data[SOT_ID] = 0.0
    x = dec.embed_with_pe1d([SOT_ID])
    assert x.data.tolist() == [[0.0, 1.0] * 4]


@pytest.mark.parametrize("name", [
    "decoder.scaled_dot_attention", "decoder.memory_attention",
    "decoder.sparse_attention", "decoder.integrated_attention",
    "decoder.feature_fusion", "decoder.ffn", "decoder.layer",
])
def test_sublayer_gradients(name):
    result = run_case(name)
    assert result.passed, result.errors


def _share_projections(dst, src):
    for name in ("w_q", "w_k", "w_v", "w_o"):
        setattr(dst, name, getattr(src, name))


@pytest.mark.parametrize("causal", [False, True])
def test_integrated_attention_reduces_to_dense(causal):
    rng = np.random.default_rng(20)
    dense = MultiHeadAttention(8, 2, rng)
    integrated = MultiHeadAttention(
        8, 2, rng, kinds=integrated_head_kinds(2), k_mem=0,
        sparse_window=10, lambda_mem=1.0, lambda_sparse=1.0,
    )
    _share_projections(integrated, dense)
    x = rand(rng, 5, 8)
    allowed = causal_mask(5) if causal else None
    assert np.array_equal(integrated(x, x, allowed).data,
                          dense(x, x, allowed).data)


def test_integrated_layer_reduces_to_vanilla_layer():
    rng = np.random.default_rng(21)
    cfg = tiny_config(k_mem=0, sparse_window=16, fusion_levels=1,
                      lambda_mem=1.0, lambda_sparse=1.0)
    layer = DecoderLayer(cfg, rng)
    cross = MultiHeadAttention(8, 2, rng)
    _share_projections(cross, layer.fusion.attention[0])
    x, kv = rand(rng, 4, 8), rand(rng, 6, 8)
    h = layer.self_norm(ops.add(x, layer.masked_self_attention(x)))
    h = layer.fusion_norm(ops.add(h, cross(h, kv)))
    assert np.array_equal(layer(x, [kv]).data, layer.ffn(h).data)


def test_decoder_is_causal():
    rng = np.random.default_rng(22)
    dec = _decoder(rng)
    levels = _levels(rng)
    for _ in range(100):
        n = int(rng.integers(2, 8))
        ids = rng.integers(0, 20, size=n)
        t = int(rng.integers(0, n - 1))
        perturbed = ids.copy()
        perturbed[t + 1:] = rng.integers(0, 20, size=n - t - 1)
        before = dec(ids, levels).data
        after = dec(perturbed, levels).data
        assert np.array_equal(before[:t + 1], after[:t + 1])
