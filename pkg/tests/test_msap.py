#!/usr/bin/env python3

import numpy as np
import pytest

from hand.config import MsapConfig
from hand.decoder import MultiHeadAttention
from hand.encoder import Encoder, EncoderConfig
from hand.lib.errors import ParameterError
from hand.msap import (
    POOL_DIMS, ComplexityNetwork, FactorParams, FeatureSelector, Msap,
    ScalingFactors, ScalingParams, SecondPass, WarmupSchedule,
    complexity_scaled_multihead, compute_scaling_factors, first_pass,
    relative_position_encoding,
)
from hand.tensor.tensor import Tensor
from hand.verify import run_case


def test_factor_at_threshold():
    f = FactorParams(base=2.0, gamma=0.5, delta=4.0, theta=0.3)
    assert f(0.3) == pytest.approx(2.0 * 1.15 / 2.0)


@pytest.mark.parametrize("c", [0.0, 0.25, 0.9, 1.0])
def test_flat_factor_is_half_base(c):
    f = FactorParams(base=3.0, gamma=0.0, delta=0.0, theta=0.5)
    assert f(c) == pytest.approx(1.5)


def test_factors_decrease_past_threshold():
    f = FactorParams(base=1.0, gamma=0.5, delta=20.0, theta=0.5)
    assert f(0.2) > f(0.5) > f(0.8)


def test_compute_scaling_factors_accepts_tensor():
    params = ScalingParams(
        FactorParams(base=1.0), FactorParams(base=2.0), FactorParams(base=4.0)
    )
    a = compute_scaling_factors(Tensor(0.5), params)
    assert isinstance(a, ScalingFactors)
    assert a.alpha == pytest.approx(0.625)
    assert a.beta == pytest.approx(1.25)
    assert a.omega == pytest.approx(2.5)


def test_warmup_schedule():
    s = WarmupSchedule(alpha0=0.1, gamma=0.5, warmup_epochs=10)
    assert s(0) == 0.1
    assert s(5) == pytest.approx(0.125)
    assert s(10) == pytest.approx(0.15)
    assert s(100) == pytest.approx(0.15)
    assert WarmupSchedule(warmup_epochs=0)(0) == pytest.approx(0.15)
    with pytest.raises(ParameterError):
        s(-1)


@pytest.mark.parametrize("level", sorted(POOL_DIMS))
def test_complexity_in_unit_interval(level):
    rng = np.random.default_rng(0)
    phi = ComplexityNetwork(2, rng, hidden=8).eval()
    for _ in range(3):
        c = phi(Tensor(rng.standard_normal((2, 16, 48)) * 3.0), level)
        assert c.shape == ()
        assert 0.0 < float(c.item()) < 1.0


def test_complexity_unknown_level():
    rng = np.random.default_rng(1)
    phi = ComplexityNetwork(2, rng, hidden=8, levels=["line"])
    with pytest.raises(ParameterError):
        phi(Tensor(np.zeros((2, 8, 32))), "paragraph")


def test_complexity_eval_is_deterministic():
    rng = np.random.default_rng(2)
    phi = ComplexityNetwork(2, rng, hidden=8, dropout=0.5).eval()
    f = Tensor(rng.standard_normal((2, 8, 32)))
    assert float(phi(f, "line").item()) == float(phi(f, "line").item())


def test_zero_gate_halves_features():
    rng = np.random.default_rng(3)
    gate = FeatureSelector(4, rng)
    gate.gate_proj.weight.data[:] = 0.0
    gate.gate_proj.bias.data[:] = 0.0
    seq = rng.standard_normal((5, 4))
    out = gate(Tensor(seq), Tensor(0.7))
    assert np.allclose(out.data, 0.5 * seq)


def test_gate_depends_on_complexity():
    rng = np.random.default_rng(4)
    gate = FeatureSelector(4, rng)
    seq = Tensor(rng.standard_normal((5, 4)))
    low = gate.gate(seq, Tensor(0.1)).data
    high = gate.gate(seq, Tensor(0.9)).data
    assert low.shape == (1, 4)
    assert not np.allclose(low, high)
    assert np.all((low > 0.0) & (low < 1.0))


def test_zero_alpha_silences_second_pass():
    rng = np.random.default_rng(5)
    second = SecondPass(8, 2, rng, k_mem=2, sparse_window=3, anchor_every=2)
    out = second(Tensor(rng.standard_normal((6, 8))),
                 ScalingFactors(0.0, 0.4, 1.0))
    assert out.shape == (6, 8)
    assert np.all(out.data == 0.0)


def test_unit_omega_is_plain_attention():
    rng = np.random.default_rng(6)
    attn = MultiHeadAttention(8, 2, rng)
    q = Tensor(rng.standard_normal((3, 8)))
    kv = Tensor(rng.standard_normal((4, 8)))
    scaled = complexity_scaled_multihead(attn, q, kv, 1.0)
    assert np.array_equal(scaled.data, attn(q, kv).data)


def test_relative_position_encoding():
    rel = relative_position_encoding(4, 6)
    assert rel.shape == (4, 6)
    assert rel[0].tolist() == [0.0, 1.0] * 3


def test_msap_second_pass_reports_factors():
    rng = np.random.default_rng(7)
    cfg = MsapConfig(hidden=8, dropout=0.0)
    msap = Msap(2, 8, 2, rng, cfg=cfg, k_mem=2, sparse_window=3,
                anchor_every=2)
    out, factors = msap.second_pass(Tensor(rng.standard_normal((4, 8))),
                                    Tensor(0.3))
    assert out.shape == (4, 8)
    assert factors == compute_scaling_factors(0.3, cfg.scaling_params())
    assert msap.schedule(cfg.warmup_epochs) == pytest.approx(0.15)


def test_first_pass_uses_warmup_scale():
    rng = np.random.default_rng(8)
    enc = Encoder(
        EncoderConfig(scale_level="line", stem_channels=(2, 4, 4),
                      channels=8, d_model=8),
        rng,
    ).eval()
    image = Tensor(rng.random((3, 32, 64)))
    schedule = WarmupSchedule(alpha0=0.1, gamma=0.5, warmup_epochs=10)
    out, seq, alpha_e = first_pass(enc, image, 5, schedule)
    _, h, w = out.f5.shape
    assert alpha_e == pytest.approx(0.125)
    assert seq.shape == (h * w, 8)
    assert np.allclose(
        seq.data, enc.flatten_with_pe(out.f5, scale=alpha_e).data
    )


@pytest.mark.parametrize("name", [
    "msap.complexity_network", "msap.feature_gate", "msap.second_pass",
])
def test_msap_gradients(name):
    result = run_case(name)
    assert result.passed, result.errors
