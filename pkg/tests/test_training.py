#!/usr/bin/env python3

import json
import os

import numpy as np
import pytest

from hand.config import LossModulation, RunConfig, TrainingConfig
from hand.lib.errors import ContractError, DivergenceError, ParameterError
from hand.model import HandModel, target_ids
from hand.tensor import ops
from hand.tensor.optim import Adam
from hand.tensor.tensor import Tensor
from hand.tokens import SPECIALS, TokenSequence, Vocabulary, is_tag
from hand.training import curriculum
from hand.training.curriculum import (
    adaptive_batch_size, curriculum_levels, curriculum_train,
    curriculum_weight, default_vocabulary, level_examples, pretrain_ctc,
    teacher_force_corrupt, train_step, transfer_weights,
)
from hand.training.losses import (
    LossWeights, complexity_loss, complexity_target, composite_loss,
    gradient_penalty, split_positions,
)

CONF_DIR = os.path.join(os.path.dirname(__file__), "..", "conf")


@pytest.mark.parametrize("level,expected", [(0, 16), (1, 8), (3, 2), (5, 2)])
def test_adaptive_batch_size(level, expected):
    assert adaptive_batch_size(16, 0.5, level, 2) == expected


def test_adaptive_batch_size_rejects_bad_parameters():
    with pytest.raises(ParameterError):
        adaptive_batch_size(16, 1.0, 0, 2)
    with pytest.raises(ParameterError):
        adaptive_batch_size(1, 0.5, 0, 2)


def test_curriculum_weight_ramps():
    assert curriculum_weight(0, 5) == 0.5
    assert curriculum_weight(4, 5) == 1.0
    assert curriculum_weight(2, 5, 0.0, 1.0) == 0.5


def test_curriculum_levels_must_ascend():
    with pytest.raises(ParameterError):
        curriculum_levels(TrainingConfig(levels=["paragraph", "line"]))
    levels = curriculum_levels(TrainingConfig(levels=["line", "double_page"]))
    assert [lvl.number for lvl in levels] == [1, 4]


def test_complexity_target():
    assert complexity_target(3) == 0.5
    assert complexity_target(2, [0.1, 0.3, 0.6]) == 0.3


def test_corruption_rate_zero_is_identity():
    vocab = Vocabulary.build("abc")
    seq = TokenSequence.from_text("<P>abc</P>")
    out = teacher_force_corrupt(seq, 0.0, np.random.default_rng(0), vocab)
    assert out == seq


def test_corruption_rate_one_replaces_every_text_token():
    vocab = Vocabulary.build("abc")
    seq = TokenSequence.from_text("<P>ab c</P>")
    out = teacher_force_corrupt(seq, 1.0, np.random.default_rng(0), vocab)
    assert len(out) == len(seq)
    text_tokens = {vocab.token(i) for i in vocab.text_ids}
    for before, after in zip(seq, out):
        if is_tag(before) or before in SPECIALS:
            assert after == before
        else:
            assert after != before
            assert after in text_tokens


def test_corruption_rate_range():
    vocab = Vocabulary.build("ab")
    with pytest.raises(ParameterError):
        teacher_force_corrupt(TokenSequence.from_text("a"), 1.5,
                              np.random.default_rng(0), vocab)


def _flat_weights(**kw):
    flat = LossModulation(gamma=0.0, delta=0.0, theta=0.5)
    kw.setdefault("layout", flat)
    kw.setdefault("text", flat)
    return LossWeights(lambda_layout=2.0, lambda_text=2.0, **kw)


def test_split_positions():
    vocab = Vocabulary.build("ab")
    targets = vocab.encode("<S>ab</S>", sot=False)
    assert split_positions(targets, vocab.tag_ids) == ([0, 3], [1, 2, 4])


def test_confident_correct_logits_cost_nothing():
    vocab = Vocabulary.build("ab")
    targets = vocab.encode("<S>ab</S>", sot=False)
    logits = np.zeros((len(targets), len(vocab)))
    logits[np.arange(len(targets)), targets] = 60.0
    comps = composite_loss(Tensor(logits), targets, Tensor(0.0),
                           _flat_weights(lambda_c=0.0), 0.0, vocab.tag_ids)
    assert comps.total.item() < 1e-12


def test_without_complexity_term_total_is_sum():
    vocab = Vocabulary.build("ab")
    targets = vocab.encode("<S>ab</S>", sot=False)
    logits = Tensor(np.random.default_rng(0).standard_normal(
        (len(targets), len(vocab))
    ))
    comps = composite_loss(logits, targets, Tensor(0.7),
                           _flat_weights(lambda_c=0.0), 0.0, vocab.tag_ids)
    assert comps.lambda_layout == comps.lambda_text == 1.0
    assert comps.total.item() == pytest.approx(
        comps.layout.item() + comps.text.item()
    )
    assert comps.complexity.item() == 0.0


def test_uniform_logits_give_log_vocab():
    vocab = Vocabulary.build("ab")
    targets = vocab.encode("<S>ab</S>", sot=False)
    comps = composite_loss(
        Tensor(np.zeros((len(targets), len(vocab)))), targets, Tensor(0.25),
        _flat_weights(lambda_c=1.0, lambda_reg=0.0), 0.25, vocab.tag_ids,
    )
    assert comps.layout.item() == pytest.approx(np.log(len(vocab)))
    assert comps.text.item() == pytest.approx(np.log(len(vocab)))
    assert comps.complexity.item() == 0.0


def test_composite_loss_contracts():
    vocab = Vocabulary.build("ab")
    with pytest.raises(ContractError):
        composite_loss(Tensor(np.zeros((0, 20))), [], Tensor(0.0),
                       LossWeights(), 0.0, vocab.tag_ids)
    with pytest.raises(ContractError):
        composite_loss(Tensor(np.zeros((2, 20))), [5, 6, 2], Tensor(0.0),
                       LossWeights(), 0.0, vocab.tag_ids)


def test_complexity_loss():
    assert complexity_loss(Tensor(0.3), 0.25).item() == pytest.approx(0.0025)
    loss = complexity_loss(Tensor(0.3), 0.25, Tensor(2.0), lambda_reg=0.01)
    assert loss.item() == pytest.approx(0.0225)


def test_gradient_penalty_of_linear_score():
    w = np.array([[1.0, -2.0], [3.0, 4.0]])

    def score(x):
        return ops.sum(ops.mul(x, w))

    image = np.zeros((2, 2))
    penalty = gradient_penalty(score, image, 2, 1e-3, pixels=[0, 1])
    assert penalty.item() == pytest.approx(6.0)
    full = gradient_penalty(score, image, 4, 1e-3, pixels=[0, 1, 2, 3])
    assert full.item() == pytest.approx(10.0)
    assert gradient_penalty(score, image, 0, 1e-3).item() == 0.0


def _line_model(cfg, seed=0):
    examples = level_examples(cfg, "line")
    vocab = default_vocabulary(cfg, examples)
    return HandModel(cfg, vocab, "line", seed=seed), examples


def test_transfer_same_architecture_is_exact(micro_cfg):
    source, _ = _line_model(micro_cfg, seed=0)
    target = HandModel(micro_cfg, source.vocab, "paragraph", seed=1)
    report = transfer_weights(source, target)
    assert report.initialized == []
    assert report.dropped == []
    expected = source.state_dict()
    for name, value in target.state_dict().items():
        assert np.array_equal(value, expected[name]), name


def test_transfer_into_wider_encoder(micro_cfg):
    source, _ = _line_model(micro_cfg)
    wide_cfg = micro_cfg.override("model.channels=16")
    target = HandModel(wide_cfg, source.vocab, "line", seed=1)
    report = transfer_weights(source.state_dict(), target)
    assert any(n.startswith("encoder.stem.") for n in report.copied)
    assert any(n.startswith("decoder.") for n in report.copied)
    assert any(n.startswith("encoder.projection") for n in report.initialized)
    assert any(n.startswith("encoder.octave") for n in report.initialized)


def test_transfer_reports_dropped_names(micro_cfg):
    target, _ = _line_model(micro_cfg)
    report = transfer_weights({"legacy.weight": np.zeros(3)}, target)
    assert report.copied == []
    assert report.dropped == ["legacy.weight"]


def test_train_step_accumulates_gradients(micro_cfg):
    model, examples = _line_model(micro_cfg)
    ex = examples[0]
    targets = target_ids(model.vocab, ex.label)
    model.zero_grad()
    comps, out = train_step(
        model, ex.image, targets, None, LossWeights.from_config(
            micro_cfg.training
        ), 1.0, 0.0, 1.0, 0, micro_cfg.training, np.random.default_rng(0),
    )
    assert np.isfinite(comps.total.item())
    assert out.logits.shape == (len(targets), len(model.vocab))
    assert 0.0 < out.complexity.item() < 1.0
    assert np.any(model.decoder.output.weight.grad != 0.0)
    assert np.any(model.encoder.stem.fcn[0].conv.weight.grad != 0.0)


@pytest.mark.slow
def test_single_example_overfits(micro_cfg):
    model, examples = _line_model(micro_cfg)
    ex = examples[0]
    targets = target_ids(model.vocab, ex.label)
    weights = LossWeights(lambda_c=0.0)
    optim = Adam(model.parameters(), lr=0.01)
    model.train()
    losses = []
    for _ in range(40):
        optim.zero_grad()
        comps, _ = train_step(
            model, ex.image, targets, None, weights, 1.0, 0.0, 1.0, 0,
            micro_cfg.training, np.random.default_rng(0),
        )
        optim.step()
        losses.append(comps.text.item())
    assert losses[-1] < 0.5 * losses[0]


@pytest.mark.slow
def test_micro_curriculum(micro_cfg):
    out = micro_cfg.training.out_dir
    result = curriculum_train(micro_cfg)
    assert len(result.checkpoints) == 2
    for ckpt in result.checkpoints:
        assert os.path.exists(ckpt + ".json")
        assert os.path.exists(ckpt + ".bin")
    assert result.transfers[0].initialized == []
    line_final = result.final_states["line"]
    for name, value in result.initial_states["paragraph"].items():
        assert np.array_equal(value, line_final[name]), name
    with open(os.path.join(out, "train_log.jsonl")) as f:
        records = [json.loads(line) for line in f]
    epochs = [r for r in records if "epoch" in r]
    assert [r["level"] for r in epochs] == ["line", "paragraph"]
    assert [r["batch_size"] for r in epochs] == [2, 1]
    assert set(result.eval_cer) == {"line", "paragraph"}


@pytest.mark.slow
def test_curriculum_is_deterministic(micro_cfg, tmp_path):
    runs = []
    for name in ("a", "b"):
        result = curriculum_train(micro_cfg, out_dir=str(tmp_path / name))
        runs.append([r["loss"] for r in result.history])
        runs.append(result.final_states["paragraph"])
    assert runs[0] == runs[2]
    for name, value in runs[1].items():
        assert np.array_equal(value, runs[3][name]), name


@pytest.mark.slow
def test_pretrain_writes_checkpoint(micro_cfg):
    model, history, path = pretrain_ctc(micro_cfg)
    assert len(history) == 1
    assert np.isfinite(history[0])
    assert os.path.exists(path)
    loaded = HandModel.load(path)
    assert loaded.vocab.to_list() == model.vocab.to_list()


def test_train_step_gradients_scale_with_curriculum_weight(micro_cfg):
    model, examples = _line_model(micro_cfg)
    ex = examples[0]
    targets = target_ids(model.vocab, ex.label)
    weights = LossWeights.from_config(micro_cfg.training)
    grads = []
    for alpha_l in (0.5, 1.0):
        model.zero_grad()
        train_step(
            model, ex.image, targets, None, weights, alpha_l, 0.25, 1.0, 0,
            micro_cfg.training, np.random.default_rng(3),
        )
        grads.append({
            name: None if p.grad is None else p.grad.copy()
            for name, p in model.named_parameters()
        })
    half, full = grads
    assert any(g is not None and np.any(g != 0.0) for g in full.values())
    for name, g in full.items():
        if g is None:
            assert half[name] is None, name
            continue
        assert np.allclose(g, 2.0 * half[name], rtol=1e-9, atol=1e-12), name


@pytest.mark.slow
def test_three_level_curriculum(micro_cfg):
    micro_cfg.training.levels = ["line", "paragraph", "single_page"]
    result = curriculum_train(micro_cfg)
    assert len(result.checkpoints) == 3
    assert len(result.transfers) == 2
    names = ["line", "paragraph", "single_page"]
    for report, prev, level in zip(result.transfers, names, names[1:]):
        assert report.copied
        for name in report.copied:
            assert np.array_equal(
                result.initial_states[level][name],
                result.final_states[prev][name],
            ), name
    levels = [r["level"] for r in result.history]
    assert levels == names


@pytest.mark.slow
@pytest.mark.smoke
def test_line_recognition_smoke(tmp_path):
    cfg = RunConfig.load(os.path.join(CONF_DIR, "smoke.json"))
    cfg.training.out_dir = str(tmp_path / "smoke")
    result = curriculum_train(cfg)
    assert result.eval_cer["line"] is not None
    assert result.eval_cer["line"] <= 0.10


def test_pretrain_divergence_names_last_checkpoint(micro_cfg, monkeypatch):
    micro_cfg.training.pretrain_epochs = 2
    real_loss = curriculum.ctc_loss
    calls = []

    def diverging_loss(*args, **kwargs):
        calls.append(1)
        if len(calls) > micro_cfg.training.pretrain_samples:
            return Tensor(float("nan"))
        return real_loss(*args, **kwargs)

    monkeypatch.setattr(curriculum, "ctc_loss", diverging_loss)
    with pytest.raises(DivergenceError) as e:
        pretrain_ctc(micro_cfg)
    path = e.value.last_good_checkpoint
    assert path is not None
    assert os.path.exists(path)
    assert HandModel.load(path).level == "line"
