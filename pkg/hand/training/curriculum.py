#!/usr/bin/env python3
"""
CTC pre-training and the multi-level curriculum.

The curriculum walks the configured scale levels in order. Each level
builds a fresh `HandModel`, copies every shape-compatible parameter from
the previous level, then trains for ``epochs_per_level`` epochs:

    for each epoch e:
        C_l   <- mean complexity over the level's images
        a_l   <- curriculum weight (linear ramp over the level's epochs)
        for each batch of size B_l:
            augment, corrupt teacher-forcing inputs,
            first pass -> second pass -> decoder,
            a_l * composite loss, Adam step
        decay the learning rate, advance the positional warmup
        keep the best epoch as ``<out>/level_<k>_<name>``

Every epoch appends one JSON record to ``<out>/train_log.jsonl``.
"""
import json
import logging
import math
import os
from collections import namedtuple

import numpy as np
from tqdm import tqdm

from ..encoder import SCALE_LEVELS
from ..lib.errors import (
    DivergenceError, InfeasibleTargetError, ParameterError, UndefinedRateError
)
from ..lib.rng import RngStreams
from ..metrics import error_rate
from ..model import HandModel, target_ids
from ..tensor import ops
from ..tensor.nn import Linear, Module
from ..tensor.optim import Adam
from ..tensor.tensor import Tape, no_grad
from ..tokens import (
    PAD_ID, SOT_ID, SPECIALS, TokenSequence, Vocabulary, is_tag
)
from .ctc import ctc_loss, greedy_collapse
from .data import Example, read_manifest
from .losses import (
    LossWeights, complexity_target, composite_loss, gradient_penalty
)
from .synth import add_noise, generate_synthetic, synth_alphabet

log = logging.getLogger(__name__)

CTC_BLANK = PAD_ID

TransferReport = namedtuple("TransferReport", "copied initialized dropped")

CurriculumLevel = namedtuple("CurriculumLevel", "number name epochs")

EpochStats = namedtuple(
    "EpochStats", "total layout text complexity c_mean"
)


class CurriculumResult:
    """What a curriculum run leaves behind."""

    def __init__(self):
        self.checkpoints = []
        self.transfers = []
        self.history = []
        self.initial_states = {}
        self.final_states = {}
        self.eval_cer = {}
        self.model = None


def curriculum_levels(tcfg):
    """CurriculumLevel per configured level, numbered by scale.

    >>> from hand.config import TrainingConfig
    >>> [tuple(level) for level in curriculum_levels(
    ...     TrainingConfig(levels=["line", "single_page"]))]
    [(1, 'line', 2), (3, 'single_page', 2)]
    """
    levels = []
    for name in tcfg.levels:
        if name not in SCALE_LEVELS:
            raise ParameterError("unknown level {!r}".format(name))
        levels.append(CurriculumLevel(
            SCALE_LEVELS.index(name) + 1, name, tcfg.epochs_per_level
        ))
    numbers = [lvl.number for lvl in levels]
    if numbers != sorted(set(numbers)):
        raise ParameterError(
            "curriculum levels must be strictly ordered: {}".format(
                tcfg.levels
            )
        )
    return levels


def adaptive_batch_size(b0, gamma, level, b_min):
    """max(floor(b0 * gamma ** level), b_min)

    >>> [adaptive_batch_size(16, 0.5, k, 2) for k in (0, 1, 3, 5)]
    [16, 8, 2, 2]
    """
    if not 0.0 < gamma < 1.0:
        raise ParameterError("gamma must be in (0, 1), got {}".format(gamma))
    if b_min < 1 or b0 < b_min:
        raise ParameterError(
            "need b0 >= b_min >= 1, got b0={} b_min={}".format(b0, b_min)
        )
    return max(int(math.floor(b0 * gamma ** level)), b_min)


def curriculum_weight(epoch, epochs, start=0.5, end=1.0):
    """Linear ramp from start (first epoch) to end (last epoch).

    >>> [curriculum_weight(e, 3) for e in range(3)]
    [0.5, 0.75, 1.0]
    >>> curriculum_weight(0, 1)
    1.0
    """
    if epochs <= 1:
        return float(end)
    return float(start + (end - start) * epoch / (epochs - 1))


def teacher_force_corrupt(targets, rate, rng, vocab):
    """Replace each text token with probability rate.

    Specials and layout tags are kept. A replacement is drawn uniformly
    from the vocabulary's other text tokens.
    """
    if not 0.0 <= rate <= 1.0:
        raise ParameterError("corruption rate must be in [0, 1]")
    text_tokens = [vocab.token(i) for i in vocab.text_ids]
    out = []
    for token in targets:
        if token in SPECIALS or is_tag(token) or rate == 0.0:
            out.append(token)
            continue
        if rng.random() >= rate:
            out.append(token)
            continue
        choices = [t for t in text_tokens if t != token]
        if not choices:
            out.append(token)
            continue
        out.append(choices[int(rng.integers(0, len(choices)))])
    return TokenSequence(out, getattr(targets, "truncated", False))


def transfer_weights(source, target):
    """Copy every parameter of source whose name and shape match target.

    source is a Module or a name -> array dict; target keeps its fresh
    initialization elsewhere.
    """
    if isinstance(source, Module):
        source = source.state_dict()
    own = dict(target.named_parameters())
    copied, initialized = [], []
    for name, param in own.items():
        value = source.get(name)
        if value is not None and np.shape(value) == param.shape:
            param.data = np.array(value, dtype=np.float64, copy=True)
            param.zero_grad()
            copied.append(name)
        else:
            initialized.append(name)
    dropped = sorted(set(source) - set(own))
    log.debug(
        "transfer: %d copied, %d initialized, %d dropped",
        len(copied), len(initialized), len(dropped)
    )
    return TransferReport(sorted(copied), sorted(initialized), dropped)


class CtcHead(Module):
    """Temporary frame classifier over the height-averaged f5 columns."""

    def __init__(self, channels, vocab_size, rng):
        self.proj = Linear(channels, vocab_size, rng)

    def forward(self, f5):
        frames = ops.transpose(ops.mean(f5, axis=1), (1, 0))
        return ops.log_softmax(self.proj(frames), axis=-1)


def default_vocabulary(cfg, examples=()):
    """Vocabulary file if configured, else synthetic alphabet plus labels."""
    if cfg.data.vocab:
        return Vocabulary.load(cfg.data.vocab)
    chars = set(synth_alphabet(cfg.synth))
    for ex in examples:
        chars.update(ex.label.text())
    return Vocabulary.build("".join(sorted(chars)))


def level_examples(cfg, level, split="train"):
    """Examples of one level from the manifest or the synthetic generator."""
    tcfg = cfg.training
    manifest = cfg.data.manifest if split == "train" \
        else cfg.data.eval_manifest
    if manifest and not cfg.data.use_synthetic:
        records = read_manifest(manifest, level)
        return [Example.from_record(r) for r in records]
    count = tcfg.samples_per_level if split == "train" else tcfg.eval_samples
    seed = RngStreams(tcfg.seed).child_seed("data", split)
    samples = generate_synthetic(cfg.synth, level, count, seed)
    return [Example.from_sample(s) for s in samples]


def _batches(order, size):
    for i in range(0, len(order), size):
        yield order[i:i + size]


def _finite(value):
    return bool(np.isfinite(value))


def _write_record(path, record):
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(record, sort_keys=True))
        f.write("\n")


def pretrain_ctc(cfg, vocab=None, examples=None, out_dir=None,
                 progress=False):
    """CTC pre-training of the line-level encoder.

    The head is discarded afterwards; the returned model's encoder holds
    the pre-trained weights and is saved to ``<out>/pretrain``.

    Returns (HandModel, list of per-epoch mean losses, checkpoint path).
    """
    tcfg = cfg.training
    out_dir = out_dir or tcfg.out_dir
    streams = RngStreams(tcfg.seed)
    if examples is None:
        samples = generate_synthetic(
            cfg.synth, "line", tcfg.pretrain_samples,
            streams.child_seed("data", "pretrain"),
        )
        examples = [Example.from_sample(s) for s in samples]
    vocab = vocab or default_vocabulary(cfg, examples)
    model = HandModel(cfg, vocab, "line", seed=tcfg.seed)
    head = CtcHead(
        model.encoder.cfg.feature_channels, len(vocab),
        streams.stream("init", "ctc_head"),
    )
    params = model.encoder.parameters() + head.parameters()
    optim = Adam(params, lr=tcfg.lr, warmup_steps=tcfg.warmup_steps,
                 decay=tcfg.lr_decay)
    model.train()
    history = []
    ckpt = os.path.join(out_dir, "pretrain")
    path = None
    for epoch in tqdm(range(tcfg.pretrain_epochs), desc="pretrain",
                      disable=not progress):
        order = streams.stream("order", "pretrain", epoch).permutation(
            len(examples)
        )
        losses = []
        for idx in order:
            ex = examples[int(idx)]
            target = ex.label.without_specials().to_ids(vocab)
            optim.zero_grad()
            with Tape() as tape:
                f5 = model.encoder(ex.image).f5
                try:
                    loss = ctc_loss(head(f5), target, blank=CTC_BLANK)
                except InfeasibleTargetError as e:
                    log.warning("skipping sample %d: %s", int(idx), e)
                    continue
                if not _finite(loss.item()):
                    raise DivergenceError(
                        "pretrain epoch {}: ctc loss is {}".format(
                            epoch, loss.item()
                        ),
                        last_good_checkpoint=path,
                    )
                tape.backward(loss)
            optim.step()
            losses.append(loss.item())
        optim.end_epoch()
        mean = float(np.mean(losses)) if losses else float("nan")
        history.append(mean)
        log.info("pretrain epoch %d: ctc %.4f", epoch, mean)
        path = model.save(ckpt, {"stage": "pretrain", "epoch": epoch})
    if path is None:
        path = model.save(ckpt, {"stage": "pretrain"})
    return model, history, path


def ctc_transcribe(encoder, head, image, vocab):
    """Best-path transcription through a CTC head."""
    with no_grad():
        log_probs = head(encoder(image).f5)
    ids = greedy_collapse(np.argmax(log_probs.data, axis=-1), CTC_BLANK)
    return TokenSequence.from_ids(ids, vocab)


def assess_complexity(model, examples):
    """Mean complexity score over examples, without gradients."""
    if not examples:
        return 0.0
    with no_grad():
        return float(np.mean([
            model.complexity(ex.image).item() for ex in examples
        ]))


def evaluate_cer(model, examples):
    """Character error rate of greedy decoding; None if undefined."""
    if not examples:
        return None
    preds = [model.decode(ex.image).text() for ex in examples]
    refs = [ex.label.text() for ex in examples]
    try:
        return error_rate(preds, refs, "char")
    except UndefinedRateError:
        return None


def train_step(model, image, targets, inputs, weights, alpha_l, c_target,
               scale, epoch, tcfg, rng):
    """Forward and backward for one example; gradients accumulate.

    Returns the LossComponents of the unscaled composite loss.
    """
    penalty_on = (
        weights.lambda_c and weights.lambda_reg and tcfg.grad_penalty_pixels
    )
    with Tape() as tape:
        out = model(image, targets, epoch=epoch, input_ids=inputs)
        penalty = None
        if penalty_on:
            penalty = gradient_penalty(
                model.complexity, image, tcfg.grad_penalty_pixels,
                tcfg.grad_penalty_step, rng=rng,
            )
        comps = composite_loss(
            out.logits, targets, out.complexity, weights, c_target,
            model.vocab.tag_ids, penalty,
        )
        if not _finite(comps.total.item()):
            return comps, out
        tape.backward(ops.mul(comps.total, alpha_l * scale))
    return comps, out


def curriculum_train(cfg, vocab=None, init_state=None, out_dir=None,
                     progress=False):
    """Train every configured level in order.

    Parameters
    ----------
    cfg : RunConfig
    vocab : Vocabulary, optional
        Defaults to `default_vocabulary`.
    init_state : dict or Module, optional
        Weights transferred into the first level (e.g. a pre-trained
        encoder).
    out_dir : str, optional
        Defaults to ``cfg.training.out_dir``.
    progress : bool
        Show tqdm progress bars.

    Returns
    -------
    CurriculumResult
    """
    tcfg = cfg.training
    out_dir = out_dir or tcfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "train_log.jsonl")
    open(log_path, "w").close()

    streams = RngStreams(tcfg.seed)
    weights = LossWeights.from_config(tcfg)
    levels = curriculum_levels(tcfg)
    data = {
        lvl.name: level_examples(cfg, lvl.name, "train") for lvl in levels
    }
    vocab = vocab or default_vocabulary(
        cfg, [ex for exs in data.values() for ex in exs]
    )
    result = CurriculumResult()
    previous = init_state
    last_good = None
    global_epoch = 0

    for k, level in enumerate(levels):
        examples = data[level.name]
        if not examples:
            raise ParameterError("no examples for level {}".format(level.name))
        model = HandModel(cfg, vocab, level.name, seed=tcfg.seed)
        if previous is not None:
            report = transfer_weights(previous, model)
            result.transfers.append(report)
            log.info(
                "%s: transferred %d parameters, %d initialized",
                level.name, len(report.copied), len(report.initialized)
            )
        result.initial_states[level.name] = model.state_dict()

        batch_size = adaptive_batch_size(
            tcfg.batch_base, tcfg.batch_gamma, k, tcfg.batch_min
        )
        c_target = complexity_target(level.number, tcfg.complexity_targets)
        optim = Adam(model.parameters(), lr=tcfg.lr,
                     warmup_steps=tcfg.warmup_steps, decay=tcfg.lr_decay)
        ckpt = os.path.join(out_dir, "level_{}_{}".format(k + 1, level.name))
        best = None
        model.train()

        for e in tqdm(range(level.epochs), desc=level.name,
                      disable=not progress):
            c_mean = assess_complexity(model, examples)
            alpha_l = curriculum_weight(
                e, level.epochs, tcfg.curriculum_weight_start,
                tcfg.curriculum_weight_end,
            )
            order = streams.stream("order", level.name, e).permutation(
                len(examples)
            )
            sums = np.zeros(4)
            seen = 0
            for batch in _batches(order.tolist(), batch_size):
                optim.zero_grad()
                for idx in batch:
                    ex = examples[idx]
                    rng = streams.stream("sample", level.name, e, idx)
                    image = add_noise(ex.image, tcfg.noise_sigma, rng)
                    targets = target_ids(vocab, ex.label)
                    corrupted = teacher_force_corrupt(
                        ex.label, tcfg.teacher_forcing_error, rng, vocab
                    )
                    inputs = [SOT_ID] + corrupted.to_ids(vocab)
                    comps, _ = train_step(
                        model, image, targets, inputs, weights, alpha_l,
                        c_target, 1.0 / len(batch), global_epoch, tcfg, rng,
                    )
                    total = comps.total.item()
                    if not _finite(total):
                        raise DivergenceError(
                            "{} epoch {}: loss is {}".format(
                                level.name, e, total
                            ),
                            last_good_checkpoint=last_good,
                        )
                    sums += [total, comps.layout.item(), comps.text.item(),
                             comps.complexity.item()]
                    seen += 1
                optim.step()
            optim.end_epoch()

            means = sums / max(1, seen)
            stats = EpochStats(*[float(v) for v in means], c_mean)
            record = {
                "epoch": global_epoch,
                "level": level.name,
                "level_epoch": e,
                "loss": {
                    "total": stats.total,
                    "layout": stats.layout,
                    "text": stats.text,
                    "complexity": stats.complexity,
                },
                "c_mean": c_mean,
                "alpha_l": alpha_l,
                "batch_size": batch_size,
                "lr": optim.lr,
            }
            _write_record(log_path, record)
            result.history.append(record)
            log.info(
                "%s epoch %d: loss %.4f (layout %.4f text %.4f c %.4f) "
                "C %.3f", level.name, e, stats.total, stats.layout,
                stats.text, stats.complexity, c_mean
            )
            if best is None or stats.total < best:
                best = stats.total
                model.save(ckpt, {
                    "stage": "curriculum", "epoch": global_epoch,
                    "loss": stats.total,
                })
                last_good = ckpt
            global_epoch += 1

        result.checkpoints.append(ckpt)
        result.final_states[level.name] = model.state_dict()
        cer = evaluate_cer(model, level_examples(cfg, level.name, "eval"))
        result.eval_cer[level.name] = cer
        _write_record(log_path, {"level": level.name, "eval_cer": cer})
        log.info("%s: held-out CER %s", level.name, cer)
        previous = model
        result.model = model

    return result


if __name__ == "__main__":
    import doctest
    failure_count, test_count = doctest.testmod()
    assert test_count > 0
    assert failure_count == 0, "Doctests failed!"
