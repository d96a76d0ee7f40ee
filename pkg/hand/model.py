#!/usr/bin/env python3
"""
The full recognition network for one scale level.

    image -> encoder -> first pass (f1, warmup-scaled PE)
          -> complexity score C from the stem map
          -> feature gate(f1, C) -> second pass f2
          -> decoder memory f1 + f2 -> fused feature levels -> decoder
"""
import logging
from collections import namedtuple

from .decoder import Decoder, feature_levels
from .encoder import Encoder
from .lib.asserts import assert_type
from .lib.rng import RngStreams
from .msap import Msap, first_pass
from .tensor import ops
from .tensor.checkpoint import load_checkpoint, save_checkpoint
from .tensor.nn import Module
from .tensor.tensor import no_grad
from .tokens import EOT_ID, Vocabulary

log = logging.getLogger(__name__)

ModelOutput = namedtuple(
    "ModelOutput", "logits complexity encoded memory factors"
)


class HandModel(Module):
    """Encoder, MSAP and decoder sharing one parameter namespace."""

    def __init__(self, cfg, vocab, level, seed=0):
        assert_type(vocab, Vocabulary)
        self.cfg = cfg
        self.vocab = vocab
        self.level = level
        streams = RngStreams(seed)
        self._streams = streams
        init = streams.stream("init", level)
        mcfg = cfg.model
        dcfg = mcfg.decoder_config()
        self.encoder = Encoder(
            mcfg.encoder_config(level), init,
            dropout_rng=streams.stream("dropout", "encoder"),
        )
        self.msap = Msap(
            mcfg.stem_channels[-1], mcfg.d_model, mcfg.num_heads, init,
            cfg=cfg.msap, dropout_rng=streams.stream("dropout", "msap"),
            k_mem=mcfg.k_mem, sparse_window=mcfg.sparse_window,
            anchor_every=mcfg.anchor_every, lambda_mem=mcfg.lambda_mem,
            lambda_sparse=mcfg.lambda_sparse,
        )
        self.decoder = Decoder(dcfg, len(vocab), init)

    def encode(self, image, epoch=0):
        """Encoder side; returns (memory, C, EncoderOutput, factors)."""
        encoded, f1, _ = first_pass(
            self.encoder, image, epoch, self.msap.schedule
        )
        c = self.msap.assess_complexity(encoded.f1, self.level)
        f1 = self.msap.select_features(f1, c)
        f2, factors = self.msap.second_pass(f1, c)
        memory = ops.add(f1, f2)
        return memory, c, encoded, factors

    def feature_levels(self, memory, encoded):
        _, h, w = encoded.f5.shape
        return feature_levels(memory, h, w, self.decoder.cfg.fusion_levels)

    def forward(self, image, target_ids, epoch=0, input_ids=None):
        """Teacher-forced logits for target_ids (ending with <eot>).

        input_ids replaces the shifted targets as decoder input.
        """
        memory, c, encoded, factors = self.encode(image, epoch)
        levels = self.feature_levels(memory, encoded)
        logits, _ = self.decoder.decode_sequence(
            levels, mode="teacher_forced", targets=target_ids,
            vocab=self.vocab, inputs=input_ids,
        )
        return ModelOutput(logits, c, encoded, memory, factors)

    def complexity(self, image):
        """C(x) from the stem alone (used by the gradient penalty)."""
        return self.msap.assess_complexity(
            self.encoder.stem(image), self.level
        )

    def decode(self, image, max_len=None, epoch=None):
        """Greedy decode in eval mode; returns (TokenSequence, C)."""
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                if epoch is None:
                    epoch = self.cfg.msap.warmup_epochs
                memory, c, encoded, _ = self.encode(image, epoch)
                levels = self.feature_levels(memory, encoded)
                _, seq = self.decoder.decode_sequence(
                    levels, max_len=max_len, mode="greedy", vocab=self.vocab
                )
        finally:
            self.train(was_training)
        return seq, float(c.item())

    def save(self, path, extra=None):
        meta = {
            "config": self.cfg.to_dict(),
            "vocab": self.vocab.to_list(),
            "level": self.level,
        }
        meta.update(extra or {})
        return save_checkpoint(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path, cfg=None):
        """Rebuild a model from a checkpoint written by save()."""
        from .config import RunConfig
        params, extra = load_checkpoint(path)
        if cfg is None:
            cfg = RunConfig.from_dict(extra["config"])
        model = cls(cfg, Vocabulary(extra["vocab"]), extra["level"])
        model.load_state_dict(params)
        model.eval()
        return model


def target_ids(vocab, seq):
    """Decoder targets for a TokenSequence: token ids followed by <eot>."""
    return seq.to_ids(vocab) + [EOT_ID]
