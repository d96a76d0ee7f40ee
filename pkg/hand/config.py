#!/usr/bin/env python3
"""
Run configuration.

One JSON document with the sections ``model``, ``msap``, ``training``,
``synth`` and ``data``. Every key has a default here; unknown keys are
rejected with their dotted path.

>>> cfg = RunConfig.from_dict({"training": {"lr": 0.01}})
>>> cfg.training.lr, cfg.model.d_model
(0.01, 128)
>>> RunConfig.from_dict({"training": {"lr": 0.01, "lrr": 1}})
Traceback (most recent call last):
    ...
hand.lib.errors.ConfigError: unknown configuration key 'training.lrr'
"""
import dataclasses
import json
from dataclasses import dataclass, field
from typing import List, Optional

from .decoder import DecoderConfig
from .encoder import EncoderConfig, SCALE_LEVELS
from .lib.errors import ConfigError, ParameterError
from .msap import FactorParams, ScalingParams


@dataclass
class ModelConfig:
    d_model: int = 128
    num_heads: int = 4
    num_layers: int = 6
    ffn_hidden: int = 256
    k_mem: int = 32
    sparse_window: int = 64
    anchor_every: int = 16
    fusion_levels: int = 2
    stem_channels: List[int] = field(default_factory=lambda: [16, 32, 32])
    # Overrides C_f of every level when set.
    channels: Optional[int] = None
    octave_alpha: float = 0.5
    se_reduction: int = 4
    dropout: float = 0.2
    norm_eps: float = 1e-5
    lambda_mem: float = 0.5
    lambda_sparse: float = 0.5
    max_decode_len: int = 256

    def encoder_config(self, level):
        return EncoderConfig(
            scale_level=level,
            d_model=self.d_model,
            stem_channels=tuple(self.stem_channels),
            octave_alpha=self.octave_alpha,
            se_reduction=self.se_reduction,
            dropout=self.dropout,
            norm_eps=self.norm_eps,
            channels=self.channels,
        )

    def decoder_config(self):
        return DecoderConfig(
            num_layers=self.num_layers,
            d_model=self.d_model,
            num_heads=self.num_heads,
            ffn_hidden=self.ffn_hidden,
            k_mem=self.k_mem,
            sparse_window=self.sparse_window,
            anchor_every=self.anchor_every,
            fusion_levels=self.fusion_levels,
            lambda_mem=self.lambda_mem,
            lambda_sparse=self.lambda_sparse,
            norm_eps=self.norm_eps,
            max_decode_len=self.max_decode_len,
        )


@dataclass
class MsapConfig:
    hidden: int = 128
    dropout: float = 0.2
    alpha0: float = 0.1
    gamma: float = 0.5
    warmup_epochs: int = 150
    alpha: FactorParams = field(default_factory=FactorParams)
    beta: FactorParams = field(default_factory=FactorParams)
    omega: FactorParams = field(default_factory=FactorParams)

    def scaling_params(self):
        return ScalingParams(self.alpha, self.beta, self.omega)


@dataclass
class LossModulation:
    """Sigmoid modulation of a loss weight by the complexity score."""
    gamma: float = 0.5
    delta: float = 4.0
    theta: float = 0.5


@dataclass
class TrainingConfig:
    levels: List[str] = field(default_factory=lambda: list(SCALE_LEVELS))
    epochs_per_level: int = 2
    samples_per_level: int = 16
    eval_samples: int = 8
    batch_base: int = 16
    batch_gamma: float = 0.5
    batch_min: int = 2
    lr: float = 1e-3
    warmup_steps: int = 0
    lr_decay: float = 1.0
    teacher_forcing_error: float = 0.2
    curriculum_weight_start: float = 0.5
    curriculum_weight_end: float = 1.0
    lambda_layout: float = 1.0
    lambda_text: float = 1.0
    lambda_c: float = 0.1
    layout_modulation: LossModulation = field(default_factory=LossModulation)
    text_modulation: LossModulation = field(default_factory=LossModulation)
    lambda_reg: float = 0.01
    grad_penalty_pixels: int = 64
    grad_penalty_step: float = 1e-3
    complexity_targets: Optional[List[float]] = None
    noise_sigma: float = 0.02
    pretrain_epochs: int = 2
    pretrain_samples: int = 16
    seed: int = 0
    out_dir: str = "runs/default"

    def __post_init__(self):
        for level in self.levels:
            if level not in SCALE_LEVELS:
                raise ParameterError("unknown level {!r}".format(level))
        if not 0.0 < self.batch_gamma < 1.0:
            raise ParameterError("batch_gamma must be in (0, 1)")


@dataclass
class SynthConfig:
    alphabet: str = "abcdefghij"
    min_chars: int = 3
    max_chars: int = 8
    line_height: int = 32
    line_width: int = 128
    paragraph_height: int = 64
    paragraph_width: int = 128
    paragraph_lines: List[int] = field(default_factory=lambda: [2, 2])
    page_height: int = 256
    page_width: int = 256
    sections_per_page: List[int] = field(default_factory=lambda: [1, 2])
    lines_per_body: List[int] = field(default_factory=lambda: [1, 3])
    annotation_probability: float = 0.3
    slant: List[float] = field(default_factory=lambda: [-0.3, 0.3])
    stroke_width: List[int] = field(default_factory=lambda: [1, 2])
    baseline_jitter: float = 1.0
    spacing: List[int] = field(default_factory=lambda: [1, 3])


@dataclass
class DataConfig:
    manifest: Optional[str] = None
    eval_manifest: Optional[str] = None
    vocab: Optional[str] = None
    use_synthetic: bool = True


SECTIONS = {
    "model": ModelConfig,
    "msap": MsapConfig,
    "training": TrainingConfig,
    "synth": SynthConfig,
    "data": DataConfig,
}


def _build(cls, data, prefix):
    if not isinstance(data, dict):
        raise ConfigError(
            prefix.rstrip("."), "'{}' must be an object".format(
                prefix.rstrip(".")
            )
        )
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(prefix + key)
        ftype = known[key].type
        if dataclasses.is_dataclass(ftype):
            value = _build(ftype, value, prefix + key + ".")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(prefix.rstrip("."), "{}: {}".format(
            prefix.rstrip("."), e
        ))


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    msap: MsapConfig = field(default_factory=MsapConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    data: DataConfig = field(default_factory=DataConfig)

    @classmethod
    def from_dict(cls, data):
        return _build(cls, data or {}, "")

    @classmethod
    def load(cls, path):
        with open(path) as f:
            try:
                data = json.load(f)
            except ValueError as e:
                raise ConfigError(str(path), "{}: {}".format(path, e))
        return cls.from_dict(data)

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def override(self, assignment):
        """Apply one ``section.key=value`` override and return the result.

        The value is parsed as JSON, falling back to a plain string.

        >>> RunConfig().override("model.d_model=64").model.d_model
        64
        >>> RunConfig().override("data.vocab=v.txt").data.vocab
        'v.txt'
        """
        if "=" not in assignment:
            raise ConfigError(
                assignment, "override {!r} is not key=value".format(assignment)
            )
        path, raw = assignment.split("=", 1)
        try:
            value = json.loads(raw)
        except ValueError:
            value = raw
        data = self.to_dict()
        node = data
        parts = path.strip().split(".")
        for i, part in enumerate(parts[:-1]):
            if not isinstance(node.get(part), dict):
                raise ConfigError(".".join(parts[:i + 1]))
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(path.strip())
        node[parts[-1]] = value
        return RunConfig.from_dict(data)


if __name__ == "__main__":
    import doctest
    failure_count, test_count = doctest.testmod()
    assert test_count > 0
    assert failure_count == 0, "Doctests failed!"
