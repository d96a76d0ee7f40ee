#!/usr/bin/env python3

import pytest

from hand.config import RunConfig

MICRO = {
    "model": {
        "d_model": 8, "num_heads": 2, "num_layers": 1, "ffn_hidden": 16,
        "k_mem": 2, "sparse_window": 4, "anchor_every": 2,
        "fusion_levels": 2, "stem_channels": [2, 4, 4], "channels": 8,
        "dropout": 0.0, "max_decode_len": 8,
    },
    "msap": {"hidden": 8, "dropout": 0.0, "warmup_epochs": 2},
    "training": {
        "levels": ["line", "paragraph"], "epochs_per_level": 1,
        "samples_per_level": 2, "eval_samples": 1, "batch_base": 2,
        "batch_min": 1, "lr": 0.01, "grad_penalty_pixels": 2,
        "pretrain_epochs": 1, "pretrain_samples": 2,
    },
    "synth": {
        "alphabet": "ab", "min_chars": 2, "max_chars": 3,
        "line_height": 32, "line_width": 128,
        "paragraph_height": 64, "paragraph_width": 128,
        "page_height": 128, "page_width": 128,
    },
}


@pytest.fixture
def micro_cfg(tmp_path):
    """A model small enough to train a few steps inside a unit test."""
    cfg = RunConfig.from_dict(MICRO)
    cfg.training.out_dir = str(tmp_path / "run")
    return cfg
