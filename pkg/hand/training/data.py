#!/usr/bin/env python3
"""
Images and dataset manifests.

A manifest is a JSON-lines file, one record per sample::

    {"image": "line_0000.png", "label": "abc", "level": "line"}

Image paths are relative to the manifest's directory.
"""
import json
import logging
import os
from collections import namedtuple

import numpy as np
from PIL import Image

from ..lib.errors import ContractError
from ..tokens import TokenSequence

log = logging.getLogger(__name__)

ManifestRecord = namedtuple("ManifestRecord", "image label level")


def pad_to_multiple(image, multiple=32, fill=1.0):
    """Pad [C, H, W] at the bottom/right so H and W divide by multiple.

    >>> pad_to_multiple(np.zeros((3, 30, 33))).shape
    (3, 32, 64)
    """
    _, h, w = image.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    if not ph and not pw:
        return image
    return np.pad(
        image, ((0, 0), (0, ph), (0, pw)), constant_values=fill
    )


def load_image(path, multiple=32):
    """PGM/PNG (grayscale or RGB) -> [3, H, W] float in [0, 1], padded."""
    with Image.open(path) as img:
        if img.mode in ("L", "I", "I;16", "1", "P", "LA"):
            arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
            arr = np.repeat(arr[None], 3, axis=0)
        else:
            arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
            arr = arr.transpose(2, 0, 1)
    return pad_to_multiple(arr, multiple)


def save_ink_png(ink, path):
    """Write an ink map as dark ink on white paper."""
    Image.fromarray((255 - np.asarray(ink, dtype=np.uint8))).save(path)


def write_manifest(path, records):
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(
                {"image": rec.image, "label": rec.label, "level": rec.level},
                ensure_ascii=False, sort_keys=True,
            ))
            f.write("\n")


def read_manifest(path, level=None):
    """Records with image paths resolved against the manifest directory."""
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                rec = ManifestRecord(
                    os.path.join(base, raw["image"]), raw["label"],
                    raw.get("level", "line"),
                )
            except (ValueError, KeyError) as e:
                raise ContractError(
                    "{}:{}: bad manifest record ({})".format(path, lineno, e)
                )
            if level is None or rec.level == level:
                records.append(rec)
    return records


def write_synthetic_dataset(samples, out_dir):
    """PNG per sample plus manifest.jsonl; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    records = []
    for s in samples:
        name = "{}_{:04d}.png".format(s.level, s.index)
        save_ink_png(s.image, os.path.join(out_dir, name))
        records.append(ManifestRecord(name, s.label.to_text(), s.level))
    manifest = os.path.join(out_dir, "manifest.jsonl")
    write_manifest(manifest, records)
    log.info("wrote %d samples to %s", len(records), out_dir)
    return manifest


class Example(namedtuple("Example", "image label level")):
    """One training item: model input [3, H, W] and its TokenSequence."""

    @classmethod
    def from_sample(cls, sample):
        return cls(
            pad_to_multiple(sample.model_input()), sample.label, sample.level
        )

    @classmethod
    def from_record(cls, rec):
        return cls(
            load_image(rec.image), TokenSequence.from_text(rec.label),
            rec.level,
        )


if __name__ == "__main__":
    import doctest
    failure_count, test_count = doctest.testmod()
    assert test_count > 0
    assert failure_count == 0, "Doctests failed!"
