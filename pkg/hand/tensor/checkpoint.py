#!/usr/bin/env python3
"""
Checkpoint files: a JSON manifest plus a raw float32 blob.

``<path>.json``::

    {"format": 1,
     "parameters": [{"name": ..., "shape": [...], "dtype": "float32",
                     "offset": <bytes>, "nbytes": <bytes>}, ...],
     "extra": {...}}

``<path>.bin`` holds the parameters back to back, little-endian float32,
in manifest order.
"""
import json
import logging
import os

import numpy as np

from ..lib.errors import ContractError

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
BLOB_DTYPE = np.dtype("<f4")


def checkpoint_paths(path):
    path = str(path)
    for suffix in (".json", ".bin"):
        if path.endswith(suffix):
            path = path[:-len(suffix)]
    return path + ".json", path + ".bin"


def save_checkpoint(path, params, extra=None):
    """Write params (name -> array, or a Module) next to path."""
    if hasattr(params, "state_dict"):
        params = params.state_dict()
    manifest_path, blob_path = checkpoint_paths(path)
    directory = os.path.dirname(manifest_path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    records = []
    offset = 0
    with open(blob_path, "wb") as f:
        for name, value in params.items():
            raw = np.ascontiguousarray(value, dtype=BLOB_DTYPE).tobytes()
            records.append({
                "name": name,
                "shape": list(np.shape(value)),
                "dtype": "float32",
                "offset": offset,
                "nbytes": len(raw),
            })
            f.write(raw)
            offset += len(raw)

    manifest = {
        "format": FORMAT_VERSION,
        "parameters": records,
        "extra": extra or {},
    }
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    log.debug(
        "wrote checkpoint %s (%d tensors, %d bytes)",
        manifest_path, len(records), offset
    )
    return manifest_path


def load_checkpoint(path):
    """Return (dict of float64 arrays, extra metadata)."""
    manifest_path, blob_path = checkpoint_paths(path)
    with open(manifest_path) as f:
        manifest = json.load(f)
    if manifest.get("format") != FORMAT_VERSION:
        raise ContractError(
            "{}: unsupported checkpoint format {!r}".format(
                manifest_path, manifest.get("format")
            )
        )
    with open(blob_path, "rb") as f:
        blob = f.read()

    params = {}
    for rec in manifest["parameters"]:
        start, n = rec["offset"], rec["nbytes"]
        if start + n > len(blob):
            raise ContractError(
                "{}: blob too short for {}".format(blob_path, rec["name"])
            )
        arr = np.frombuffer(blob[start:start + n], dtype=BLOB_DTYPE)
        params[rec["name"]] = arr.astype(np.float64).reshape(rec["shape"])
    return params, manifest.get("extra", {})
