"""Checkpoint directories: manifest.json plus one flat binary per tensor.

Tensors are row-major little-endian float64; masks are 0/1 byte tensors in
the same layout. The manifest records shapes, the layer list, nonlinearity
and whatever run metadata the caller supplies.
"""

from __future__ import annotations

import json
import os

import numpy as np


def _tensor_file(name: str) -> str:
    return name.replace(".", "_") + ".bin"


def save_checkpoint(directory, tensors: dict, masks: dict | None = None,
                    meta: dict | None = None) -> None:
    os.makedirs(directory, exist_ok=True)
    manifest = {"tensors": {}, "masks": {}, "meta": meta or {}}
    for name, arr in tensors.items():
        fname = _tensor_file(name)
        manifest["tensors"][name] = {"file": fname, "shape": list(arr.shape),
                                     "dtype": "float64"}
        with open(os.path.join(directory, fname), "wb") as fh:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    for name, mask in (masks or {}).items():
        fname = "mask_" + _tensor_file(name)
        manifest["masks"][name] = {"file": fname, "shape": list(mask.shape),
                                   "dtype": "uint8"}
        with open(os.path.join(directory, fname), "wb") as fh:
            fh.write(np.ascontiguousarray(mask, dtype=np.uint8).tobytes())
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def load_checkpoint(directory):
    """Returns (tensors, masks, meta)."""
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    tensors, masks = {}, {}
    for name, info in manifest["tensors"].items():
        raw = np.fromfile(os.path.join(directory, info["file"]), dtype="<f8")
        tensors[name] = raw.reshape(info["shape"]).astype(np.float64)
    for name, info in manifest.get("masks", {}).items():
        raw = np.fromfile(os.path.join(directory, info["file"]), dtype=np.uint8)
        masks[name] = raw.reshape(info["shape"])
    return tensors, masks, manifest.get("meta", {})
