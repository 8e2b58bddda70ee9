"""Binary checkpoints: a little-endian float64 ``.bin`` plus a JSON sidecar.

The sidecar lists named segments (offset, shape) into the flat array along
with arbitrary JSON metadata. Keys are sorted, so save -> load -> save gives
identical bytes.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _paths(path):
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".bin", ".json") else path
    return base.with_suffix(".bin"), base.with_suffix(".json")


def save(path, arrays: dict, meta: dict) -> Path:
    """Write ``arrays`` (name -> ndarray) and ``meta``; returns the .bin path."""
    bin_path, json_path = _paths(path)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    segments, chunks, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        segments.append({"name": name, "offset": offset, "shape": list(a.shape)})
        chunks.append(a.ravel())
        offset += a.size
    flat = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f8")
    bin_path.write_bytes(flat.astype("<f8").tobytes())
    side = {"version": FORMAT_VERSION, "segments": segments, "meta": meta}
    json_path.write_text(json.dumps(side, sort_keys=True, indent=1) + "\n")
    return bin_path


def load(path):
    """Returns (arrays, meta). Raises CheckpointError on version or size mismatch."""
    bin_path, json_path = _paths(path)
    try:
        side = json.loads(json_path.read_text())
    except FileNotFoundError:
        raise CheckpointError(f"missing checkpoint sidecar {json_path}") from None
    if side.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint version {side.get('version')} != {FORMAT_VERSION}")
    flat = np.frombuffer(bin_path.read_bytes(), dtype="<f8").astype(np.float64)
    arrays, expected = {}, 0
    for seg in side["segments"]:
        n = int(np.prod(seg["shape"], dtype=np.int64))
        if seg["offset"] != expected or seg["offset"] + n > flat.size:
            raise CheckpointError(f"segment {seg['name']} does not fit the binary payload")
        arrays[seg["name"]] = flat[seg["offset"] : seg["offset"] + n].reshape(seg["shape"]).copy()
        expected += n
    if expected != flat.size:
        raise CheckpointError("binary payload has trailing data")
    return arrays, side["meta"]
