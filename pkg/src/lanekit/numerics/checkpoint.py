"""Checkpoint serialization: JSON manifest plus one little-endian f32 blob.

The manifest lists every array's name, shape and byte offset into the blob,
and carries a free-form metadata dict (step counter, config, ...). Arrays
are stored and restored as float32, so a save/load round trip of float32
parameters is bit-exact. Writes go to temp files renamed into place.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

MANIFEST_NAME = "manifest.json"
BLOB_NAME = "weights.bin"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, arrays: dict, meta: dict | None = None) -> Path:
    """Write `arrays` (name -> ndarray) and `meta` under directory `path`."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(data.shape),
                        "offset": offset})
        chunks.append(data.tobytes())
        offset += data.nbytes
    manifest = {"entries": entries, "blob_bytes": offset,
                "meta": meta or {}}

    blob_tmp = path / (BLOB_NAME + ".tmp")
    blob_tmp.write_bytes(b"".join(chunks))
    os.replace(blob_tmp, path / BLOB_NAME)
    man_tmp = path / (MANIFEST_NAME + ".tmp")
    man_tmp.write_text(json.dumps(manifest, indent=1))
    os.replace(man_tmp, path / MANIFEST_NAME)
    return path


def load_checkpoint(path) -> tuple[dict, dict]:
    """Read back (arrays, meta). Raises CheckpointError on any corruption."""
    path = Path(path)
    man_path = path / MANIFEST_NAME
    blob_path = path / BLOB_NAME
    if not man_path.is_file() or not blob_path.is_file():
        raise CheckpointError(f"checkpoint incomplete at {path}")
    try:
        manifest = json.loads(man_path.read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"unreadable manifest {man_path}: {e}") from e
    blob = blob_path.read_bytes()
    if len(blob) != manifest.get("blob_bytes"):
        raise CheckpointError(
            f"blob length {len(blob)} does not match manifest "
            f"({manifest.get('blob_bytes')})")
    arrays = {}
    for entry in manifest["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(blob):
            raise CheckpointError(
                f"entry '{entry['name']}' overruns blob ({end} > {len(blob)})")
        arrays[entry["name"]] = np.frombuffer(
            blob, dtype="<f4", count=count, offset=start).reshape(shape).copy()
    return arrays, manifest.get("meta", {})
