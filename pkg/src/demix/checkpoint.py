"""Checkpoint serialization: a JSON manifest plus a raw little-endian blob.

The manifest lists every tensor with name, shape, dtype, and byte offset into
the companion ``.bin`` file.  Values round-trip bit-exactly (no text
formatting of floats is involved).  Arbitrary JSON-serializable metadata
(model config, training provenance) rides along in the manifest.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np


class CheckpointFormatError(ValueError):
    """The manifest or blob does not match the expected layout."""


_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(path_prefix: str, arrays: dict[str, np.ndarray], meta: dict) -> tuple[str, str]:
    """Write ``<prefix>.json`` and ``<prefix>.bin``; returns both paths."""
    manifest_path = path_prefix + ".json"
    blob_path = path_prefix + ".bin"
    entries = []
    offset = 0
    chunks = []
    for name in arrays:
        arr = arrays[name]
        dtype_name = str(arr.dtype)
        if dtype_name not in _DTYPES:
            raise CheckpointFormatError(f"unsupported dtype {dtype_name} for tensor {name}")
        raw = np.ascontiguousarray(arr).astype(_DTYPES[dtype_name], copy=False).tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": dtype_name,
            "offset": offset,
            "nbytes": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = {
        "format": "demix-checkpoint",
        "version": 1,
        "blob": os.path.basename(blob_path),
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "meta": meta,
        "tensors": entries,
    }
    with open(blob_path, "wb") as f:
        f.write(blob)
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=1)
        f.write("\n")
    return manifest_path, blob_path


def load_checkpoint(path_prefix: str) -> tuple[dict, dict[str, np.ndarray]]:
    """Load ``(meta, arrays)`` from a manifest/blob pair.

    ``path_prefix`` may be the prefix or the manifest path itself.
    """
    manifest_path = path_prefix if path_prefix.endswith(".json") else path_prefix + ".json"
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as e:
        raise CheckpointFormatError(f"{manifest_path}: manifest is not valid JSON ({e})") from None
    if manifest.get("format") != "demix-checkpoint" or manifest.get("version") != 1:
        raise CheckpointFormatError(
            f"{manifest_path}: not a version-1 checkpoint manifest"
        )
    blob_path = os.path.join(os.path.dirname(manifest_path), manifest["blob"])
    with open(blob_path, "rb") as f:
        blob = f.read()
    digest = hashlib.sha256(blob).hexdigest()
    if digest != manifest["blob_sha256"]:
        raise CheckpointFormatError(
            f"{blob_path}: blob sha256 {digest[:12]}.. does not match manifest {manifest['blob_sha256'][:12]}.."
        )
    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        dtype = entry["dtype"]
        if dtype not in _DTYPES:
            raise CheckpointFormatError(f"{manifest_path}: unsupported dtype {dtype}")
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(blob):
            raise CheckpointFormatError(
                f"{blob_path}: tensor {entry['name']} at offset {start} overruns blob of {len(blob)} bytes"
            )
        arr = np.frombuffer(blob[start:start + nbytes], dtype=_DTYPES[dtype])
        expect = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        if arr.size != expect:
            raise CheckpointFormatError(
                f"{blob_path}: tensor {entry['name']} has {arr.size} values, manifest says {expect}"
            )
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return manifest["meta"], arrays


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
