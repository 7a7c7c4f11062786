"""Binary tensor persistence: checkpoints and per-patient blobs.

Checkpoint files hold a single compact JSON manifest line followed by a
raw binary section of little-endian float32 values, row-major, in manifest
order. Per-patient blobs use the same binary layout with the manifest in
a JSON sidecar file.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import CheckpointVersionError, DataError

SCHEMA_VERSION = 1


def canonical_json(obj) -> str:
    """Serialize with sorted keys and stable formatting (round-trip safe)."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _pack_arrays(arrays: dict[str, np.ndarray]) -> tuple[list[dict], bytes]:
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        raw = data.tobytes()
        entries.append(
            {"name": name, "shape": list(arr.shape), "byte_offset": offset}
        )
        chunks.append(raw)
        offset += len(raw)
    return entries, b"".join(chunks)


def _unpack_arrays(entries: list[dict], blob: bytes) -> dict[str, np.ndarray]:
    out = {}
    for entry in entries:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["byte_offset"]
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start)
        out[entry["name"]] = arr.reshape(shape).astype(np.float32)
    return out


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write a single-file checkpoint: JSON manifest line + binary section."""
    entries, blob = _pack_arrays(arrays)
    manifest = dict(meta)
    manifest["schema_version"] = SCHEMA_VERSION
    manifest["tensors"] = entries
    manifest.setdefault("rng_state", None)
    header = json.dumps(manifest, sort_keys=True, ensure_ascii=False)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header.encode("utf-8"))
        f.write(b"\n")
        f.write(blob)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint, returning (arrays, manifest)."""
    with open(path, "rb") as f:
        header = f.readline()
        blob = f.read()
    try:
        manifest = json.loads(header.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"not a checkpoint file: {path}") from exc
    version = manifest.get("schema_version")
    if version != SCHEMA_VERSION:
        raise CheckpointVersionError(
            f"checkpoint {path} has schema_version {version!r}, expected {SCHEMA_VERSION}"
        )
    arrays = _unpack_arrays(manifest["tensors"], blob)
    return arrays, manifest


def save_blob(bin_path, sidecar_path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write a binary blob plus its JSON sidecar manifest."""
    entries, blob = _pack_arrays(arrays)
    manifest = dict(meta)
    manifest["schema_version"] = SCHEMA_VERSION
    manifest["arrays"] = entries
    bin_path = Path(bin_path)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    with open(bin_path, "wb") as f:
        f.write(blob)
    with open(sidecar_path, "w", encoding="utf-8") as f:
        f.write(canonical_json(manifest))


def load_blob(bin_path, sidecar_path) -> tuple[dict[str, np.ndarray], dict]:
    with open(sidecar_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    version = manifest.get("schema_version")
    if version != SCHEMA_VERSION:
        raise CheckpointVersionError(
            f"blob {bin_path} has schema_version {version!r}, expected {SCHEMA_VERSION}"
        )
    with open(bin_path, "rb") as f:
        blob = f.read()
    return _unpack_arrays(manifest["arrays"], blob), manifest
