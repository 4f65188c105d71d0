"""Single-file named-tensor container.

Layout: 8-byte magic, u64 little-endian manifest length, manifest JSON,
then the concatenated float32 little-endian tensor blobs.  The manifest
stores the format version, a per-file blob digest and the tensor index
(name, shape, offset), so loads are verified end to end and round trips
are bit-exact.  No object serialization of any kind.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import CorruptionError, FormatError

MAGIC = b"OCSYNCK1"
FORMAT_VERSION = 1
MODEL_KINDS = ("gan", "sr", "embedder")


def _to_f32(array) -> np.ndarray:
    if hasattr(array, "detach"):
        array = array.detach().cpu().numpy()
    arr = np.asarray(array, dtype=np.float32)
    return np.ascontiguousarray(arr)


def save_checkpoint(path: Path, tensors: Mapping[str, np.ndarray], manifest: dict) -> Path:
    """Write tensors plus caller metadata; returns the path."""
    path = Path(path)
    names = list(tensors)
    if len(set(names)) != len(names):
        raise FormatError("tensor names must be unique")
    blobs = []
    index = []
    offset = 0
    for name in names:
        arr = _to_f32(tensors[name])
        data = arr.tobytes(order="C")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    blob = b"".join(blobs)
    doc = dict(manifest)
    doc["format_version"] = FORMAT_VERSION
    doc["tensors"] = index
    doc["blob_sha256"] = hashlib.sha256(blob).hexdigest()
    payload = json.dumps(doc, sort_keys=True).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        fh.write(blob)
    return path


def load_manifest(path: Path) -> dict:
    """Read and validate the manifest only (cheap metadata queries)."""
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC) + 8)
        if len(head) < len(MAGIC) + 8 or head[: len(MAGIC)] != MAGIC:
            raise FormatError(f"{path} is not a checkpoint container (bad magic)")
        (length,) = struct.unpack("<Q", head[len(MAGIC):])
        payload = fh.read(length)
    if len(payload) != length:
        raise CorruptionError(f"{path} is truncated inside the manifest")
    try:
        manifest = json.loads(payload)
    except json.JSONDecodeError as exc:
        raise CorruptionError(f"{path} has an unreadable manifest: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(
            f"unsupported format_version {manifest.get('format_version')} (expected {FORMAT_VERSION})"
        )
    return manifest


def load_checkpoint(path: Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read tensors and manifest, verifying digest and completeness."""
    path = Path(path)
    manifest = load_manifest(path)
    with open(path, "rb") as fh:
        fh.seek(len(MAGIC))
        (length,) = struct.unpack("<Q", fh.read(8))
        fh.seek(len(MAGIC) + 8 + length)
        blob = fh.read()
    expected = sum(entry["nbytes"] for entry in manifest["tensors"])
    if len(blob) != expected:
        raise CorruptionError(f"{path}: blob is {len(blob)} bytes, manifest says {expected}")
    if hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
        raise CorruptionError(f"{path}: blob digest mismatch")
    tensors = {}
    for entry in manifest["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(blob[start : start + nbytes], dtype="<f4")
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return tensors, manifest


def state_dict_tensors(module, prefix: str) -> dict[str, np.ndarray]:
    """Flatten a torch state dict into container entries."""
    return {f"{prefix}/{k}": v for k, v in module.state_dict().items()}


def load_state_dict_tensors(module, tensors: Mapping[str, np.ndarray], prefix: str) -> None:
    import torch

    state = {}
    for key, value in tensors.items():
        if key.startswith(prefix + "/"):
            state[key[len(prefix) + 1 :]] = torch.as_tensor(value)
    missing = set(module.state_dict()) - set(state)
    if missing:
        raise FormatError(f"checkpoint misses tensors for {prefix}: {sorted(missing)[:5]}")
    module.load_state_dict(state)
