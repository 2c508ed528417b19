"""Weights archives: a JSON manifest plus base64 little-endian tensor payloads.

Layout::

    {
      "format_version": 1,
      "manifest": {...},              # model kind, stage, free-form metadata
      "blocks": [{"symbol": "E_BF", "tensors": [{"shape": [...], "dtype": "<f4", "data": "..."}]}],
      "checksum": "<sha256 of the canonical JSON of manifest + blocks>"
    }
"""

from __future__ import annotations

import base64
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import DataError

FORMAT_VERSION = 1


def _encode(arr: np.ndarray) -> dict:
    arr = np.asarray(arr)
    dtype = arr.dtype.newbyteorder("<")
    return {
        "shape": list(arr.shape),
        "dtype": dtype.str,
        "data": base64.b64encode(np.ascontiguousarray(arr, dtype=dtype).tobytes()).decode("ascii"),
    }


def _decode(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data"])
    return np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()


def _checksum(manifest: dict, blocks: list) -> str:
    canon = json.dumps({"manifest": manifest, "blocks": blocks}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def dumps(params: dict[str, list[np.ndarray]], manifest: dict | None = None) -> str:
    manifest = dict(manifest or {})
    manifest["block_shapes"] = {s: [list(np.shape(a)) for a in arrs] for s, arrs in params.items()}
    blocks = [{"symbol": s, "tensors": [_encode(a) for a in arrs]} for s, arrs in params.items()]
    doc = {
        "format_version": FORMAT_VERSION,
        "manifest": manifest,
        "blocks": blocks,
        "checksum": _checksum(manifest, blocks),
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def loads(text: str) -> tuple[dict[str, list[np.ndarray]], dict]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"weights archive is not valid JSON: {exc}") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported archive version {doc.get('format_version')!r}")
    if _checksum(doc["manifest"], doc["blocks"]) != doc.get("checksum"):
        raise DataError("weights archive checksum mismatch")
    params = {b["symbol"]: [_decode(t) for t in b["tensors"]] for b in doc["blocks"]}
    return params, doc["manifest"]


def save(path, params: dict[str, list[np.ndarray]], manifest: dict | None = None) -> str:
    text = dumps(params, manifest)
    Path(path).write_text(text)
    return json.loads(text)["checksum"]


def load(path) -> tuple[dict[str, list[np.ndarray]], dict]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such weights archive")
    return loads(path.read_text())


def params_digest(params: dict[str, list[np.ndarray]]) -> str:
    """Byte-level digest of a parameter set, used by the freeze check."""
    h = hashlib.sha256()
    for symbol, arrays in params.items():
        h.update(symbol.encode())
        for a in arrays:
            h.update(str(a.dtype).encode() + str(a.shape).encode())
            h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()
