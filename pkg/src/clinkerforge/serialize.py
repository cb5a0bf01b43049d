"""Versioned model persistence: a JSON document plus a raw little-endian array sidecar.

``model.json`` holds the family, hyperparameters, scalars and an index of
arrays; ``model.bin`` holds the array bytes back to back. Writing the same
state twice gives identical bytes, which npz archives do not guarantee.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def _jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return repr(x)
    return x


def canonical_json(obj: Any) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def pack(family: str, meta: Mapping[str, Any], arrays: Mapping[str, np.ndarray]) -> tuple[dict, bytes]:
    """Build the JSON document and sidecar bytes for one model state."""
    index, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = np.asarray(arrays[name])
        if a.dtype.kind == "f":
            a = a.astype("<f8")
        elif a.dtype.kind in "iub":
            a = a.astype("<i8")
        else:
            raise FormatError(f"array {name!r} has unsupported dtype {a.dtype}")
        raw = np.ascontiguousarray(a).tobytes()
        index.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    data = b"".join(blobs)
    doc = {
        "format_version": FORMAT_VERSION,
        "family": family,
        "meta": _jsonable(dict(meta)),
        "arrays": index,
        "sidecar_sha256": sha256_bytes(data),
    }
    return doc, data


def unpack(doc: Mapping[str, Any], data: bytes) -> tuple[str, dict, dict[str, np.ndarray]]:
    if doc.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {doc.get('format_version')!r}")
    if sha256_bytes(data) != doc["sidecar_sha256"]:
        raise FormatError("sidecar checksum mismatch")
    arrays = {}
    for entry in doc["arrays"]:
        buf = data[entry["offset"]: entry["offset"] + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(buf, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
    return doc["family"], dict(doc["meta"]), arrays


def save(path, family: str, meta: Mapping[str, Any], arrays: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    doc, data = pack(family, meta, arrays)
    path.with_suffix(".bin").write_bytes(data)
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load(path) -> tuple[str, dict, dict[str, np.ndarray]]:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    return unpack(doc, path.with_suffix(".bin").read_bytes())
