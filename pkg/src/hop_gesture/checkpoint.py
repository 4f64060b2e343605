"""Named-tensor checkpoints: a JSON manifest plus a little-endian float64 blob."""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Mapping

import numpy as np

FORMAT = "hop-gesture-tensors/1"
MANIFEST = "manifest.json"
BLOB = "tensors.bin"


class CheckpointError(ValueError):
    pass


def save_tensors(directory, tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> Path:
    """Write ``tensors`` under ``directory``; output bytes depend only on the inputs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    blob_path = directory / BLOB
    with open(blob_path, "wb") as fh:
        for name in tensors:
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            raw = arr.tobytes(order="C")
            fh.write(raw)
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += len(raw)
    manifest = {"format": FORMAT, "blob": BLOB, "dtype": "<f8", "nbytes": offset,
                "tensors": entries, "meta": dict(meta or {})}
    _write_json(directory / MANIFEST, manifest)
    return directory


def load_tensors(directory) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    mpath = directory / MANIFEST
    if not mpath.is_file():
        raise CheckpointError(f"no checkpoint manifest at {mpath}")
    manifest = json.loads(mpath.read_text())
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format')!r}")
    raw = (directory / manifest["blob"]).read_bytes()
    if len(raw) != manifest["nbytes"]:
        raise CheckpointError(f"blob has {len(raw)} bytes, manifest declares {manifest['nbytes']}")
    out = {}
    for e in manifest["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=e["offset"])
        out[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    return out, manifest["meta"]


def directory_hash(directory) -> str:
    directory = Path(directory)
    h = hashlib.sha256()
    h.update((directory / MANIFEST).read_bytes())
    h.update((directory / BLOB).read_bytes())
    return h.hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def _write_json(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    os.replace(tmp, path)
