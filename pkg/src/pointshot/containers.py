"""Single-file container for checkpoints and bundles.

Layout (documented so checkpoints are inspectable without this package):

    line 1:  ``POINTSHOT-CONTAINER-V1``
    line 2:  one-line canonical JSON header:
             {"kind": str, "meta": {...}, "arrays": [{"name", "dtype",
             "shape"} ...]}
    rest:    the raw little-endian bytes of each array, concatenated in
             header order (C-contiguous).

Serialization is byte-deterministic: the header is dumped with sorted keys
and arrays are written in a fixed order, so identical state produces an
identical file. (Zip-based formats stamp timestamps into archives, which
would break reproducible re-runs.)
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ValidationError

MAGIC = b"POINTSHOT-CONTAINER-V1"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_container(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.byteorder not in ("<", "=", "|"):
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = canonical_json({"kind": kind, "meta": meta, "arrays": entries})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC + b"\n")
        f.write(header.encode("utf-8") + b"\n")
        for blob in blobs:
            f.write(blob)


def load_container(path) -> tuple[str, dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    with open(path, "rb") as f:
        magic = f.readline().rstrip(b"\n")
        if magic != MAGIC:
            raise ValidationError(f"{path}: not a pointshot container")
        header = json.loads(f.readline().decode("utf-8"))
        arrays = {}
        for entry in header["arrays"]:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = f.read(count * dtype.itemsize)
            if len(data) != count * dtype.itemsize:
                raise ValidationError(f"{path}: truncated array {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(data, dtype=dtype).reshape(shape).copy()
    return header["kind"], header["meta"], arrays


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_arrays(arrays: dict[str, np.ndarray]) -> str:
    """Content hash over named arrays, independent of any file on disk."""
    h = hashlib.sha256()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        h.update(name.encode("utf-8"))
        h.update(arr.dtype.str.encode("utf-8"))
        h.update(str(arr.shape).encode("utf-8"))
        h.update(arr.tobytes())
    return h.hexdigest()
