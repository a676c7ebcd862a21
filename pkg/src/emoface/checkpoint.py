"""Weight checkpoints: JSON manifest + flat little-endian float payload.

Layout: 8-byte magic, uint32 little-endian manifest length, UTF-8 JSON
manifest, then every array's raw bytes in manifest order (row-major).
Round-trips are bit-exact for the stored dtype.
"""

import json
from collections import OrderedDict

import numpy as np

MAGIC = b"EFWT0001"
_DTYPES = {"<f8": np.dtype("<f8"), "<f4": np.dtype("<f4")}


class CheckpointError(RuntimeError):
    pass


def save_weights(path, named_arrays, meta=None, dtype=None):
    """Write (name, array) pairs. `dtype` optionally forces '<f4' or '<f8'."""
    entries = []
    blobs = []
    seen = set()
    for name, arr in named_arrays:
        if name in seen:
            raise CheckpointError(f"duplicate parameter name {name!r}")
        seen.add(name)
        a = np.ascontiguousarray(arr)
        dt = np.dtype(dtype) if dtype is not None else a.dtype.newbyteorder("<")
        if dt.str not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dt.str} for {name!r}")
        a = a.astype(dt, copy=False)
        entries.append({"name": name, "shape": list(a.shape), "dtype": dt.str})
        blobs.append(a.tobytes())
    manifest = {"version": 1, "params": entries, "meta": meta or {}}
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(len(mbytes)).tobytes())
        fh.write(mbytes)
        for blob in blobs:
            fh.write(blob)


def load_weights(path):
    """Read a checkpoint; returns (OrderedDict name -> array, meta dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a weight checkpoint")
    mlen = int(np.frombuffer(raw[8:12], dtype="<u4")[0])
    manifest = json.loads(raw[12:12 + mlen].decode("utf-8"))
    out = OrderedDict()
    offset = 12 + mlen
    for ent in manifest["params"]:
        dt = _DTYPES[ent["dtype"]]
        count = int(np.prod(ent["shape"], dtype=np.int64)) if ent["shape"] else 1
        nbytes = count * dt.itemsize
        chunk = raw[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: payload truncated at {ent['name']!r}")
        out[ent["name"]] = np.frombuffer(chunk, dtype=dt).reshape(ent["shape"]).copy()
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return out, manifest.get("meta", {})
