"""Binary checkpoint container.

Layout: 8-byte magic ``SSCNETCK``, little-endian uint64 header length, a UTF-8
JSON header, then the raw little-endian array payloads in header order. The
header records name, dtype, shape, byte offset and a crc32 per array, plus any
caller metadata (layer specs, config, epoch).
"""

import json
import os
import struct
import tempfile
import zlib

import numpy as np

MAGIC = b"SSCNETCK"
FORMAT_VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "int32": "<i4", "uint8": "|u1"}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict, meta: dict | None = None) -> None:
    """Write ``arrays`` (name -> ndarray) atomically to ``path``."""
    entries, blobs, offset = [], [], 0
    for name, a in arrays.items():
        a = np.asarray(a)
        key = a.dtype.name
        if key not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {a.dtype} for {name!r}")
        raw = np.ascontiguousarray(a, dtype=_DTYPES[key]).tobytes()
        entries.append({"name": name, "dtype": key, "shape": list(a.shape),
                        "offset": offset, "nbytes": len(raw), "crc32": zlib.crc32(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"format_version": FORMAT_VERSION, "arrays": entries,
                         "meta": meta or {}}, sort_keys=True).encode()
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<Q", len(header)))
            f.write(header)
            for b in blobs:
                f.write(b)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> tuple[dict, dict]:
    """Return ``(arrays, meta)``; raises CheckpointError on any corruption."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(data) < 16:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16:16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header ({e})") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format_version {header.get('format_version')}")
    base = 16 + hlen
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        raw = data[start:start + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise CheckpointError(f"{path}: payload of {e['name']!r} truncated")
        if zlib.crc32(raw) != e["crc32"]:
            raise CheckpointError(f"{path}: checksum mismatch in {e['name']!r}")
        a = np.frombuffer(raw, dtype=_DTYPES[e["dtype"]]).reshape(e["shape"])
        arrays[e["name"]] = a.astype(e["dtype"])
    return arrays, header["meta"]
