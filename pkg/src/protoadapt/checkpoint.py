"""Checkpoint files: named float64 parameter blocks behind a JSON header.

Layout: magic "PAC1", uint32 LE header length, canonical JSON header
{"meta": ..., "parameters": [{"name", "shape"}, ...]}, then each parameter's
values as little-endian float64, row-major, in header order. Canonical JSON
(sorted keys, no whitespace) plus a fixed parameter ordering makes equal
states serialize to equal bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

MAGIC = b"PAC1"


def save_checkpoint(path, parameters: dict[str, np.ndarray], meta: dict) -> None:
    names = sorted(parameters)
    header = {
        "meta": meta,
        "parameters": [{"name": n, "shape": list(parameters[n].shape)} for n in names],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for n in names:
            arr = np.ascontiguousarray(parameters[n], dtype="<f8")
            if not np.isfinite(arr).all():
                raise ValidationError(f"parameter {n!r} contains non-finite values")
            f.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint file (bad magic)")
    (header_len,) = struct.unpack_from("<I", blob, 4)
    if 8 + header_len > len(blob):
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: header is not valid JSON ({e})") from e
    if "meta" not in header or "parameters" not in header:
        raise FormatError(f"{path}: header missing meta or parameters")

    parameters: dict[str, np.ndarray] = {}
    offset = 8 + header_len
    for entry in header["parameters"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(blob):
            raise FormatError(f"{path}: payload truncated at parameter {entry['name']!r}")
        arr = np.frombuffer(blob[offset : offset + nbytes], dtype="<f8").reshape(shape)
        parameters[entry["name"]] = arr.astype(np.float64)
        offset += nbytes
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")
    return parameters, header["meta"]
