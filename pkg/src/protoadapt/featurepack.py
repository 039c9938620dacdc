"""Feature-pack container and its binary file format.

A feature pack is the unit of exchange between the embedding extractor and
everything downstream: D-dimensional instance embeddings with object or
background roles, optional boxes, and image ids.

File layout (bit-exact):

    magic          4 bytes      b"FPK1"
    header_len     uint32 LE
    header         header_len bytes of UTF-8 JSON:
                   {dataset_id, dim, class_names, record_count,
                    records: [{role, class_index?, image_id, box?}, ...]}
    payload        record_count * dim little-endian float32, row-major,
                   in record order

Embeddings are stored raw. On load they are widened to float64 and
L2-normalized (the classification head is cosine-based, so temperatures are
only meaningful on unit vectors); zero rows are rejected. The raw float32
payload is kept on the pack so that load -> save -> load is byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

MAGIC = b"FPK1"

ROLE_OBJECT = "object"
ROLE_BACKGROUND = "background"

Box = tuple[float, float, float, float]


@dataclass
class FeatureRecord:
    """One embedded instance. embedding is the normalized float64 view."""

    embedding: np.ndarray
    role: str
    class_index: int | None
    image_id: str
    box: Box | None = None

    @property
    def is_object(self) -> bool:
        return self.role == ROLE_OBJECT


@dataclass
class FeaturePack:
    dataset_id: str
    dim: int
    class_names: list[str]
    records: list[FeatureRecord]
    raw: np.ndarray = field(repr=False)  # float32 (record_count, dim), as stored on disk

    @property
    def no_background(self) -> bool:
        return not any(r.role == ROLE_BACKGROUND for r in self.records)

    def object_indices_by_class(self) -> dict[int, list[int]]:
        by_class: dict[int, list[int]] = {c: [] for c in range(len(self.class_names))}
        for i, r in enumerate(self.records):
            if r.is_object:
                by_class[r.class_index].append(i)
        return by_class

    def background_indices(self) -> list[int]:
        return [i for i, r in enumerate(self.records) if r.role == ROLE_BACKGROUND]

    def embedding_matrix(self, indices) -> np.ndarray:
        """Stack normalized embeddings for the given record indices."""
        return np.stack([self.records[i].embedding for i in indices], axis=0)


def _validate_box(box, row: int) -> Box:
    if not isinstance(box, (list, tuple)) or len(box) != 4:
        raise ValidationError(f"record {row}: box must have 4 coordinates")
    x0, y0, x1, y1 = (float(v) for v in box)
    if not (x0 < x1 and y0 < y1):
        raise ValidationError(f"record {row}: degenerate box {box}")
    return (x0, y0, x1, y1)


def _normalize_rows(raw: np.ndarray) -> np.ndarray:
    wide = raw.astype(np.float64)
    for i in range(wide.shape[0]):
        if not np.isfinite(wide[i]).all():
            raise ValidationError(f"record {i}: embedding contains a non-finite value")
    norms = np.linalg.norm(wide, axis=1)
    zero = np.nonzero(norms == 0.0)[0]
    if zero.size:
        raise ValidationError(f"record {int(zero[0])}: zero embedding cannot be L2-normalized")
    return wide / norms[:, None]


def build_pack(dataset_id: str, class_names: list[str], metadata: list[dict], matrix: np.ndarray) -> FeaturePack:
    """Assemble a pack in memory with the same validation as a file load.

    metadata holds one dict per row with keys role, class_index (objects),
    image_id, and optional box. matrix is (record_count, dim), any float
    dtype; it is stored as float32 exactly as a file would hold it.
    """
    raw = np.ascontiguousarray(matrix, dtype=np.float32)
    if raw.ndim != 2:
        raise ValidationError(f"embedding matrix must be 2-D, got shape {raw.shape}")
    if raw.shape[0] != len(metadata):
        raise ValidationError(f"{len(metadata)} records but {raw.shape[0]} embedding rows")
    dim = raw.shape[1]
    if dim <= 0:
        raise ValidationError("embedding dimensionality must be positive")
    normalized = _normalize_rows(raw)

    n_classes = len(class_names)
    records: list[FeatureRecord] = []
    for i, meta in enumerate(metadata):
        role = meta.get("role")
        if role not in (ROLE_OBJECT, ROLE_BACKGROUND):
            raise ValidationError(f"record {i}: unknown role {role!r}")
        class_index = None
        if role == ROLE_OBJECT:
            class_index = meta.get("class_index")
            if not isinstance(class_index, int) or not (0 <= class_index < n_classes):
                raise ValidationError(f"record {i}: class index {class_index!r} not in [0, {n_classes})")
        elif meta.get("class_index") is not None:
            raise ValidationError(f"record {i}: background record carries a class index")
        image_id = meta.get("image_id")
        if not isinstance(image_id, str):
            raise ValidationError(f"record {i}: image_id must be a string")
        box = _validate_box(meta["box"], i) if meta.get("box") is not None else None
        records.append(FeatureRecord(normalized[i], role, class_index, image_id, box))
    return FeaturePack(dataset_id=str(dataset_id), dim=dim, class_names=list(class_names), records=records, raw=raw)


def load_feature_pack(path) -> FeaturePack:
    """Read and validate a feature-pack file."""
    blob = Path(path).read_bytes()
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise FormatError(f"{path}: not a feature pack (bad magic)")
    (header_len,) = struct.unpack_from("<I", blob, 4)
    if 8 + header_len > len(blob):
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: header is not valid JSON ({e})") from e

    for key in ("dataset_id", "dim", "class_names", "record_count", "records"):
        if key not in header:
            raise FormatError(f"{path}: header missing {key!r}")
    dim = header["dim"]
    count = header["record_count"]
    if not isinstance(dim, int) or dim <= 0:
        raise ValidationError(f"{path}: dim must be a positive integer, got {dim!r}")
    if not isinstance(count, int) or count < 0 or count != len(header["records"]):
        raise ValidationError(f"{path}: record_count {count!r} does not match {len(header['records'])} records")

    payload = blob[8 + header_len :]
    available = len(payload) // 4
    expected = count * dim
    if available < expected:
        bad_row = available // dim
        raise ValidationError(
            f"{path}: record {bad_row} has {available - bad_row * dim} of {dim} values (payload truncated)"
        )
    if len(payload) != expected * 4:
        raise FormatError(f"{path}: {len(payload) - expected * 4} trailing bytes after payload")
    raw = np.frombuffer(payload, dtype="<f4").reshape(count, dim)
    return build_pack(header["dataset_id"], header["class_names"], header["records"], raw)


def save_feature_pack(pack: FeaturePack, path) -> None:
    """Write a pack; embeddings are emitted from the raw float32 payload."""
    records = []
    for r in pack.records:
        entry: dict = {"role": r.role, "image_id": r.image_id}
        if r.class_index is not None:
            entry["class_index"] = r.class_index
        if r.box is not None:
            entry["box"] = list(r.box)
        records.append(entry)
    header = {
        "dataset_id": pack.dataset_id,
        "dim": pack.dim,
        "class_names": pack.class_names,
        "record_count": len(pack.records),
        "records": records,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = np.ascontiguousarray(pack.raw, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(payload)


def validation_report(pack: FeaturePack) -> str:
    """Human-readable summary printed by `pack validate`."""
    by_class = pack.object_indices_by_class()
    lines = [
        f"dataset_id: {pack.dataset_id}",
        f"dim: {pack.dim}",
        f"records: {len(pack.records)} "
        f"({sum(len(v) for v in by_class.values())} object, {len(pack.background_indices())} background)",
    ]
    for c, name in enumerate(pack.class_names):
        lines.append(f"  class {c} {name!r}: {len(by_class[c])} records")
    if pack.no_background:
        lines.append("flag: no-background")
    lines.append("ok")
    return "\n".join(lines)
