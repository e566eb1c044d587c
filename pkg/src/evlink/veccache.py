"""Binary containers for cached vectors and model checkpoints.

Vector cache (little-endian throughout):

    magic "EVLK" | version u32=1 | dim u32 | count u64
    count records of (id u64, dim x f32)

Checkpoints reuse the same magic/version header followed by labeled
sections; each section is either an embedding tower (vocab u32, dim u32,
vocab*dim f32 embeddings, dim*dim f32 projection) or a bare f32 vector.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"EVLK"
VERSION = 1

_SECTION_TOWER = 0
_SECTION_VECTOR = 1


class VectorCacheError(Exception):
    """Malformed cache or checkpoint file."""


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise VectorCacheError(f"truncated file while reading {what}")
    return data


def _read_header(fh, path) -> None:
    magic = fh.read(4)
    if magic != MAGIC:
        raise VectorCacheError(f"{path}: bad magic {magic!r}")
    (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
    if version != VERSION:
        raise VectorCacheError(f"{path}: unsupported version {version}")


def write_vectors(path, ids, matrix) -> None:
    """Write id/vector records. ``matrix`` rows are stored as f32."""
    ids = list(ids)
    matrix = np.asarray(matrix, dtype=np.float32)
    if matrix.ndim != 2 or matrix.shape[0] != len(ids):
        raise ValueError("matrix must be 2-D with one row per id")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate ids")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIQ", VERSION, matrix.shape[1], len(ids)))
        for i, entry_id in enumerate(ids):
            fh.write(struct.pack("<Q", entry_id))
            fh.write(matrix[i].tobytes())


def read_vectors(path) -> tuple[list[int], np.ndarray]:
    """Read a vector cache; returns (ids in file order, f32 matrix)."""
    path = Path(path)
    with path.open("rb") as fh:
        _read_header(fh, path)
        dim, count = struct.unpack("<IQ", _read_exact(fh, 12, "dimensions"))
        ids: list[int] = []
        seen = set()
        rows = np.empty((count, dim), dtype=np.float32)
        row_bytes = 4 * dim
        for i in range(count):
            (entry_id,) = struct.unpack("<Q", _read_exact(fh, 8, f"record {i} id"))
            if entry_id in seen:
                raise VectorCacheError(f"{path}: duplicate id {entry_id}")
            seen.add(entry_id)
            buf = _read_exact(fh, row_bytes, f"record {i} vector")
            rows[i] = np.frombuffer(buf, dtype="<f4")
            ids.append(entry_id)
    return ids, rows


def _write_array(fh, arr: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_array(fh, shape, what: str) -> np.ndarray:
    n = int(np.prod(shape))
    buf = _read_exact(fh, 4 * n, what)
    return np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float64)


def write_checkpoint(path, sections: dict) -> None:
    """Write labeled sections; values are (embeddings, projection) tower
    tuples or 1-D vectors."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(sections)))
        for label, value in sections.items():
            raw = label.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            if isinstance(value, tuple):
                embeddings, projection = value
                vocab, dim = embeddings.shape
                if projection.shape != (dim, dim):
                    raise ValueError(f"section {label}: projection must be "
                                     f"{dim}x{dim}")
                fh.write(struct.pack("<BII", _SECTION_TOWER, vocab, dim))
                _write_array(fh, embeddings)
                _write_array(fh, projection)
            else:
                vec = np.asarray(value)
                if vec.ndim != 1:
                    raise ValueError(f"section {label}: expected 1-D vector")
                fh.write(struct.pack("<BI", _SECTION_VECTOR, vec.shape[0]))
                _write_array(fh, vec)


def read_checkpoint(path) -> dict:
    """Read sections back as float64 arrays (towers as tuples)."""
    path = Path(path)
    sections: dict = {}
    with path.open("rb") as fh:
        _read_header(fh, path)
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "section count"))
        for _ in range(count):
            (label_len,) = struct.unpack("<I", _read_exact(fh, 4, "label length"))
            label = _read_exact(fh, label_len, "label").decode("utf-8")
            (kind,) = struct.unpack("<B", _read_exact(fh, 1, "section kind"))
            if kind == _SECTION_TOWER:
                vocab, dim = struct.unpack("<II", _read_exact(fh, 8, "tower shape"))
                embeddings = _read_array(fh, (vocab, dim), f"{label} embeddings")
                projection = _read_array(fh, (dim, dim), f"{label} projection")
                sections[label] = (embeddings, projection)
            elif kind == _SECTION_VECTOR:
                (dim,) = struct.unpack("<I", _read_exact(fh, 4, "vector dim"))
                sections[label] = _read_array(fh, (dim,), f"{label} vector")
            else:
                raise VectorCacheError(f"{path}: unknown section kind {kind}")
    return sections
