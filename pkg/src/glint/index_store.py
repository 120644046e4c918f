"""Persistent multi-vector index.

Binary layout (all integers little-endian):

    magic "LIGT" | u32 version | u32 d | u32 n_docs
    per document: u64 page_id | u32 n_patch_rows | patches (f64 row-major) | global (f64)
    trailing u32 CRC32 over everything before it

Vectors are stored as float64 so read(write(x)) == x bit-exactly. Every row is
required to be unit-norm at write time; reads re-verify the checksum and the
exact byte length and raise IntegrityError on any mismatch.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .embeddings import DocumentEmbedding
from .errors import IntegrityError

INDEX_MAGIC = b"LIGT"
INDEX_VERSION = 1
_NORM_TOL = 1e-6


def _check_unit_rows(rows: np.ndarray, what: str) -> None:
    norms = np.linalg.norm(rows, axis=-1)
    bad = np.abs(norms - 1.0) > _NORM_TOL
    if np.any(bad):
        raise ValueError(f"{what}: {int(np.sum(bad))} rows are not unit-norm")


def write_index(docs: list[DocumentEmbedding], path) -> None:
    """Serialize document embeddings; the file is written in one shot, so a
    failed validation never leaves a partial index behind."""
    if docs:
        d = docs[0].global_vec.shape[0]
    else:
        d = 0
    chunks = [INDEX_MAGIC, struct.pack("<III", INDEX_VERSION, d, len(docs))]
    for doc in docs:
        if doc.global_vec.shape[0] != d or doc.patches.shape[1] != d:
            raise ValueError(f"page {doc.page_id}: dimension mismatch with index header d={d}")
        _check_unit_rows(doc.patches, f"page {doc.page_id} patches")
        _check_unit_rows(doc.global_vec, f"page {doc.page_id} global")
        chunks.append(struct.pack("<QI", doc.page_id, doc.patches.shape[0]))
        chunks.append(np.ascontiguousarray(doc.patches, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(doc.global_vec, dtype="<f8").tobytes())
    payload = b"".join(chunks)
    Path(path).write_bytes(payload + struct.pack("<I", zlib.crc32(payload)))


def read_index(path) -> list[DocumentEmbedding]:
    """Load an index, verifying magic, version, checksum, and exact length."""
    blob = Path(path).read_bytes()
    if len(blob) < 4 + 12 + 4:
        raise IntegrityError(f"{path}: too short to be an index file")
    if blob[:4] != INDEX_MAGIC:
        raise IntegrityError(f"{path}: bad magic {blob[:4]!r}")
    payload, (stored_crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) != stored_crc:
        raise IntegrityError(f"{path}: checksum mismatch; file is corrupted")
    version, d, n_docs = struct.unpack_from("<III", payload, 4)
    if version != INDEX_VERSION:
        raise IntegrityError(f"{path}: unsupported index version {version}")

    docs: list[DocumentEmbedding] = []
    off = 16
    for _ in range(n_docs):
        if off + 12 > len(payload):
            raise IntegrityError(f"{path}: truncated document record")
        page_id, n_rows = struct.unpack_from("<QI", payload, off)
        off += 12
        need = (n_rows + 1) * d * 8
        if off + need > len(payload):
            raise IntegrityError(f"{path}: truncated vectors for page {page_id}")
        patches = np.frombuffer(payload, dtype="<f8", count=n_rows * d, offset=off).reshape(n_rows, d)
        off += n_rows * d * 8
        global_vec = np.frombuffer(payload, dtype="<f8", count=d, offset=off)
        off += d * 8
        docs.append(
            DocumentEmbedding(
                patches=patches.astype(np.float64).copy(),
                global_vec=global_vec.astype(np.float64).copy(),
                page_id=int(page_id),
            )
        )
    if off != len(payload):
        raise IntegrityError(f"{path}: {len(payload) - off} trailing bytes after last record")
    return docs
