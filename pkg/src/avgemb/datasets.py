"""Embedding file I/O, centering, synthetic catalogs and i.i.d. diagnostics.

EMB1 layout (all little-endian)::

    offset  size  field
    0       4     magic  b"EMB1"
    4       2     version (u16, currently 1)
    6       8     n_items (u64)
    14      4     dim (u32)
    18      1     dtype (u8, 0 = float32)
    19      ...   n_items * dim float32 values, row-major
"""

from __future__ import annotations

import contextlib
import csv
import io
import math
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import FileFormatError, InvalidParameterError
from .evaluator import EmbeddingMatrix
from .stats_core import DistributionSpec, MomentSet, RandomSeed, estimate_moments, sample_matrix

MAGIC = b"EMB1"
VERSION = 1
DTYPE_FLOAT32 = 0
HEADER = struct.Struct("<4sHQIB")
MAX_CORRELATION_PAIRS = 32768
ALL_PAIRS_MAX_DIM = 256


@dataclass(frozen=True)
class EmbeddingFileHeader:
    n_items: int
    dim: int
    version: int = VERSION
    dtype: int = DTYPE_FLOAT32

    @property
    def payload_bytes(self) -> int:
        return self.n_items * self.dim * 4

    def pack(self) -> bytes:
        return HEADER.pack(MAGIC, self.version, self.n_items, self.dim, self.dtype)

    @classmethod
    def unpack(cls, raw: bytes) -> "EmbeddingFileHeader":
        if len(raw) < HEADER.size:
            raise FileFormatError(f"file too short for an EMB1 header ({len(raw)} < {HEADER.size} bytes)")
        magic, version, n_items, dim, dtype = HEADER.unpack(raw[: HEADER.size])
        if magic != MAGIC:
            raise FileFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise FileFormatError(f"unsupported EMB1 version {version}")
        if dtype != DTYPE_FLOAT32:
            raise FileFormatError(f"unsupported dtype code {dtype} (only 0 = float32)")
        if n_items < 1 or dim < 1:
            raise FileFormatError(f"empty matrix declared ({n_items} x {dim})")
        return cls(n_items, dim, version, dtype)


@dataclass(frozen=True)
class DiagnosticsReport:
    """How far a catalog is from i.i.d. entries.

    ``per_dimension_moments[j]`` is None for a zero-variance dimension;
    those indices are also listed in ``degenerate_dimensions``.
    """

    per_dimension_moments: tuple
    pooled_moments: MomentSet
    max_abs_offdiag_correlation: float
    mean_vector_norm: float
    centered: bool
    degenerate_dimensions: tuple = ()
    correlation_pairs: int = 0

    def as_dict(self) -> dict:
        return {
            "per_dimension_moments": [None if ms is None else ms.as_dict() for ms in self.per_dimension_moments],
            "pooled_moments": self.pooled_moments.as_dict(),
            "max_abs_offdiag_correlation": self.max_abs_offdiag_correlation,
            "mean_vector_norm": self.mean_vector_norm,
            "centered": self.centered,
            "degenerate_dimensions": list(self.degenerate_dimensions),
            "correlation_pairs": self.correlation_pairs,
        }


# --------------------------------------------------------------------------
# loading and writing
# --------------------------------------------------------------------------


def _check_finite(data: np.ndarray):
    finite = np.isfinite(data)
    if not finite.all():
        row, col = np.argwhere(~finite)[0]
        raise FileFormatError(f"non-finite entry {data[row, col]} at row {row}, column {col}")


def _load_binary(path: Path) -> EmbeddingMatrix:
    with open(path, "rb") as fh:
        header = EmbeddingFileHeader.unpack(fh.read(HEADER.size))
    actual = path.stat().st_size - HEADER.size
    if actual != header.payload_bytes:
        raise FileFormatError(
            f"payload size mismatch: header declares {header.n_items} x {header.dim} float32"
            f" = {header.payload_bytes} bytes, file holds {actual} bytes"
        )
    data = np.memmap(path, dtype="<f4", mode="r", offset=HEADER.size, shape=(header.n_items, header.dim))
    data = np.array(data, dtype=np.float32)
    _check_finite(data)
    return EmbeddingMatrix(data, origin="file", metadata={"path": str(path), "format": "binary"})


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def _load_csv(path: Path, header: bool) -> EmbeddingMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if header:
            next(reader, None)
        rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    if not rows:
        raise FileFormatError("csv file holds no rows")
    has_ids = not _is_number(rows[0][0].strip())
    width = len(rows[0])
    ids, values = [], []
    for r, row in enumerate(rows):
        if len(row) != width:
            raise FileFormatError(f"ragged csv: row {r} has {len(row)} fields, expected {width}")
        cells = row[1:] if has_ids else row
        if has_ids:
            ids.append(row[0].strip())
        try:
            values.append([float(c) for c in cells])
        except ValueError as exc:
            raise FileFormatError(f"row {r}: {exc}") from None
    data = np.asarray(values, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] < 1:
        raise FileFormatError("csv rows hold no numeric columns")
    _check_finite(data)
    return EmbeddingMatrix(
        data,
        item_ids=tuple(ids) if has_ids else None,
        origin="file",
        metadata={"path": str(path), "format": "csv"},
    )


def load_embeddings(path, format: str = "binary", csv_header: bool = False) -> EmbeddingMatrix:
    path = Path(path)
    if format == "binary":
        return _load_binary(path)
    if format == "csv":
        return _load_csv(path, csv_header)
    raise InvalidParameterError(f"unknown format {format!r} (binary or csv)")


@contextlib.contextmanager
def atomic_open(path):
    """Binary handle on a temp file that is renamed onto ``path`` on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, payload: bytes):
    with atomic_open(path) as fh:
        fh.write(payload)


def write_embeddings(m: EmbeddingMatrix, path, format: str = "binary"):
    """Binary output stores float32; csv writes 9 significant digits."""
    if format == "binary":
        header = EmbeddingFileHeader(m.n_items, m.dim)
        with atomic_open(path) as fh:
            fh.write(header.pack())
            for start in range(0, m.n_items, 65536):
                fh.write(np.ascontiguousarray(m.data[start: start + 65536], dtype="<f4").tobytes())
    elif format == "csv":
        buf = io.StringIO()
        for r in range(m.n_items):
            cells = [f"{v:.9g}" for v in m.data[r].tolist()]
            if m.item_ids is not None:
                cells.insert(0, str(m.item_ids[r]))
            buf.write(",".join(cells))
            buf.write("\n")
        atomic_write_bytes(path, buf.getvalue().encode("utf-8"))
    else:
        raise InvalidParameterError(f"unknown format {format!r} (binary or csv)")


# --------------------------------------------------------------------------
# transforms and synthesis
# --------------------------------------------------------------------------


def center(m: EmbeddingMatrix) -> EmbeddingMatrix:
    """Subtract each dimension's mean over items."""
    X = m.data.astype(np.float64)
    X -= X.mean(axis=0)
    meta = dict(m.metadata, centered=True)
    return EmbeddingMatrix(X.astype(m.data.dtype, copy=False), m.item_ids, m.origin, meta)


def synth(spec: DistributionSpec, n: int, d: int, seed: RandomSeed, dtype=np.float64) -> EmbeddingMatrix:
    data = sample_matrix(spec, n, d, seed, dtype=dtype)
    meta = {"distribution": spec.describe(), "seed": seed.as_dict(), "n_items": int(n), "dim": int(d)}
    return EmbeddingMatrix(data, origin="synthetic", metadata=meta)


# --------------------------------------------------------------------------
# diagnostics
# --------------------------------------------------------------------------


def _column_moments(X: np.ndarray):
    mean = X.mean(axis=0)
    dev = X - mean
    dev2 = dev * dev
    m2 = dev2.mean(axis=0)
    m3 = (dev2 * dev).mean(axis=0)
    m4 = (dev2 * dev2).mean(axis=0)
    return mean, m2, m3, m4


def diagnostics(m: EmbeddingMatrix, correlation_sample: int = MAX_CORRELATION_PAIRS,
                seed: Optional[RandomSeed] = None) -> DiagnosticsReport:
    """Per-dimension and pooled moments plus the worst cross-dimension correlation.

    All pairs of dimensions are checked when ``dim <= 256``; otherwise
    ``correlation_sample`` seeded random pairs are.
    """
    if m.n_items < 4:
        raise InvalidParameterError(f"diagnostics need at least 4 items, got {m.n_items}")
    X = m.data.astype(np.float64)
    d = m.dim
    mean, m2, m3, m4 = _column_moments(X)
    pooled = estimate_moments(X)
    scale = math.sqrt(pooled.variance)
    degenerate = m2 <= (1e-24 * max(scale, 1e-300) ** 2)
    per_dim = []
    for j in range(d):
        if degenerate[j]:
            per_dim.append(None)
        else:
            per_dim.append(MomentSet(mean[j], m2[j], m3[j] / m2[j] ** 1.5, m4[j] / m2[j] ** 2))
    live = np.flatnonzero(~degenerate)
    std = np.sqrt(m2[live])
    Z = (X[:, live] - mean[live]) / std
    n_pairs = 0
    max_corr = 0.0
    if live.size >= 2:
        if d <= ALL_PAIRS_MAX_DIM:
            C = (Z.T @ Z) / m.n_items
            iu = np.triu_indices(live.size, 1)
            vals = np.abs(C[iu])
            n_pairs = vals.size
        else:
            if seed is None:
                raise InvalidParameterError("a seed is required to sample dimension pairs when dim > 256")
            rng = seed.generator()
            a = rng.integers(0, live.size, size=correlation_sample)
            b = rng.integers(0, live.size - 1, size=correlation_sample)
            b += b >= a
            vals = np.abs(np.einsum("ij,ij->j", Z[:, a], Z[:, b]) / m.n_items)
            n_pairs = vals.size
        max_corr = float(min(1.0, vals.max()))
    centered = bool(np.all(np.abs(mean) <= 1e-6 * scale))
    return DiagnosticsReport(
        per_dimension_moments=tuple(per_dim),
        pooled_moments=pooled,
        max_abs_offdiag_correlation=max_corr,
        mean_vector_norm=float(np.linalg.norm(mean)),
        centered=centered,
        degenerate_dimensions=tuple(int(j) for j in np.flatnonzero(degenerate)),
        correlation_pairs=int(n_pairs),
    )


__all__ = [
    "EmbeddingFileHeader",
    "DiagnosticsReport",
    "load_embeddings",
    "write_embeddings",
    "center",
    "synth",
    "diagnostics",
]
