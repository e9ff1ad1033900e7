"""Feature store file formats: a compact binary layout and a CSV twin.

Binary layout (little-endian):

    magic "TAFS" | version u32 = 1 | m u32 | class_count u32
    then per class, in ascending class id order:
        class_id u32 | count u32 | count*m float32 row-major

CSV files carry a ``label,f0,...,f{m-1}`` header and one sample per row.
Both formats store float32; loading widens to float64, so a CSV and a
binary file written from the same store load to identical values.  The
format is chosen by file suffix: ``.csv`` is CSV, anything else binary.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from tafssl.episodes import FeatureStore

__all__ = ["load_features", "save_features"]

MAGIC = b"TAFS"
VERSION = 1
HEADER = struct.Struct("<4sIII")
CLASS_HEADER = struct.Struct("<II")


def save_features(store: FeatureStore, path) -> None:
    """Write a store to ``path``; values are quantized to float32."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        _save_csv(store, path)
    else:
        _save_binary(store, path)


def load_features(path) -> FeatureStore:
    """Load a store from ``path``, validating structure and finiteness."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"feature file not found: {path}")
    if path.suffix.lower() == ".csv":
        return _load_csv(path)
    return _load_binary(path)


def _save_binary(store: FeatureStore, path: Path) -> None:
    ids = sorted(store.classes)
    if any(c < 0 or c >= 2**32 for c in ids):
        raise ValueError("binary format requires class ids in [0, 2^32)")
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, VERSION, store.m, len(ids)))
        for cid in ids:
            X = np.ascontiguousarray(store.classes[cid], dtype="<f4")
            f.write(CLASS_HEADER.pack(cid, X.shape[0]))
            f.write(X.tobytes())


def _load_binary(path: Path) -> FeatureStore:
    blob = path.read_bytes()
    if len(blob) < HEADER.size:
        raise ValueError(f"truncated file: expected at least {HEADER.size} header bytes, got {len(blob)}")
    magic, version, m, n_classes = HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ValueError(f"unsupported version {version}, expected {VERSION}")
    offset = HEADER.size
    classes: dict[int, np.ndarray] = {}
    for _ in range(n_classes):
        if len(blob) < offset + CLASS_HEADER.size:
            raise ValueError(f"truncated file: expected {offset + CLASS_HEADER.size} bytes, got {len(blob)}")
        cid, count = CLASS_HEADER.unpack_from(blob, offset)
        offset += CLASS_HEADER.size
        nbytes = count * m * 4
        if len(blob) < offset + nbytes:
            raise ValueError(f"truncated file: expected {offset + nbytes} bytes, got {len(blob)}")
        X = np.frombuffer(blob, dtype="<f4", count=count * m, offset=offset).reshape(count, m).astype(np.float64)
        _check_rows_finite(X, cid)
        if cid in classes:
            raise ValueError(f"duplicate class id {cid}")
        classes[cid] = X
        offset += nbytes
    if offset != len(blob):
        raise ValueError(f"trailing data: expected {offset} bytes, got {len(blob)}")
    return FeatureStore(classes=classes)


def _save_csv(store: FeatureStore, path: Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["label"] + [f"f{j}" for j in range(store.m)])
        for cid in sorted(store.classes):
            for row in store.classes[cid].astype(np.float32):
                writer.writerow([cid] + [str(v) for v in row])


def _load_csv(path: Path) -> FeatureStore:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("empty CSV file") from None
        if not header or header[0] != "label":
            raise ValueError(f"bad CSV header: expected 'label,f0,...', got {header[:3]}")
        m = len(header) - 1
        if header[1:] != [f"f{j}" for j in range(m)]:
            raise ValueError("bad CSV header: feature columns must be f0..f{m-1} in order")
        rows: dict[int, list[np.ndarray]] = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != m + 1:
                raise ValueError(f"line {lineno}: expected {m + 1} fields, got {len(row)}")
            try:
                label = int(row[0])
                values = np.array([np.float32(v) for v in row[1:]], dtype=np.float64)
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
            if not np.isfinite(values).all():
                raise ValueError(f"line {lineno}: non-finite value")
            rows.setdefault(label, []).append(values)
    if not rows:
        raise ValueError("CSV file has no data rows")
    return FeatureStore(classes={cid: np.vstack(v) for cid, v in rows.items()})


def _check_rows_finite(X: np.ndarray, cid: int) -> None:
    bad = ~np.isfinite(X).all(axis=1)
    if bad.any():
        raise ValueError(f"non-finite value in class {cid}, row {int(np.flatnonzero(bad)[0])}")
