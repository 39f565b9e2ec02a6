"""Standalone writer/reader for the FSE1 binary embedding format.

Layout (little-endian):
    header  ``<4sIIII``: magic ``b"FSE1"``, format version 1, feature
            dimension D, sample count N, class count C
    body    N*D float32 features (row-major), then N uint32 labels

Implemented independently of the benchmark library on purpose: the file
format is the only contract between the two packages.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"FSE1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


class FormatError(Exception):
    """The file does not conform to the FSE1 layout."""


def write_embeddings(features, labels, num_classes, path):
    """Write one float32 feature row per sample plus uint32 labels."""
    feats = np.ascontiguousarray(features, dtype="<f4")
    labs = np.ascontiguousarray(labels, dtype="<u4")
    if feats.ndim != 2:
        raise FormatError(f"features must be 2-D, got shape {feats.shape}")
    n, dim = feats.shape
    if labs.shape != (n,):
        raise FormatError(f"labels shape {labs.shape} does not match {n} rows")
    if n and int(labs.max()) >= num_classes:
        raise FormatError(f"label {labs.max()} >= num_classes {num_classes}")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, dim, n, num_classes))
        f.write(feats.tobytes())
        f.write(labs.tobytes())


def read_embeddings(path):
    """Read a file back; returns (features float64, labels int64, num_classes)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: shorter than header")
    magic, version, dim, n, num_classes = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    expected = _HEADER.size + 4 * n * dim + 4 * n
    if len(blob) < expected:
        raise FormatError(f"{path}: {len(blob)} bytes, expected {expected}")
    feats = np.frombuffer(blob, dtype="<f4", count=n * dim, offset=_HEADER.size)
    labels = np.frombuffer(blob, dtype="<u4", count=n, offset=_HEADER.size + 4 * n * dim)
    if n and int(labels.max()) >= num_classes:
        raise FormatError(f"{path}: label {labels.max()} >= num_classes {num_classes}")
    return (
        feats.astype(np.float64).reshape(n, dim),
        labels.astype(np.int64),
        num_classes,
    )
