"""Dataset and checkpoint serialization.

The EMB container is the interchange format between this package and any
external embedding exporter:

    bytes 0-3    magic b"LFRE"
    bytes 4-7    format version, uint32 little-endian (currently 1)
    bytes 8-11   n, number of rows, uint32 LE
    bytes 12-15  d, feature dimension, uint32 LE
    byte  16     has_groups flag (0 or 1)
    then         n*d float32 LE features, row-major
    then         n uint8 class labels
    then         n uint8 alignment flags (0 majority, 1 minority), only if
                 has_groups is 1

Model checkpoints are a second container:

    bytes 0-4    magic b"LFRM1"
    bytes 5-8    layer count, uint32 LE
    per layer    rows uint32 LE, cols uint32 LE, activation byte
                 (0 none, 1 ReLU), rows*cols float64 LE weights row-major,
                 cols float64 LE biases
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .dataspec import GroupedDataset

EMB_MAGIC = b"LFRE"
MODEL_MAGIC = b"LFRM1"
FORMAT_VERSION = 1

ACT_NONE = 0
ACT_RELU = 1

_EMB_HEADER = struct.Struct("<4sIIIB")
_MODEL_HEADER = struct.Struct("<5sI")
_LAYER_HEADER = struct.Struct("<IIB")


class EmbFormatError(ValueError):
    """File does not parse as a valid container (bad magic, truncation, ...)."""


def _check_serializable(dataset: GroupedDataset) -> None:
    if dataset.n == 0:
        raise ValueError("refusing to serialize an empty dataset")
    if dataset.labels.min() < 0 or dataset.labels.max() > 255:
        raise ValueError("labels must fit in a byte (0..255)")
    if dataset.has_groups:
        align = dataset.group_ids[:, 1]
        if not np.isin(align, (0, 1)).all():
            raise ValueError("alignment flags must be 0 or 1")


def write_emb(path: str | Path, dataset: GroupedDataset) -> None:
    """Serialize a dataset to the EMB container (features stored as float32)."""
    _check_serializable(dataset)
    has_groups = 1 if dataset.has_groups else 0
    parts = [
        _EMB_HEADER.pack(EMB_MAGIC, FORMAT_VERSION, dataset.n, dataset.d, has_groups),
        np.ascontiguousarray(dataset.features, dtype="<f4").tobytes(),
        dataset.labels.astype(np.uint8).tobytes(),
    ]
    if has_groups:
        parts.append(dataset.group_ids[:, 1].astype(np.uint8).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_emb(path: str | Path) -> GroupedDataset:
    """Parse an EMB container, raising EmbFormatError on any malformed input."""
    buf = Path(path).read_bytes()
    if len(buf) < _EMB_HEADER.size:
        raise EmbFormatError(f"{path}: truncated header ({len(buf)} bytes)")
    magic, version, n, d, has_groups = _EMB_HEADER.unpack_from(buf)
    if magic != EMB_MAGIC:
        raise EmbFormatError(f"{path}: bad magic {magic!r}, not an EMB file")
    if version != FORMAT_VERSION:
        raise EmbFormatError(f"{path}: unsupported EMB version {version}")
    if has_groups not in (0, 1):
        raise EmbFormatError(f"{path}: has_groups flag must be 0 or 1, got {has_groups}")
    expected = _EMB_HEADER.size + n * d * 4 + n * (2 if has_groups else 1)
    if len(buf) < expected:
        raise EmbFormatError(f"{path}: truncated payload ({len(buf)} of {expected} bytes)")
    if len(buf) > expected:
        raise EmbFormatError(f"{path}: {len(buf) - expected} trailing bytes after payload")

    offset = _EMB_HEADER.size
    features = (
        np.frombuffer(buf, dtype="<f4", count=n * d, offset=offset)
        .reshape(n, d)
        .astype(np.float64)
    )
    offset += n * d * 4
    labels = np.frombuffer(buf, dtype=np.uint8, count=n, offset=offset).astype(np.int64)
    offset += n
    group_ids = None
    if has_groups:
        align = np.frombuffer(buf, dtype=np.uint8, count=n, offset=offset)
        if not np.isin(align, (0, 1)).all():
            raise EmbFormatError(f"{path}: alignment byte outside {{0, 1}}")
        group_ids = np.column_stack([labels, align.astype(np.int64)])
    return GroupedDataset(features=features, labels=labels, group_ids=group_ids)


def write_csv(path: str | Path, dataset: GroupedDataset) -> None:
    """Plain-text alternative to EMB: f0..f{d-1},label[,alignment] with full float64 precision."""
    _check_serializable(dataset)
    header = [f"f{j}" for j in range(dataset.d)] + ["label"]
    if dataset.has_groups:
        header.append("alignment")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.features[i]]
            row.append(str(int(dataset.labels[i])))
            if dataset.has_groups:
                row.append(str(int(dataset.group_ids[i, 1])))
            writer.writerow(row)


def read_csv(path: str | Path) -> GroupedDataset:
    """Parse a dataset CSV written by write_csv (or any file matching its header)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmbFormatError(f"{path}: empty CSV") from None
        has_groups = header[-1] == "alignment"
        label_col = len(header) - (2 if has_groups else 1)
        if header[label_col] != "label" or not all(
            name == f"f{j}" for j, name in enumerate(header[:label_col])
        ):
            raise EmbFormatError(f"{path}: unrecognized CSV header {header[:4]}...")
        features, labels, aligns = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise EmbFormatError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                features.append([float(v) for v in row[:label_col]])
                labels.append(int(row[label_col]))
                if has_groups:
                    aligns.append(int(row[label_col + 1]))
            except ValueError as exc:
                raise EmbFormatError(f"{path}:{lineno}: {exc}") from None
    if not features:
        raise EmbFormatError(f"{path}: CSV has a header but no rows")
    labels_arr = np.asarray(labels, dtype=np.int64)
    group_ids = None
    if has_groups:
        align_arr = np.asarray(aligns, dtype=np.int64)
        if not np.isin(align_arr, (0, 1)).all():
            raise EmbFormatError(f"{path}: alignment values outside {{0, 1}}")
        group_ids = np.column_stack([labels_arr, align_arr])
    return GroupedDataset(
        features=np.asarray(features, dtype=np.float64),
        labels=labels_arr,
        group_ids=group_ids,
    )


def load_dataset(path: str | Path) -> GroupedDataset:
    """Dispatch on extension: .emb is binary, .csv is text."""
    suffix = Path(path).suffix.lower()
    if suffix == ".emb":
        return read_emb(path)
    if suffix == ".csv":
        return read_csv(path)
    raise ValueError(f"unsupported dataset extension {suffix!r} (want .emb or .csv)")


def save_dataset(path: str | Path, dataset: GroupedDataset) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".emb":
        write_emb(path, dataset)
    elif suffix == ".csv":
        write_csv(path, dataset)
    else:
        raise ValueError(f"unsupported dataset extension {suffix!r} (want .emb or .csv)")


Layer = tuple[np.ndarray, np.ndarray, int]


def write_model_layers(path: str | Path, layers: list[Layer]) -> None:
    """Serialize (weights, biases, activation) triples to the checkpoint container."""
    if not layers:
        raise ValueError("refusing to serialize a model with no layers")
    parts = [_MODEL_HEADER.pack(MODEL_MAGIC, len(layers))]
    for weights, biases, activation in layers:
        weights = np.asarray(weights, dtype=np.float64)
        biases = np.asarray(biases, dtype=np.float64)
        if weights.ndim != 2 or biases.shape != (weights.shape[1],):
            raise ValueError("each layer needs a 2-D weight matrix and matching biases")
        if activation not in (ACT_NONE, ACT_RELU):
            raise ValueError(f"unknown activation code {activation}")
        parts.append(_LAYER_HEADER.pack(weights.shape[0], weights.shape[1], activation))
        parts.append(np.ascontiguousarray(weights, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(biases, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_model_layers(path: str | Path) -> list[Layer]:
    buf = Path(path).read_bytes()
    if len(buf) < _MODEL_HEADER.size:
        raise EmbFormatError(f"{path}: truncated header")
    magic, n_layers = _MODEL_HEADER.unpack_from(buf)
    if magic != MODEL_MAGIC:
        raise EmbFormatError(f"{path}: bad magic {magic!r}, not a model checkpoint")
    offset = _MODEL_HEADER.size

    def take(count: int) -> bytes:
        nonlocal offset
        if offset + count > len(buf):
            raise EmbFormatError(f"{path}: truncated payload")
        chunk = buf[offset : offset + count]
        offset += count
        return chunk

    layers: list[Layer] = []
    for _ in range(n_layers):
        rows, cols, activation = _LAYER_HEADER.unpack(take(_LAYER_HEADER.size))
        if activation not in (ACT_NONE, ACT_RELU):
            raise EmbFormatError(f"{path}: unknown activation byte {activation}")
        weights = np.frombuffer(take(rows * cols * 8), dtype="<f8").reshape(rows, cols)
        biases = np.frombuffer(take(cols * 8), dtype="<f8")
        layers.append((weights.astype(np.float64), biases.astype(np.float64), activation))
    if offset != len(buf):
        raise EmbFormatError(f"{path}: {len(buf) - offset} trailing bytes after payload")
    return layers
