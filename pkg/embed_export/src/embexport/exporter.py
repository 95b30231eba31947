"""Image-folder to EMB export.

Scans a root directory whose immediate subfolders name the classes, runs a
backbone over every image, and writes features, labels, and optional
alignment flags as an EMB container. The byte layout is the contract with
any consumer:

    bytes 0-3    magic b"LFRE"
    bytes 4-7    format version, uint32 little-endian (currently 1)
    bytes 8-11   n, number of rows, uint32 LE
    bytes 12-15  d, feature dimension, uint32 LE
    byte  16     has_groups flag (0 or 1)
    then         n*d float32 LE features, row-major
    then         n uint8 class labels
    then         n uint8 alignment flags (0 majority, 1 minority), only if
                 has_groups is 1

Determinism: images are sorted by their path relative to the root before
batching, preprocessing is fixed, and inference runs in eval mode, so the
same folder exports to identical bytes every time.
"""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import backbones

EMB_MAGIC = b"LFRE"
EMB_VERSION = 1
_EMB_HEADER = struct.Struct("<4sIIIB")

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}


@dataclass
class ExportManifest:
    """Everything one export needs: where to look, what to run, where to write."""

    root: str | Path
    backbone: str
    out: str | Path
    groups_csv: str | Path | None = None
    batch_size: int = 16

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class ExportResult:
    out: Path
    n: int
    d: int
    class_ids: dict[str, int]
    skipped: list[tuple[str, str]] = field(default_factory=list)


def scan_images(root: str | Path) -> tuple[list[tuple[str, int]], dict[str, int]]:
    """List (relative posix path, class id) sorted by path, plus folder -> id.

    Immediate subfolders of the root are the classes, in lexicographic
    order. Image files sitting directly in the root match no class and are
    an error; non-image files are ignored everywhere.
    """
    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"image root {root} is not a directory")
    strays = sorted(
        p.name
        for p in root.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )
    if strays:
        raise ValueError(
            "images not matched by the label rule (every image must sit in a "
            f"class subfolder): {strays[:3]}"
        )
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    class_ids = {p.name: i for i, p in enumerate(class_dirs)}
    if len(class_ids) > 256:
        raise ValueError("more than 256 class folders cannot be labeled in one byte")
    pairs = []
    for folder in class_dirs:
        for path in folder.rglob("*"):
            if path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES:
                pairs.append((path.relative_to(root).as_posix(), class_ids[folder.name]))
    if not pairs:
        raise ValueError(f"no images under {root}")
    pairs.sort()
    return pairs, class_ids


def load_group_csv(path: str | Path) -> dict[str, int]:
    """Parse a 'filename,alignment' table; keys are paths relative to the root."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["filename", "alignment"]:
            raise ValueError(
                f"{path}: group CSV must start with a 'filename,alignment' header, got {header}"
            )
        table: dict[str, int] = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            name, value = row
            if name in table:
                raise ValueError(f"{path}:{lineno}: duplicate filename {name!r}")
            if value not in ("0", "1"):
                raise ValueError(
                    f"{path}:{lineno}: alignment must be 0 or 1, got {value!r}"
                )
            table[name] = int(value)
    if not table:
        raise ValueError(f"{path}: group CSV has no rows")
    return table


def _write_emb(
    path: str | Path,
    features: np.ndarray,
    labels: np.ndarray,
    aligns: np.ndarray | None,
) -> None:
    features = np.ascontiguousarray(features, dtype="<f4")
    n, d = features.shape
    parts = [
        _EMB_HEADER.pack(EMB_MAGIC, EMB_VERSION, n, d, 0 if aligns is None else 1),
        features.tobytes(),
        labels.astype("<u1").tobytes(),
    ]
    if aligns is not None:
        parts.append(aligns.astype("<u1").tobytes())
    Path(path).write_bytes(b"".join(parts))


def export(manifest: ExportManifest) -> ExportResult:
    """Run the manifest: scan, embed, and write one EMB file.

    Unreadable images are skipped with a warning and listed in the result;
    everything else about the manifest is validated before the backbone is
    built, so cheap mistakes fail fast.
    """
    if manifest.backbone not in backbones.BACKBONE_NAMES:
        raise ValueError(
            f"unknown backbone {manifest.backbone!r} "
            f"(known: {', '.join(backbones.BACKBONE_NAMES)})"
        )
    pairs, class_ids = scan_images(manifest.root)
    groups = (
        load_group_csv(manifest.groups_csv) if manifest.groups_csv is not None else None
    )

    root = Path(manifest.root)
    kept: list[tuple[str, int]] = []
    arrays: list[np.ndarray] = []
    skipped: list[tuple[str, str]] = []
    for rel, label in pairs:
        try:
            with Image.open(root / rel) as img:
                arrays.append(backbones.preprocess(img))
        except (OSError, SyntaxError, ValueError) as exc:
            warnings.warn(f"skipping unreadable image {rel}: {exc}", stacklevel=2)
            skipped.append((rel, str(exc)))
            continue
        kept.append((rel, label))
    if not kept:
        raise ValueError(f"no readable images under {root}")
    if groups is not None:
        missing = [rel for rel, _ in kept if rel not in groups]
        if missing:
            raise ValueError(
                f"group CSV does not cover all images: missing {missing[:3]} "
                f"({len(missing)} of {len(kept)})"
            )

    backbone = backbones.get_backbone(manifest.backbone)
    chunks = []
    for start in range(0, len(arrays), manifest.batch_size):
        batch = np.stack(arrays[start : start + manifest.batch_size])
        chunks.append(backbone.features(batch))
    features = np.concatenate(chunks, axis=0)

    labels = np.asarray([label for _, label in kept], dtype=np.uint8)
    aligns = None
    if groups is not None:
        aligns = np.asarray([groups[rel] for rel, _ in kept], dtype=np.uint8)
    _write_emb(manifest.out, features, labels, aligns)
    return ExportResult(
        out=Path(manifest.out),
        n=len(kept),
        d=int(features.shape[1]),
        class_ids=class_ids,
        skipped=skipped,
    )
