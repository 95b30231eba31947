"""Export image folders through a vision backbone into EMB feature files."""

from .backbones import BACKBONE_NAMES, Backbone, get_backbone, preprocess
from .exporter import (
    ExportManifest,
    ExportResult,
    export,
    load_group_csv,
    scan_images,
)

__version__ = "0.1.0"

__all__ = [
    "BACKBONE_NAMES",
    "Backbone",
    "ExportManifest",
    "ExportResult",
    "export",
    "get_backbone",
    "load_group_csv",
    "preprocess",
    "scan_images",
]
