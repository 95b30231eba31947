"""Command line wrapper: embexport export --root DIR --backbone NAME --out FILE.

Exit codes: 0 on success (skipped images are warnings, not failures), 2 on
any configuration or runtime error.
"""

from __future__ import annotations

import argparse
import sys
import warnings

from .backbones import BACKBONE_NAMES
from .exporter import ExportManifest, export


def cmd_export(args: argparse.Namespace) -> int:
    manifest = ExportManifest(
        root=args.root,
        backbone=args.backbone,
        out=args.out,
        groups_csv=args.groups,
        batch_size=args.batch_size,
    )
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = export(manifest)
    for entry in caught:
        print(f"warning: {entry.message}", file=sys.stderr)
    print(f"wrote {result.out} (n={result.n}, d={result.d}, skipped={len(result.skipped)})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embexport",
        description="Run a vision backbone over an image folder and write an EMB feature file.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    exp = sub.add_parser("export", help="embed an image folder into one EMB file")
    exp.add_argument(
        "--root",
        required=True,
        metavar="DIR",
        help="image root; immediate subfolders name the classes",
    )
    exp.add_argument(
        "--backbone",
        required=True,
        metavar="NAME",
        help=f"one of: {', '.join(BACKBONE_NAMES)}",
    )
    exp.add_argument("--out", required=True, metavar="FILE", help="EMB output path")
    exp.add_argument(
        "--groups",
        metavar="CSV",
        help="optional filename,alignment table (paths relative to the root)",
    )
    exp.add_argument("--batch-size", type=int, default=16, metavar="N")
    exp.set_defaults(func=cmd_export)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
