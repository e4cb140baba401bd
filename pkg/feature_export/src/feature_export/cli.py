"""Command line: feature-export export --image ... --mask ... --out-stem ..."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .backbones import BackboneError
from .export import ExportJob, export_features


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="feature-export",
        description="Run a vision backbone over pose variants of a masked "
                    "image and emit FMAP feature files.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="export feature maps for one image")
    p.add_argument("--image", required=True, help="input image (PNG)")
    p.add_argument("--mask", required=True, help="object mask (PNG/PGM, nonzero = object)")
    p.add_argument("--out-stem", required=True,
                   help="output stem; files become <stem>.v<00..23>.fmap")
    p.add_argument("--grid-n", type=int, default=32, help="token grid size")
    p.add_argument("--variants", choices=("all", "identity"), default="all")
    p.add_argument("--backbone", default="tinycnn",
                   help="backbone id: tinycnn[:seed] or dinov2_vits14 etc.")
    p.set_defaults(func=cmd_export)
    return parser


def cmd_export(args) -> int:
    job = ExportJob(image_path=Path(args.image), mask_path=Path(args.mask),
                    out_stem=Path(args.out_stem), grid_n=args.grid_n,
                    variants=args.variants, backbone_id=args.backbone)
    written = export_features(job)
    print(f"wrote {len(written)} file(s): {written[0]} ...")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (BackboneError, FileNotFoundError, ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
