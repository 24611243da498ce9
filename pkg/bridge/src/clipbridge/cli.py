"""Command-line entry point: ``clipbridge export``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from clipbridge.backbones import BackboneError, load_backbone
from clipbridge.export import export_scores, load_aliases, load_classes, load_rgb


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clipbridge")
    sub = parser.add_subparsers(dest="command", required=True)
    exp = sub.add_parser("export", help="write multi-scale score maps for an RGB image")
    exp.add_argument("--rgb", required=True, help="input image (any PIL-readable format)")
    exp.add_argument("--classes", required=True, help="class list, one name per line")
    exp.add_argument("--aliases", default=None,
                     help="optional tab-separated name/prompt file")
    exp.add_argument("--scales", default="1,2",
                     help="comma-separated scale factors (default: 1,2)")
    exp.add_argument("--out", required=True, help="output directory")
    exp.add_argument("--backbone", default="prototype",
                     help="'prototype' (offline) or 'clip:<model>' (default: prototype)")
    exp.add_argument("--sharpness", type=float, default=20.0,
                     help="prototype backbone score sharpness (default: 20)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scales = [float(s) for s in args.scales.split(",") if s.strip()]
        backbone = load_backbone(args.backbone, sharpness=args.sharpness)
        rgb = load_rgb(args.rgb)
        names = load_classes(args.classes)
        aliases = {}
        if args.aliases:
            aliases = load_aliases(args.aliases)
        elif Path(args.classes).with_name("aliases.txt").exists():
            aliases = load_aliases(Path(args.classes).with_name("aliases.txt"))
        written = export_scores(rgb, names, scales, args.out, backbone, aliases)
    except (BackboneError, ValueError, OSError) as exc:
        print(f"export error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
