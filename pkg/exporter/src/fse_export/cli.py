"""Command-line front end: ``export`` and ``verify``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from fse_export.backbone import BACKBONES
from fse_export.extract import ExportError, ExportJob, extract
from fse_export.verify import verify
from fse_export.writer import FormatError


def build_parser():
    parser = argparse.ArgumentParser(prog="fse-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="embed an image folder into a binary file")
    p.add_argument("--images", required=True,
                   help="folder with one subdirectory per class")
    p.add_argument("--backbone", default="resnet18", choices=sorted(BACKBONES))
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", default=None,
                   help="state-dict file; omit for a fixed random initialization")
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--size", type=int, default=84, help="square resize in pixels")

    p = sub.add_parser("verify", help="re-read a file and print per-class counts")
    p.add_argument("path")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export":
            job = ExportJob(images=args.images, backbone=args.backbone,
                            out=args.out, checkpoint=args.checkpoint,
                            batch_size=args.batch, size=args.size)
            manifest = extract(job)
            json.dump(manifest, sys.stdout, indent=2)
            sys.stdout.write("\n")
        else:
            print(verify(args.path).render())
        return 0
    except (ExportError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


def entry():
    raise SystemExit(main())
