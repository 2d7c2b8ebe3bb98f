"""plot <kind> --in <dir> --out <file>"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .io import SchemaError
from .render import KINDS, FigureSpec, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sinebeta-plot",
        description="Render a static figure from sinebeta engine output files",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("plot", help="render one figure kind")
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--in", dest="in_dir", required=True,
                   help="directory holding the engine's csv/json files")
    p.add_argument("--out", dest="out_path", required=True,
                   help="image file to write (.svg or .png)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = FigureSpec(
            kind=args.kind, in_dir=Path(args.in_dir), out_path=Path(args.out_path)
        )
        out = render(spec)
    except SchemaError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
