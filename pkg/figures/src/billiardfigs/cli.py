"""CLI: `figures <figure-id> --in <dir> --out <file>` (SVG or PNG).

Exit codes: 0 success, 2 schema or usage error, 1 unexpected failure.
"""
from __future__ import annotations

import argparse
import sys

from .io import SchemaError
from .render import FIGURE_IDS, FigureSpec, render


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="figures")
    p.add_argument("figure_id", choices=FIGURE_IDS)
    p.add_argument("--in", dest="input_dir", required=True,
                   help="directory holding the engine CSV outputs")
    p.add_argument("--out", dest="output", required=True,
                   help="output image path (.svg or .png)")
    p.add_argument("--input", action="append", default=[],
                   metavar="ROLE=FILENAME",
                   help="override a default input file name")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    for item in args.input:
        if "=" not in item:
            print(f"bad --input '{item}', expected ROLE=FILENAME",
                  file=sys.stderr)
            return 2
        role, name = item.split("=", 1)
        overrides[role] = name
    try:
        spec = FigureSpec(args.figure_id, args.input_dir, args.output,
                          inputs=overrides)
        path = render(spec)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
