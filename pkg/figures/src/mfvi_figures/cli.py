"""Script entry point: one subcommand per figure kind.

    mfvi-figures hist_grid   --in hist.csv        --out fig1.png
    mfvi-figures convergence --in summary.csv     --out fig2.png
    mfvi-figures elbo_decay  --in functionals.csv --out fig3.png
    mfvi-figures boxplots    --in functionals.csv --out fig4.png [--functional g_rho]

Exit codes: 0 on success, 2 on bad arguments or a schema mismatch.
"""

from __future__ import annotations

import argparse
import sys

from .render import KINDS, FigureSpec, render
from .schemas import SchemaError


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfvi-figures",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind)
        p.add_argument("--in", dest="inputs", action="append", required=True,
                       metavar="CSV", help="input CSV path (repeatable)")
        p.add_argument("--out", required=True, metavar="IMAGE",
                       help="output image path (.png, .svg, or .pdf)")
        p.add_argument("--functional", default=None,
                       help="functional to plot (boxplots/convergence)")
    return parser


def run_cli(argv) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    spec = FigureSpec(kind=args.kind, inputs=tuple(args.inputs), out_path=args.out,
                      functional=args.functional)
    try:
        render(spec)
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))
