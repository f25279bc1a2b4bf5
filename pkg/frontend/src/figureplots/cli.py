"""Command-line figure renderer: `figureplots render <kind> <in.csv> -o <out.svg>`."""

from __future__ import annotations

import argparse
import sys

from .figures import RENDERERS, FigureRequest, FigureSchemaError, render

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_IO = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="figureplots",
        description="Render batchbandit CSV outputs as static figures",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser(
        "render",
        help="render one figure",
        description="Figure kinds: " + "; ".join(
            f"{kind} ({source})" for kind, source in [
                ("z-hist", "bias-demo CSV, Normal overlay"),
                ("simplex", "convergence-study CSV with 3 alpha columns"),
                ("alpha-hist", "convergence-study CSV, exact Beta(1, K'-1) overlay"),
                ("fpr-eta", "metrics CSV, FPR vs eta lines with nominal reference"),
                ("fpr-kprime", "metrics CSV, FPR bars by dataset"),
                ("metric-bars", "metrics CSV, bars for --metric"),
            ]
        ),
    )
    p.add_argument("kind", choices=sorted(RENDERERS))
    p.add_argument("input", help="input CSV path")
    p.add_argument("-o", "--out", required=True, help="output image path (.svg or .png)")
    p.add_argument("--k-prime", dest="k_prime", type=int,
                   help="equivalent-best count for the Beta overlay (alpha-hist)")
    p.add_argument("--statistic", choices=("nb", "wb"),
                   help="restrict z-hist to one statistic")
    p.add_argument("--metric", default="power",
                   help="metrics-CSV column to plot for metric-bars")
    p.add_argument("--nominal", type=float, default=0.10,
                   help="reference rate for fpr charts")
    p.add_argument("--bins", type=int, help="histogram bin count (alpha-hist)")
    p.add_argument("--title", help="override the figure title")
    p.set_defaults(func=cmd_render)
    return parser


def cmd_render(args: argparse.Namespace) -> int:
    request = FigureRequest(
        kind=args.kind,
        input_path=args.input,
        output_path=args.out,
        k_prime=args.k_prime,
        statistic=args.statistic,
        metric=args.metric,
        nominal=args.nominal,
        bins=args.bins,
        title=args.title,
    )
    render(request)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FigureSchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
