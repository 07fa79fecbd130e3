import sys

from featup.core.errors import UsageError
from featup.services.bench import TABLE8_SHAPES, format_table, parse_shape, run_bench, write_bench_csv


def register(subparsers) -> None:
    parser = subparsers.add_parser("bench", help="benchmark the adaptive convolution backends")
    parser.add_argument("--shapes", choices=["table8", "custom"], default="table8")
    parser.add_argument(
        "--shape",
        action="append",
        default=[],
        help="B,H,W,C,R for --shapes custom (repeatable)",
    )
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True, help="output CSV")
    parser.set_defaults(handler=run)


def run(args) -> int:
    if args.shapes == "custom":
        if not args.shape:
            raise UsageError("--shapes custom needs at least one --shape B,H,W,C,R")
        shapes = [parse_shape(text) for text in args.shape]
    else:
        shapes = TABLE8_SHAPES
    records = run_bench(shapes, repeats=args.repeats, seed=args.seed)
    write_bench_csv(records, args.out)
    print(format_table(records), file=sys.stdout)
    return 0
