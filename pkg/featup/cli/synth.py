from featup.core.logging import get_logger
from featup.services.synthetic import synth_generate

logger = get_logger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("synth", help="generate a synthetic corpus with known ground truth")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--size", type=int, default=224, help="image size, divisible by 16")
    parser.add_argument("--channels", type=int, default=32)
    parser.add_argument("--count", type=int, default=1, help="number of images")
    parser.add_argument("--views", type=int, default=10, help="jittered views per image")
    parser.add_argument("--max-pad", type=int, default=30)
    parser.add_argument("--max-zoom", type=float, default=1.8)
    parser.add_argument("--out", required=True, help="output directory")
    parser.set_defaults(handler=run)


def run(args) -> int:
    manifest = synth_generate(
        seed=args.seed,
        hi_res=args.size,
        channels=args.channels,
        num_images=args.count,
        out_dir=args.out,
        num_views=args.views,
        max_pad=args.max_pad,
        max_zoom=args.max_zoom,
    )
    logger.info("synth_complete", images=len(manifest.images), out=args.out)
    return 0
