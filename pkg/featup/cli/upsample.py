from featup.core.errors import UsageError
from featup.core.logging import get_logger
from featup.services.trainer import ImplicitCheckpoint, upsample
from featup.storage.checkpoint import load_checkpoint
from featup.storage.images import read_png
from featup.storage.npy import read_npy, write_npy

logger = get_logger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("upsample", help="upsample features with a trained checkpoint")
    parser.add_argument("--ckpt", required=True)
    parser.add_argument("--image", required=True, help="guidance image (PNG)")
    parser.add_argument("--features", help="low-resolution features (NPY); required for JBU checkpoints")
    parser.add_argument("--factor", type=int, required=True)
    parser.add_argument("--out", required=True, help="output features (NPY)")
    parser.add_argument("--backend", choices=["fast", "reference"], default="fast")
    parser.set_defaults(handler=run)


def run(args) -> int:
    if args.factor < 1:
        raise UsageError(f"--factor must be a positive integer, got {args.factor}")
    checkpoint = load_checkpoint(args.ckpt)
    image = read_png(args.image)
    features = read_npy(args.features) if args.features else None
    if features is not None:
        h, w = features.shape[-2:]
    elif isinstance(checkpoint, ImplicitCheckpoint):
        h, w = checkpoint.feature_shape[1:]
    else:
        raise UsageError("the following arguments are required for JBU checkpoints: --features")

    out = upsample(checkpoint, image, features, h * args.factor, w * args.factor, backend=args.backend)
    write_npy(out, args.out)
    logger.info("upsample_complete", kind=checkpoint.kind, shape=list(out.shape), out=args.out)
    return 0
