"""train-implicit and train-jbu subcommands"""
from featup.cli.common import build_config, loss_trace_path, write_loss_trace
from featup.core.logging import get_logger
from featup.schemas.training import TrainConfig
from featup.services.trainer import train_implicit, train_jbu
from featup.storage.checkpoint import save_checkpoint
from featup.storage.images import read_png
from featup.storage.views import DirectoryViewProvider, load_corpus

logger = get_logger(__name__)


def _common_flags(parser, defaults: TrainConfig) -> None:
    parser.add_argument("--out", required=True, help="checkpoint path")
    parser.add_argument("--steps", type=int, default=defaults.steps)
    parser.add_argument("--lr", type=float, default=defaults.lr)
    parser.add_argument("--kernel-size", type=int, default=defaults.kernel_size, help="downsampler kernel size")
    parser.add_argument("--proj-dim", type=int, default=defaults.proj_dim)
    parser.add_argument("--jitters", type=int, default=defaults.jitters_per_image)
    parser.add_argument("--max-pad", type=int, default=defaults.max_pad)
    parser.add_argument("--max-zoom", type=float, default=defaults.max_zoom)
    parser.add_argument("--seed", type=int, default=defaults.seed)
    parser.add_argument("--downsampler", choices=["attention", "simple"], default=defaults.downsampler)
    parser.add_argument("--no-uncertainty", action="store_true", help="fix the per-pixel scale to 1")
    parser.add_argument("--log-every", type=int, default=defaults.log_every)


def register(subparsers) -> None:
    implicit = TrainConfig.implicit()
    parser = subparsers.add_parser("train-implicit", help="fit an implicit upsampler to one image")
    parser.add_argument("--image", required=True, help="guidance image (PNG)")
    parser.add_argument("--views", required=True, help="view directory or image directory")
    _common_flags(parser, implicit)
    parser.add_argument("--tv", type=float, default=implicit.tv_weight, help="total variation weight")
    parser.add_argument("--hidden-dim", type=int, default=implicit.hidden_dim)
    parser.add_argument("--no-color", action="store_true", help="encode coordinates only")
    parser.add_argument("--explicit", action="store_true", help="learn a feature buffer instead of the network")
    parser.set_defaults(handler=run_implicit)

    jbu = TrainConfig.jbu()
    parser = subparsers.add_parser("train-jbu", help="train a JBU stack on a corpus")
    parser.add_argument("--corpus", required=True, help="corpus directory with corpus.json")
    _common_flags(parser, jbu)
    parser.add_argument("--batch", type=int, default=jbu.images_per_batch)
    parser.add_argument("--radius", type=int, default=jbu.jbu_radius)
    parser.add_argument("--range-mode", choices=["softmax", "euclidean", "cosine"], default=jbu.range_mode)
    parser.add_argument("--no-range-mlp", action="store_true", help="compare raw guidance colors")
    parser.add_argument("--backend", choices=["fast", "reference"], default="fast")
    parser.set_defaults(handler=run_jbu)


def _shared_values(args) -> dict:
    return dict(
        steps=args.steps,
        lr=args.lr,
        kernel_size=args.kernel_size,
        proj_dim=args.proj_dim,
        jitters_per_image=args.jitters,
        max_pad=args.max_pad,
        max_zoom=args.max_zoom,
        seed=args.seed,
        downsampler=args.downsampler,
        use_uncertainty=not args.no_uncertainty,
        log_every=args.log_every,
    )


def _save(checkpoint, out: str) -> None:
    save_checkpoint(checkpoint, out)
    write_loss_trace(checkpoint.loss_trace, loss_trace_path(out))


def run_implicit(args) -> int:
    cfg = build_config(
        TrainConfig.implicit,
        tv_weight=args.tv,
        hidden_dim=args.hidden_dim,
        color_features=not args.no_color,
        explicit=args.explicit,
        **_shared_values(args),
    )
    image = read_png(args.image)
    views = DirectoryViewProvider(args.views)
    _save(train_implicit(image, views, cfg), args.out)
    return 0


def run_jbu(args) -> int:
    cfg = build_config(
        TrainConfig.jbu,
        images_per_batch=args.batch,
        jbu_radius=args.radius,
        range_mode=args.range_mode,
        use_range_mlp=not args.no_range_mlp,
        **_shared_values(args),
    )
    corpus = load_corpus(args.corpus)
    _save(train_jbu(corpus, cfg, backend=args.backend), args.out)
    return 0
