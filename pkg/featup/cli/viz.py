from featup.services.visualization import pca_visualize
from featup.storage.npy import read_npy


def register(subparsers) -> None:
    parser = subparsers.add_parser("viz", help="render low- and high-resolution features through a shared PCA")
    parser.add_argument("--lr", required=True, help="low-resolution features (NPY)")
    parser.add_argument("--hr", required=True, help="high-resolution features (NPY)")
    parser.add_argument("--out", required=True, help="output image (PNG)")
    parser.add_argument("--first-component", type=int, default=0, help="index of the first principal component shown")
    parser.set_defaults(handler=run)


def run(args) -> int:
    pca_visualize(read_npy(args.lr), read_npy(args.hr), args.out, first_component=args.first_component)
    return 0
