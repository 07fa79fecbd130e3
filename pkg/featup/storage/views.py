"""
View directory contract

A view directory holds ``<digest>.npy`` for every ingested transform plus
``manifest.json`` mapping each digest to its transform. An image directory
holds ``image.png``, ``features.npy`` and a ``views/`` directory; a corpus is
a directory of image directories indexed by ``corpus.json``.
"""
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

from featup.core.errors import FormatError, MissingViewError
from featup.core.logging import get_logger
from featup.schemas.corpus import CorpusManifest
from featup.schemas.transforms import JitterTransform, ViewManifest
from featup.services.tensor_core import FeatureMap
from featup.services.trainer import CorpusItem
from featup.storage.atomic import PathLike, write_text
from featup.storage.images import read_png
from featup.storage.npy import read_npy, write_npy

logger = get_logger(__name__)

VIEW_MANIFEST = "manifest.json"
CORPUS_MANIFEST = "corpus.json"
IMAGE_FILE = "image.png"
FEATURES_FILE = "features.npy"
GROUND_TRUTH_FILE = "ground_truth.npy"
VIEWS_DIR = "views"


def write_views(
    views_dir: PathLike,
    views: Sequence[Tuple[JitterTransform, FeatureMap]],
    image_h: int,
    image_w: int,
) -> ViewManifest:
    """Write every view and the manifest; the first identity transform names the identity view"""
    views_dir = Path(views_dir)
    identity = next((t.digest() for t, _ in views if t.is_identity), None)
    if identity is None:
        raise MissingViewError("a view directory needs an identity view")
    for t, fm in views:
        write_npy(fm, views_dir / f"{t.digest()}.npy")
    manifest = ViewManifest(
        image_h=image_h,
        image_w=image_w,
        identity=identity,
        views={t.digest(): t for t, _ in views},
    )
    write_text(views_dir / VIEW_MANIFEST, manifest.model_dump_json(indent=2))
    return manifest


def resolve_views_dir(path: PathLike) -> Path:
    """Accept a view directory or an image directory containing ``views/``"""
    path = Path(path)
    if (path / VIEW_MANIFEST).is_file():
        return path
    if (path / VIEWS_DIR / VIEW_MANIFEST).is_file():
        return path / VIEWS_DIR
    raise FileNotFoundError(2, "no view manifest found", str(path / VIEW_MANIFEST))


class DirectoryViewProvider:
    """Reads views lazily from a view directory"""

    def __init__(self, views_dir: PathLike):
        self.views_dir = resolve_views_dir(views_dir)
        try:
            self.manifest = ViewManifest.model_validate_json((self.views_dir / VIEW_MANIFEST).read_text("utf-8"))
        except ValueError as exc:
            raise FormatError(f"{self.views_dir / VIEW_MANIFEST}: malformed view manifest") from exc
        self._cache: Dict[str, FeatureMap] = {}

    def transforms(self) -> List[JitterTransform]:
        return list(self.manifest.views.values())

    def identity(self) -> FeatureMap:
        t = self.manifest.views.get(self.manifest.identity)
        if t is None:
            raise MissingViewError(f"manifest names identity view {self.manifest.identity} but does not list it")
        return self.view(t)

    def view(self, t: JitterTransform) -> FeatureMap:
        digest = t.digest()
        if digest in self._cache:
            return self._cache[digest]
        path = self.views_dir / f"{digest}.npy"
        if digest not in self.manifest.views or not path.is_file():
            logger.warning("view_missing", transform=digest, path=str(path))
            raise MissingViewError(f"missing view for {t.describe()} ({path})", transform=t)
        fm = read_npy(path)
        self._cache[digest] = fm
        return fm


def load_image_dir(image_dir: PathLike) -> CorpusItem:
    image_dir = Path(image_dir)
    views = DirectoryViewProvider(image_dir / VIEWS_DIR)
    features_path = image_dir / FEATURES_FILE
    features = read_npy(features_path) if features_path.is_file() else views.identity()
    return CorpusItem(image=read_png(image_dir / IMAGE_FILE), features=features, views=views)


def write_corpus_manifest(root: PathLike, manifest: CorpusManifest) -> None:
    write_text(Path(root) / CORPUS_MANIFEST, manifest.model_dump_json(indent=2))


def read_corpus_manifest(root: PathLike) -> CorpusManifest:
    path = Path(root) / CORPUS_MANIFEST
    try:
        return CorpusManifest.model_validate_json(path.read_text("utf-8"))
    except ValueError as exc:
        raise FormatError(f"{path}: malformed corpus manifest") from exc


def load_corpus(root: PathLike) -> List[CorpusItem]:
    manifest = read_corpus_manifest(root)
    items = [load_image_dir(Path(root) / entry.name) for entry in manifest.images]
    logger.info("corpus_loaded", root=str(root), images=len(items))
    return items
