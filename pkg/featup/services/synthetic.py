"""
Synthetic oracle data

Each sample is a piecewise-constant "semantic" scene: random rectangles and
ellipses, each region with its own color and unit feature vector. Views are
rendered by jittering the ground truth, blurring it and area-downsampling it,
so the high-resolution features that explain every view are known exactly.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np
import torch
import torch.nn.functional as F
import torchvision.transforms.functional as TF
from PIL import Image, ImageDraw

from featup.core.errors import ParameterError
from featup.core.logging import get_logger
from featup.schemas.corpus import CorpusEntry, CorpusManifest
from featup.schemas.transforms import JitterTransform
from featup.services.tensor_core import FeatureMap, GuidanceImage, derive_seed
from featup.services.transforms import apply, identity_transform, sample_transform
from featup.storage.atomic import PathLike
from featup.storage.images import write_png
from featup.storage.npy import write_npy
from featup.storage.views import (
    FEATURES_FILE,
    GROUND_TRUTH_FILE,
    IMAGE_FILE,
    VIEWS_DIR,
    write_corpus_manifest,
    write_views,
)

logger = get_logger(__name__)

DOWNSAMPLE = 16
BLUR_SIGMA = 2.0
BLUR_KERNEL = 13  # covers +-3 sigma
MIN_REGIONS = 3
MAX_REGIONS = 8


@dataclass
class SyntheticSample:
    image: GuidanceImage
    ground_truth: FeatureMap
    features: FeatureMap
    views: List[Tuple[JitterTransform, FeatureMap]]
    regions: int
    seed: int


def observe(fm: FeatureMap, factor: int = DOWNSAMPLE) -> FeatureMap:
    """Stand-in backbone: Gaussian blur followed by area downsampling"""
    blurred = TF.gaussian_blur(fm, kernel_size=[BLUR_KERNEL, BLUR_KERNEL], sigma=[BLUR_SIGMA, BLUR_SIGMA])
    return F.avg_pool2d(blurred.unsqueeze(0), kernel_size=factor)[0]


def _label_map(rng: np.random.Generator, size: int, regions: int) -> np.ndarray:
    canvas = Image.new("L", (size, size), color=0)
    draw = ImageDraw.Draw(canvas)
    min_extent = max(size // 8, 2)
    for label in range(1, regions):
        w, h = (int(v) for v in rng.integers(min_extent, size // 2 + 1, size=2))
        x0 = int(rng.integers(0, size - w + 1))
        y0 = int(rng.integers(0, size - h + 1))
        box = [x0, y0, x0 + w - 1, y0 + h - 1]
        if rng.random() < 0.5:
            draw.rectangle(box, fill=label)
        else:
            draw.ellipse(box, fill=label)
    return np.asarray(canvas, dtype=np.int64)


def make_synthetic_sample(
    seed: int,
    hi_res: int,
    channels: int,
    num_views: int = 10,
    max_pad: int = 30,
    max_zoom: float = 1.8,
) -> SyntheticSample:
    """One image, its ground-truth features and identity plus ``num_views`` jittered views"""
    if hi_res % DOWNSAMPLE != 0:
        raise ParameterError(f"image size {hi_res} must be divisible by {DOWNSAMPLE}")
    if channels < 1:
        raise ParameterError(f"channels must be positive, got {channels}")

    rng = np.random.default_rng(seed)
    regions = int(rng.integers(MIN_REGIONS, MAX_REGIONS + 1))
    labels = torch.from_numpy(_label_map(rng, hi_res, regions))

    palette = rng.integers(0, 256, size=(regions, 3)).astype(np.float32) / 255.0
    vectors = rng.standard_normal((regions, channels)).astype(np.float32)
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)

    image = torch.from_numpy(palette)[labels].permute(2, 0, 1).contiguous()
    ground_truth = torch.from_numpy(vectors)[labels].permute(2, 0, 1).contiguous()

    identity = identity_transform(hi_res, hi_res)
    features = observe(ground_truth)
    views = [(identity, features)]
    for index in range(num_views):
        t = sample_transform(derive_seed(seed, index), max_pad, max_zoom, hi_res, hi_res)
        views.append((t, observe(apply(t, ground_truth, hi_res, hi_res))))

    return SyntheticSample(
        image=image,
        ground_truth=ground_truth,
        features=features,
        views=views,
        regions=regions,
        seed=seed,
    )


def synth_generate(
    seed: int,
    hi_res: int,
    channels: int,
    num_images: int,
    out_dir: PathLike,
    num_views: int = 10,
    max_pad: int = 30,
    max_zoom: float = 1.8,
) -> CorpusManifest:
    """Write ``num_images`` samples, one directory each, plus ``corpus.json``"""
    if num_images < 1:
        raise ParameterError(f"num_images must be positive, got {num_images}")
    out_dir = Path(out_dir)
    entries = []
    for index in range(num_images):
        image_seed = derive_seed(seed, index)
        sample = make_synthetic_sample(image_seed, hi_res, channels, num_views, max_pad, max_zoom)
        name = f"img_{index:04d}"
        image_dir = out_dir / name
        write_png(sample.image, image_dir / IMAGE_FILE)
        write_npy(sample.ground_truth, image_dir / GROUND_TRUTH_FILE)
        write_npy(sample.features, image_dir / FEATURES_FILE)
        write_views(image_dir / VIEWS_DIR, sample.views, hi_res, hi_res)
        entries.append(CorpusEntry(name=name, seed=image_seed, regions=sample.regions))
        logger.debug("synthetic_image_written", name=name, regions=sample.regions)

    manifest = CorpusManifest(
        seed=seed,
        hi_res=hi_res,
        channels=channels,
        downsample=DOWNSAMPLE,
        images=entries,
    )
    write_corpus_manifest(out_dir, manifest)
    logger.info("synthetic_corpus_written", out_dir=str(out_dir), images=num_images, hi_res=hi_res)
    return manifest
