"""
PCA visualization of feature maps

A 3-component PCA is fit on the low-resolution map and both maps are projected
through it, so colors are comparable between the two panels.
"""
from typing import Tuple

import torch
import torch.nn.functional as F

from featup.core.errors import ParameterError, ShapeMismatchError
from featup.core.logging import get_logger
from featup.services.tensor_core import FeatureMap, check_feature_map, pca_fit
from featup.storage.atomic import PathLike
from featup.storage.images import write_png

logger = get_logger(__name__)


def pca_rgb(fm_lr: FeatureMap, fm_hr: FeatureMap, first_component: int = 0) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Map both feature maps to (3, H, W) colors in [0, 1]

    Components ``first_component .. first_component + 2`` are min-max scaled
    by the low-resolution map's range; a component with zero range maps to 0.5.
    """
    check_feature_map(fm_lr, "low-resolution features")
    check_feature_map(fm_hr, "high-resolution features")
    if fm_lr.dim() != 3 or fm_hr.dim() != 3:
        raise ParameterError("visualization expects unbatched (C, H, W) maps")
    if fm_lr.shape[0] != fm_hr.shape[0]:
        raise ShapeMismatchError(f"channel counts differ: {fm_lr.shape[0]} vs {fm_hr.shape[0]}")
    if first_component < 0:
        raise ParameterError(f"first component must be >= 0, got {first_component}")
    needed = first_component + 3
    c, h, w = fm_lr.shape
    if needed > min(c, h * w):
        raise ParameterError(f"need at least {needed} channels and pixels for components {first_component}..{needed - 1}")

    pca = pca_fit(fm_lr, needed)
    components = pca.components[first_component:needed]
    mean = pca.mean[:, None, None]
    proj_lr = torch.einsum("kc,chw->khw", components, fm_lr - mean)
    proj_hr = torch.einsum("kc,chw->khw", components, fm_hr - mean)

    low = proj_lr.amin(dim=(1, 2), keepdim=True)
    span = proj_lr.amax(dim=(1, 2), keepdim=True) - low
    flat = span <= 0

    def scale(proj: torch.Tensor) -> torch.Tensor:
        scaled = (proj - low) / torch.where(flat, torch.ones_like(span), span)
        scaled = torch.where(flat.expand_as(scaled), torch.full_like(scaled, 0.5), scaled)
        return scaled.clamp(0.0, 1.0)

    return scale(proj_lr), scale(proj_hr)


def pca_visualize(fm_lr: FeatureMap, fm_hr: FeatureMap, path: PathLike, first_component: int = 0) -> torch.Tensor:
    """Write the two PCA panels side by side as an RGB PNG; the low-res panel is shown at high-res size"""
    rgb_lr, rgb_hr = pca_rgb(fm_lr, fm_hr, first_component)
    height, width = rgb_hr.shape[-2:]
    if rgb_lr.shape[-2:] != rgb_hr.shape[-2:]:
        rgb_lr = F.interpolate(rgb_lr[None], size=(height, width), mode="nearest")[0]
    canvas = torch.cat([rgb_lr, rgb_hr], dim=-1)
    write_png(canvas, path)
    logger.info("visualization_written", path=str(path), first_component=first_component)
    return canvas
