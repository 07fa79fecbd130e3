"""
Jitter transforms: sampling and exact replay on images and feature maps
"""
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from featup.core.config import settings
from featup.core.errors import ParameterError
from featup.schemas.transforms import JitterTransform
from featup.services.tensor_core import FeatureMap, as_batch, check_feature_map


def sample_transform(
    rng_seed: int,
    max_pad: int,
    max_zoom: float,
    ref_h: Optional[int] = None,
    ref_w: Optional[int] = None,
) -> JitterTransform:
    """
    Draw a transform uniformly: pads in [0, max_pad], zoom in [1, max_zoom],
    crop offset anywhere in the valid window, horizontal flip with p=0.5
    """
    if max_pad < 0:
        raise ParameterError(f"max_pad must be >= 0, got {max_pad}")
    if max_zoom < 1.0:
        raise ParameterError(f"max_zoom must be >= 1, got {max_zoom}")
    ref_h = ref_h or settings.DEFAULT_IMAGE_SIZE
    ref_w = ref_w or settings.DEFAULT_IMAGE_SIZE

    rng = np.random.default_rng(rng_seed)
    pad_top, pad_bottom, pad_left, pad_right = (int(p) for p in rng.integers(0, max_pad + 1, size=4))
    zoom = float(rng.uniform(1.0, max_zoom)) if max_zoom > 1.0 else 1.0
    padded_h = ref_h + pad_top + pad_bottom
    padded_w = ref_w + pad_left + pad_right
    offset_y = float(rng.uniform(0.0, 1.0)) * (padded_h - padded_h / zoom)
    offset_x = float(rng.uniform(0.0, 1.0)) * (padded_w - padded_w / zoom)
    hflip = bool(rng.random() < 0.5)

    return JitterTransform(
        pad_left=pad_left,
        pad_right=pad_right,
        pad_top=pad_top,
        pad_bottom=pad_bottom,
        zoom=zoom,
        crop_offset_y=offset_y,
        crop_offset_x=offset_x,
        hflip=hflip,
        ref_h=ref_h,
        ref_w=ref_w,
        seed=rng_seed,
    )


def transform_grid(t: JitterTransform, out_h: int, out_w: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """
    Sampling grid (out_h, out_w, 2) in normalized (x, y) source coordinates

    Output pixel centers are mapped through flip, then into the crop window of
    the padded reference image, then back to unpadded reference coordinates.
    Coordinates outside [-1, 1] land in the reflection padding.
    """
    u = (torch.arange(out_w, dtype=torch.float64) + 0.5) / out_w
    v = (torch.arange(out_h, dtype=torch.float64) + 0.5) / out_h
    if t.hflip:
        u = 1.0 - u
    x_ref = t.crop_offset_x + u * t.window_w - t.pad_left
    y_ref = t.crop_offset_y + v * t.window_h - t.pad_top
    xs = 2.0 * x_ref / t.ref_w - 1.0
    ys = 2.0 * y_ref / t.ref_h - 1.0
    grid = torch.stack(
        [xs[None, :].expand(out_h, out_w), ys[:, None].expand(out_h, out_w)],
        dim=-1,
    )
    return grid.to(dtype)


def apply(t: JitterTransform, fm: FeatureMap, out_h: int, out_w: int) -> FeatureMap:
    """Replay a transform on a (C, H, W) or (B, C, H, W) map at any resolution"""
    if out_h < 1 or out_w < 1:
        raise ParameterError(f"output size must be positive, got {out_h}x{out_w}")
    check_feature_map(fm)
    if t.is_identity and tuple(fm.shape[-2:]) == (out_h, out_w):
        return fm.clone()

    batch, squeeze = as_batch(fm)
    grid = transform_grid(t, out_h, out_w, batch.dtype)
    grid = grid.unsqueeze(0).expand(batch.shape[0], -1, -1, -1)
    out = F.grid_sample(batch, grid, mode="bilinear", padding_mode="reflection", align_corners=False)
    return out[0] if squeeze else out


def apply_many(ts: Sequence[JitterTransform], fm: FeatureMap, out_h: int, out_w: int) -> FeatureMap:
    """Apply each transform to the same (C, H, W) map; returns (len(ts), C, out_h, out_w)"""
    if out_h < 1 or out_w < 1:
        raise ParameterError(f"output size must be positive, got {out_h}x{out_w}")
    if fm.dim() != 3:
        raise ParameterError("apply_many expects an unbatched (C, H, W) map")
    check_feature_map(fm)
    grids = torch.stack([transform_grid(t, out_h, out_w, fm.dtype) for t in ts])
    batch = fm.unsqueeze(0).expand(len(ts), -1, -1, -1)
    out = F.grid_sample(batch, grids, mode="bilinear", padding_mode="reflection", align_corners=False)
    # Identity transforms at native size stay exact
    native = tuple(fm.shape[-2:]) == (out_h, out_w)
    if native and any(t.is_identity for t in ts):
        out = torch.stack([fm if t.is_identity else view for t, view in zip(ts, out)])
    return out


def hflip_transform(ref_h: Optional[int] = None, ref_w: Optional[int] = None) -> JitterTransform:
    size = settings.DEFAULT_IMAGE_SIZE
    return JitterTransform(hflip=True, ref_h=ref_h or size, ref_w=ref_w or size)


def identity_transform(ref_h: Optional[int] = None, ref_w: Optional[int] = None) -> JitterTransform:
    size = settings.DEFAULT_IMAGE_SIZE
    return JitterTransform(ref_h=ref_h or size, ref_w=ref_w or size)
