"""
Generalized Joint Bilateral Upsampling

Each stage upsamples features 2x under a high-resolution guidance image:
low-resolution features are bilinearly sampled at the guidance grid, and every
output pixel blends its (2r+1)^2 neighborhood with weights
``k_range * k_spatial / Z``. Two interchangeable backends compute the blend:

- ``reference`` materializes every neighborhood with ``F.unfold``
- ``fast`` fuses neighborhood extraction, weighting and reduction, blocked over
  channel tiles that run on a worker pool; no patch tensor is ever built
"""
import math
import os
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from typing import List, Literal, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn
from torch.autograd.function import once_differentiable

from featup.core.config import settings
from featup.core.errors import DimensionError, ParameterError, ShapeMismatchError
from featup.core.logging import get_logger
from featup.services.tensor_core import (
    FeatureMap,
    GuidanceImage,
    as_batch,
    check_feature_map,
    resize_area,
    resize_bilinear,
)

logger = get_logger(__name__)

Backend = Literal["reference", "fast"]
RangeMode = Literal["softmax", "euclidean", "cosine"]

MLP_HIDDEN = 30
MLP_OUT = 30


class JbuStage(nn.Module):
    """
    Learnable parameters of one 2x joint bilateral upsampler

    Widths are stored as logs so they stay positive under unconstrained updates.
    """

    def __init__(
        self,
        radius: int = 1,
        range_mode: RangeMode = "softmax",
        use_mlp: bool = True,
    ):
        super().__init__()
        if radius < 1:
            raise ParameterError(f"neighborhood radius must be >= 1, got {radius}")
        self.radius = radius
        self.range_mode = range_mode
        self.use_mlp = use_mlp
        self.log_sigma_spatial = nn.Parameter(torch.tensor(0.0))
        self.log_sigma_range_sq = nn.Parameter(torch.tensor(0.0))
        # Default Conv2d init; near-zero weights leave the range logits flat with vanishing gradients
        self.range_mlp = nn.Sequential(
            nn.Conv2d(3, MLP_HIDDEN, kernel_size=1),
            nn.GELU(),
            nn.Conv2d(MLP_HIDDEN, MLP_OUT, kernel_size=1),
        )

    @property
    def diameter(self) -> int:
        return 2 * self.radius + 1

    @property
    def sigma_spatial(self) -> torch.Tensor:
        return self.log_sigma_spatial.exp()

    @property
    def sigma_range_sq(self) -> torch.Tensor:
        return self.log_sigma_range_sq.exp()

    def embed(self, guidance: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) guidance -> (B, E, H, W) range embeddings"""
        if not self.use_mlp:
            return guidance
        return self.range_mlp(guidance)

    def spatial_logits(self) -> torch.Tensor:
        """(D*D,) log of the Gaussian spatial weights over offsets normalized to [-1, 1]"""
        steps = torch.linspace(-1.0, 1.0, self.diameter, dtype=self.log_sigma_spatial.dtype)
        dy, dx = torch.meshgrid(steps, steps, indexing="ij")
        sq_dist = (dy ** 2 + dx ** 2).flatten()
        return -sq_dist / (2.0 * self.sigma_spatial ** 2)


def spatial_kernel(p: JbuStage, xy1: Tuple[float, float], xy2: Tuple[float, float]) -> torch.Tensor:
    """exp(-|x - y|^2 / (2 sigma_spatial^2)) for two normalized coordinates"""
    a = torch.as_tensor(xy1, dtype=p.log_sigma_spatial.dtype)
    b = torch.as_tensor(xy2, dtype=p.log_sigma_spatial.dtype)
    sq_dist = ((a - b) ** 2).sum()
    return torch.exp(-sq_dist / (2.0 * p.sigma_spatial ** 2))


def _range_logits(p: JbuStage, center: torch.Tensor, neighbors: torch.Tensor, dim: int) -> torch.Tensor:
    """Similarity logits between center embeddings and neighbor embeddings along ``dim``"""
    if p.range_mode == "softmax":
        return (center * neighbors).sum(dim) / p.sigma_range_sq
    if p.range_mode == "euclidean":
        return -((center - neighbors) ** 2).sum(dim) / (2.0 * p.sigma_range_sq)
    if p.range_mode == "cosine":
        distance = 1.0 - F.cosine_similarity(center, neighbors, dim=dim, eps=1e-8)
        return -(distance ** 2) / (2.0 * p.sigma_range_sq)
    raise ParameterError(f"unknown range mode {p.range_mode!r}")


def range_kernel(p: JbuStage, guidance_patch: torch.Tensor, center_index: int) -> torch.Tensor:
    """
    Range weights over one neighborhood

    ``guidance_patch`` is (D*D, 3) guidance colors; returns (D*D,) weights summing to 1.
    """
    if guidance_patch.dim() != 2 or guidance_patch.shape[1] != 3:
        raise DimensionError(f"guidance patch must be (N, 3), got {tuple(guidance_patch.shape)}")
    pixels = guidance_patch.T[None, :, :, None]  # (1, 3, N, 1)
    embedded = p.embed(pixels)[0, :, :, 0].T  # (N, E)
    logits = _range_logits(p, embedded[center_index][None, :], embedded, dim=1)
    return torch.softmax(logits, dim=0)


def _range_logits_reference(p: JbuStage, embedded: torch.Tensor) -> torch.Tensor:
    b, e, h, w = embedded.shape
    d = p.diameter
    padded = F.pad(embedded, (p.radius,) * 4, mode="replicate")
    neighbors = F.unfold(padded, kernel_size=d).reshape(b, e, d * d, h * w)
    center = embedded.reshape(b, e, 1, h * w)
    return _range_logits(p, center, neighbors, dim=1).reshape(b, d * d, h, w)


def _range_logits_fast(p: JbuStage, embedded: torch.Tensor) -> torch.Tensor:
    _, _, h, w = embedded.shape
    d = p.diameter
    padded = F.pad(embedded, (p.radius,) * 4, mode="replicate")
    logits = [
        _range_logits(p, embedded, padded[:, :, a : a + h, c : c + w], dim=1)
        for a in range(d)
        for c in range(d)
    ]
    return torch.stack(logits, dim=1)


def jbu_kernel(p: JbuStage, guidance: torch.Tensor, backend: Backend = "fast") -> torch.Tensor:
    """
    (B, 3, H, W) guidance -> (B, D*D, H, W) per-pixel weights summing to 1

    Range softmax times spatial Gaussian over Z, evaluated as one softmax of
    summed logits.
    """
    embedded = p.embed(guidance)
    if backend == "reference":
        range_logits = _range_logits_reference(p, embedded)
    elif backend == "fast":
        range_logits = _range_logits_fast(p, embedded)
    else:
        raise ParameterError(f"unknown backend {backend!r}")
    logits = range_logits + p.spatial_logits().to(range_logits.dtype)[None, :, None, None]
    return torch.softmax(logits, dim=1)


def _worker_count() -> int:
    return settings.FEATUP_THREADS or os.cpu_count() or 1


@lru_cache(maxsize=4)
def _tile_pool(workers: int) -> ThreadPoolExecutor:
    return ThreadPoolExecutor(max_workers=workers, thread_name_prefix="featup-jbu")


def _channel_tiles(channels: int) -> List[slice]:
    tile = max(1, settings.JBU_CHANNEL_TILE)
    return [slice(start, min(start + tile, channels)) for start in range(0, channels, tile)]


def _run_tiles(work, tiles: List[slice]) -> list:
    # Grad mode is thread-local; workers must not record history
    def guarded(tile: slice):
        with torch.no_grad():
            return work(tile)

    workers = min(_worker_count(), len(tiles))
    if workers <= 1:
        return [guarded(tile) for tile in tiles]
    return list(_tile_pool(workers).map(guarded, tiles))


class AdaptiveConvFunction(torch.autograd.Function):
    """
    Spatially-adaptive convolution without materialized patches

    out[b, c, i, j] = sum_o kernel[b, o, i, j] * padded[b, c, i + o_y, j + o_x]

    Channel tiles write disjoint output slices; kernel gradients are reduced
    over tiles in tile order, so results do not depend on scheduling.
    """

    @staticmethod
    def forward(ctx, padded: torch.Tensor, kernel: torch.Tensor, diameter: int) -> torch.Tensor:
        b, c, hp, wp = padded.shape
        h, w = hp - diameter + 1, wp - diameter + 1
        out = padded.new_zeros(b, c, h, w)

        def work(tile: slice) -> None:
            block = out[:, tile]
            source = padded[:, tile]
            for o in range(diameter * diameter):
                a, d = divmod(o, diameter)
                block.addcmul_(source[:, :, a : a + h, d : d + w], kernel[:, o : o + 1])

        _run_tiles(work, _channel_tiles(c))
        ctx.save_for_backward(padded, kernel)
        ctx.diameter = diameter
        return out

    @staticmethod
    @once_differentiable
    def backward(ctx, grad_out: torch.Tensor):
        padded, kernel = ctx.saved_tensors
        diameter = ctx.diameter
        b, c, h, w = grad_out.shape
        need_input, need_kernel = ctx.needs_input_grad[0], ctx.needs_input_grad[1]
        grad_padded = torch.zeros_like(padded) if need_input else None
        tiles = _channel_tiles(c)
        slots = {tile.start: index for index, tile in enumerate(tiles)}
        # Per-tile kernel partials live on the calling thread
        partials = kernel.new_zeros(len(tiles), b, diameter * diameter, h, w) if need_kernel else None

        def work(tile: slice) -> None:
            partial = partials[slots[tile.start]] if need_kernel else None
            upstream = grad_out[:, tile]
            for o in range(diameter * diameter):
                a, d = divmod(o, diameter)
                if need_input:
                    grad_padded[:, tile, a : a + h, d : d + w].addcmul_(upstream, kernel[:, o : o + 1])
                if need_kernel:
                    partial[:, o] = (upstream * padded[:, tile, a : a + h, d : d + w]).sum(dim=1)

        _run_tiles(work, tiles)
        grad_kernel = partials.sum(dim=0) if need_kernel else None
        return grad_padded, grad_kernel, None


def adaptive_conv(features: torch.Tensor, kernel: torch.Tensor, backend: Backend = "fast") -> torch.Tensor:
    """
    Blend each pixel's neighborhood with its own weights

    ``features`` (B, C, H, W), ``kernel`` (B, D*D, H, W); borders clamp to edge.
    """
    b, c, h, w = features.shape
    taps = kernel.shape[1]
    diameter = math.isqrt(taps)
    if diameter * diameter != taps or diameter % 2 == 0:
        raise DimensionError(f"kernel must have an odd square number of taps, got {taps}")
    if kernel.shape != (b, taps, h, w):
        raise ShapeMismatchError(f"kernel shape {tuple(kernel.shape)} does not match features {tuple(features.shape)}")
    radius = diameter // 2
    padded = F.pad(features, (radius,) * 4, mode="replicate")

    if backend == "reference":
        patches = F.unfold(padded, kernel_size=diameter).reshape(b, c, taps, h * w)
        out = (patches * kernel.reshape(b, 1, taps, h * w)).sum(dim=2)
        return out.reshape(b, c, h, w)
    if backend == "fast":
        return AdaptiveConvFunction.apply(padded, kernel.contiguous(), diameter)
    raise ParameterError(f"unknown backend {backend!r}")


def jbu_upsample(
    fm_lr: FeatureMap,
    g: GuidanceImage,
    p: JbuStage,
    backend: Backend = "fast",
) -> FeatureMap:
    """Upsample features to the guidance resolution with one joint bilateral filter"""
    check_feature_map(fm_lr, "low-resolution features")
    features, squeeze = as_batch(fm_lr)
    guidance, _ = as_batch(g)
    if guidance.shape[1] != 3:
        raise DimensionError(f"guidance must have 3 channels, got {guidance.shape[1]}")
    if guidance.shape[0] != features.shape[0]:
        raise ShapeMismatchError(f"batch mismatch: {features.shape[0]} feature maps vs {guidance.shape[0]} images")
    h, w = guidance.shape[-2:]
    if h < features.shape[-2] or w < features.shape[-1]:
        raise DimensionError(
            f"guidance {h}x{w} is smaller than features {features.shape[-2]}x{features.shape[-1]}"
        )

    sampled = resize_bilinear(features, h, w)
    kernel = jbu_kernel(p, guidance.to(features.dtype), backend)
    out = adaptive_conv(sampled, kernel, backend)
    return out[0] if squeeze else out


def upsampling_stages(factor_h: float, factor_w: float) -> int:
    """Number of 2x stages for an upsampling factor; the factor must be a power of 2"""
    if factor_h != factor_w:
        raise ParameterError(f"anisotropic upsampling factor {factor_h} x {factor_w}")
    factor = factor_h
    if factor < 1 or factor != int(factor) or int(factor) & (int(factor) - 1):
        raise ParameterError(f"upsampling factor {factor} is not a power of 2")
    return int(factor).bit_length() - 1


def jbu_stack(
    fm_lr: FeatureMap,
    g: GuidanceImage,
    stages: Sequence[JbuStage],
    backend: Backend = "fast",
) -> FeatureMap:
    """
    Compose 2x stages up to the guidance resolution

    Stage s sees the guidance area-downscaled to its own output resolution.
    """
    check_feature_map(fm_lr, "low-resolution features")
    features, squeeze = as_batch(fm_lr)
    guidance, _ = as_batch(g)
    h, w = features.shape[-2:]
    big_h, big_w = guidance.shape[-2:]
    num_stages = upsampling_stages(big_h / h, big_w / w)
    if num_stages != len(stages):
        raise ParameterError(f"factor {big_h // h} needs {num_stages} stages, got {len(stages)}")

    out = features
    for index, stage in enumerate(stages):
        scale = 2 ** (index + 1)
        stage_guidance = resize_area(guidance, h * scale, w * scale)
        out = jbu_upsample(out, stage_guidance, stage, backend)
    return out[0] if squeeze else out


class JbuStack(nn.Module):
    """Independent stages for up to 2**num_stages upsampling"""

    def __init__(
        self,
        num_stages: int,
        radius: int = 1,
        range_mode: RangeMode = "softmax",
        use_mlp: bool = True,
    ):
        super().__init__()
        self.stages = nn.ModuleList(
            JbuStage(radius=radius, range_mode=range_mode, use_mlp=use_mlp) for _ in range(num_stages)
        )

    def forward(self, fm_lr: FeatureMap, g: GuidanceImage, backend: Backend = "fast") -> FeatureMap:
        h, w = fm_lr.shape[-2:]
        needed = upsampling_stages(g.shape[-2] / h, g.shape[-1] / w)
        if needed > len(self.stages):
            raise ParameterError(f"factor {2 ** needed} exceeds this stack's maximum {2 ** len(self.stages)}")
        return jbu_stack(fm_lr, g, list(self.stages)[:needed], backend)
