"""
Dense tensor helpers shared by every module

Feature maps are channel-first torch tensors ``(C, H, W)`` (optionally batched
``(B, C, H, W)``); guidance images are ``(3, H, W)`` with values in [0, 1].
Normalized coordinates follow the align-corners-false convention: -1 and +1
sit half a pixel outside the first and last pixel centers.
"""
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from featup.core.errors import DimensionError, NonFiniteError, ParameterError, ShapeMismatchError
from featup.core.logging import get_logger

logger = get_logger(__name__)

FeatureMap = torch.Tensor
GuidanceImage = torch.Tensor


def check_feature_map(fm: FeatureMap, name: str = "feature map") -> FeatureMap:
    """Validate rank, non-empty dimensions and finiteness of a (C, H, W) or (B, C, H, W) map"""
    if fm.dim() not in (3, 4):
        raise DimensionError(f"{name} must be (C, H, W) or (B, C, H, W), got shape {tuple(fm.shape)}")
    if fm.numel() == 0 or min(fm.shape) < 1:
        raise DimensionError(f"{name} is empty: shape {tuple(fm.shape)}")
    if not torch.isfinite(fm).all():
        raise NonFiniteError(f"{name} contains NaN or Inf", name=name)
    return fm


def check_guidance(image: GuidanceImage, name: str = "guidance image") -> GuidanceImage:
    if image.dim() not in (3, 4) or image.shape[-3] != 3:
        raise DimensionError(f"{name} must be (3, H, W) or (B, 3, H, W), got shape {tuple(image.shape)}")
    check_feature_map(image, name)
    return image.clamp(0.0, 1.0)


def as_batch(fm: torch.Tensor) -> Tuple[torch.Tensor, bool]:
    """Add a leading batch axis if missing; the flag tells callers to strip it again"""
    if fm.dim() == 3:
        return fm.unsqueeze(0), True
    return fm, False


def grid_coords(size: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Normalized pixel-center coordinates of a 1-D grid"""
    return (2.0 * torch.arange(size, dtype=dtype) + 1.0) / size - 1.0


def coordinate_field(h: int, w: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(2, H, W) field of normalized (row, col) coordinates"""
    rows = grid_coords(h, dtype)[:, None].expand(h, w)
    cols = grid_coords(w, dtype)[None, :].expand(h, w)
    return torch.stack([rows, cols])


def sample_points(fm: FeatureMap, ys: torch.Tensor, xs: torch.Tensor) -> torch.Tensor:
    """Bilinear samples at normalized coordinates; returns (C, *ys.shape) with border clamping"""
    check_feature_map(fm)
    if fm.dim() != 3:
        raise DimensionError("sample_points expects an unbatched (C, H, W) map")
    grid = torch.stack([xs, ys], dim=-1).to(fm.dtype).reshape(1, 1, -1, 2)
    out = F.grid_sample(fm.unsqueeze(0), grid, mode="bilinear", padding_mode="border", align_corners=False)
    return out.reshape(fm.shape[0], *ys.shape)


def bilinear_sample(fm: FeatureMap, y: float, x: float) -> torch.Tensor:
    """Bilinear blend of the four feature vectors around normalized point (y, x)"""
    ys = torch.tensor([y], dtype=fm.dtype)
    xs = torch.tensor([x], dtype=fm.dtype)
    return sample_points(fm, ys, xs)[:, 0]


def resize_bilinear(fm: FeatureMap, h: int, w: int) -> FeatureMap:
    """Bilinear resampling at pixel centers (align-corners-false, edge clamp)"""
    batch, squeeze = as_batch(fm)
    if batch.shape[-2:] == (h, w):
        out = batch
    else:
        out = F.interpolate(batch, size=(h, w), mode="bilinear", align_corners=False)
    return out[0] if squeeze else out


def resize_area(image: torch.Tensor, h: int, w: int) -> torch.Tensor:
    """Area (box-average) resampling used to derive per-stage guidance"""
    batch, squeeze = as_batch(image)
    if batch.shape[-2:] == (h, w):
        out = batch
    else:
        out = F.adaptive_avg_pool2d(batch, (h, w))
    return out[0] if squeeze else out


def derive_seed(*keys: int) -> int:
    """Independent 32-bit seed for a (run seed, step, stream) tuple"""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


MASK32 = 0xFFFFFFFF


def _mul32(x: torch.Tensor, c: int) -> torch.Tensor:
    # Low 32 bits of x * c without leaving int64 range
    return (x * (c & 0xFFFF) + (((x * (c >> 16)) & 0xFFFF) << 16)) & MASK32


def _mix32(x: torch.Tensor) -> torch.Tensor:
    x = x ^ (x >> 16)
    x = _mul32(x, 0x7FEB352D)
    x = x ^ (x >> 15)
    x = _mul32(x, 0x846CA68B)
    return x ^ (x >> 16)


def counter_uniform(seed: int, stream: int, rows: int, cols: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """
    (rows, cols) uniforms in [0, 1) hashed from (seed, stream, row, col)

    Entry (r, c) is the same for any table that contains it, so a row's draws
    do not depend on how many rows are requested.
    """
    key = torch.tensor(derive_seed(seed, stream), dtype=torch.int64)
    row = torch.arange(rows, dtype=torch.int64)[:, None] & MASK32
    col = torch.arange(cols, dtype=torch.int64)[None, :] & MASK32
    bits = _mix32(_mix32(key ^ _mix32(row)) ^ col)
    return ((bits >> 8).to(torch.float64) / float(1 << 24)).to(dtype)


@contextmanager
def seeded(seed: int) -> Iterator[None]:
    """Fork the global torch RNG so parameter initialization is reproducible per seed"""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield


@dataclass(frozen=True)
class PcaModel:
    """Principal components of a feature map's channel vectors"""

    mean: torch.Tensor  # (C,)
    components: torch.Tensor  # (k, C), orthonormal rows
    explained_variance: torch.Tensor  # (k,), nonincreasing

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def channels(self) -> int:
        return self.components.shape[1]

    def project(self, fm: FeatureMap) -> FeatureMap:
        """(…, C, H, W) -> (…, k, H, W)"""
        centered = fm - self.mean.to(fm.dtype)[:, None, None]
        return torch.einsum("kc,...chw->...khw", self.components.to(fm.dtype), centered)

    def reconstruct(self, projected: FeatureMap) -> FeatureMap:
        """(…, k, H, W) -> (…, C, H, W)"""
        restored = torch.einsum("kc,...khw->...chw", self.components.to(projected.dtype), projected)
        return restored + self.mean.to(projected.dtype)[:, None, None]


def pca_fit(fm: FeatureMap, k: int) -> PcaModel:
    """
    Fit the top-k principal components of the H*W channel vectors

    Uses the population covariance in float64. A zero-variance input yields an
    arbitrary orthonormal basis with zero explained variance.
    """
    check_feature_map(fm)
    if fm.dim() != 3:
        raise DimensionError("pca_fit expects an unbatched (C, H, W) map")
    c, h, w = fm.shape
    if not 1 <= k <= min(c, h * w):
        raise ParameterError(f"k={k} must lie in [1, min(C, H*W)] = [1, {min(c, h * w)}]")

    vectors = fm.reshape(c, h * w).T.to(torch.float64)
    mean = vectors.mean(dim=0)
    centered = vectors - mean
    covariance = centered.T @ centered / vectors.shape[0]
    eigenvalues, eigenvectors = torch.linalg.eigh(covariance)

    order = torch.argsort(eigenvalues, descending=True, stable=True)[:k]
    components = eigenvectors[:, order].T.contiguous()
    # Sign convention: largest-magnitude entry of each component is positive
    pivots = components.abs().argmax(dim=1)
    signs = torch.sign(components.gather(1, pivots[:, None]))
    signs[signs == 0] = 1.0
    components = components * signs

    explained = eigenvalues[order].clamp_min(0.0)
    logger.debug("pca_fit", channels=c, k=k, explained=float(explained.sum()))
    return PcaModel(
        mean=mean.to(fm.dtype),
        components=components.to(fm.dtype),
        explained_variance=explained.to(fm.dtype),
    )


def projection_matrix(in_dim: int, out_dim: int, seed: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Seeded Gaussian (out_dim, in_dim) matrix with entries N(0, 1/out_dim)"""
    if out_dim < 1 or in_dim < 1:
        raise ParameterError(f"projection dimensions must be positive, got {in_dim} -> {out_dim}")
    generator = torch.Generator().manual_seed(seed)
    matrix = torch.randn(out_dim, in_dim, generator=generator, dtype=torch.float64)
    return (matrix / out_dim ** 0.5).to(dtype)


def random_projection(fm: FeatureMap, d: int, seed: int) -> FeatureMap:
    """Project every channel vector through a seeded Gaussian matrix to d channels"""
    check_feature_map(fm)
    channels = fm.shape[-3]
    matrix = projection_matrix(channels, d, seed, fm.dtype)
    return torch.einsum("dc,...chw->...dhw", matrix, fm)


def mean_cosine_similarity(a: FeatureMap, b: FeatureMap) -> float:
    """Mean per-pixel cosine similarity between two maps of equal shape"""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"cannot compare shapes {tuple(a.shape)} and {tuple(b.shape)}")
    return float(F.cosine_similarity(a, b, dim=-3, eps=1e-8).mean())
