"""
Per-image implicit feature representation

An MLP maps Fourier features of pixel coordinates and image colors to a
feature vector, so the representation can be queried at any resolution.
A plain learned buffer of features is the input-free alternative.
"""
import math
from typing import Optional

import torch
from torch import nn

from featup.core.errors import DimensionError
from featup.schemas.training import FourierConfig
from featup.services.tensor_core import (
    FeatureMap,
    GuidanceImage,
    coordinate_field,
    counter_uniform,
    resize_bilinear,
    sample_points,
)


def _encode(z: torch.Tensor, cfg: FourierConfig) -> torch.Tensor:
    """(..., D) -> (..., D * (2K + 1)): cos block, sin block, raw inputs"""
    freqs = torch.tensor(cfg.frequencies, dtype=z.dtype)
    phases = math.pi * z[..., :, None] * freqs  # (..., D, K)
    cos = torch.cos(phases).flatten(-2)
    sin = torch.sin(phases).flatten(-2)
    return torch.cat([cos, sin, z], dim=-1)


def fourier_features(field: torch.Tensor, cfg: FourierConfig) -> torch.Tensor:
    """
    Encode a channel-first (D, H, W) field of coordinates and colors

    Channels are ordered component-major: for component d and frequency k,
    ``cos(pi * 2^k * z_d)`` sits at index ``d * K + k`` of the cos block.
    """
    if field.dim() != 3 or field.shape[0] != cfg.num_components:
        raise DimensionError(
            f"expected a ({cfg.num_components}, H, W) field, got shape {tuple(field.shape)}"
        )
    return _encode(field.permute(1, 2, 0), cfg).permute(2, 0, 1)


class ImplicitNet(nn.Module):
    """3-layer ReLU MLP with layer normalization and dropout after each hidden layer"""

    def __init__(self, in_dim: int, out_dim: int, hidden_dim: int = 128, dropout: float = 0.1):
        super().__init__()
        self.dropout = dropout
        self.fc1 = nn.Linear(in_dim, hidden_dim)
        self.norm1 = nn.LayerNorm(hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, hidden_dim)
        self.norm2 = nn.LayerNorm(hidden_dim)
        self.fc3 = nn.Linear(hidden_dim, out_dim)

    @property
    def out_dim(self) -> int:
        return self.fc3.out_features

    def _drop(self, x: torch.Tensor, seed: int, layer: int) -> torch.Tensor:
        # Row r of x is query pixel r; its mask is keyed by (seed, layer, r, unit)
        if not self.training or self.dropout == 0.0:
            return x
        keep = counter_uniform(seed, layer, x.shape[0], x.shape[1], x.dtype) >= self.dropout
        return x * keep / (1.0 - self.dropout)

    def forward(self, x: torch.Tensor, seed: Optional[int] = None) -> torch.Tensor:
        seed = 0 if seed is None else seed
        x = self._drop(torch.relu(self.norm1(self.fc1(x))), seed, 1)
        x = self._drop(torch.relu(self.norm2(self.fc2(x))), seed, 2)
        return self.fc3(x)


class FeatureBuffer(nn.Module):
    """
    Learned (C, H, W) feature map at the image resolution with no inputs

    Queries at other sizes resample the buffer bilinearly.
    """

    def __init__(self, channels: int, height: int, width: int):
        super().__init__()
        self.features = nn.Parameter(torch.zeros(channels, height, width))

    @property
    def out_dim(self) -> int:
        return self.features.shape[0]

    @classmethod
    def from_features(cls, fm: FeatureMap, height: int, width: int) -> "FeatureBuffer":
        """Start from ``fm`` bilinearly upsampled to (height, width)"""
        buffer = cls(fm.shape[0], height, width).to(fm.dtype)
        with torch.no_grad():
            buffer.features.copy_(resize_bilinear(fm.detach(), height, width))
        return buffer

    def forward(self, query_h: int, query_w: int) -> FeatureMap:
        return resize_bilinear(self.features, query_h, query_w)


def build_implicit_net(cfg: FourierConfig, out_dim: int, hidden_dim: int = 128, dropout: float = 0.1) -> ImplicitNet:
    return ImplicitNet(cfg.encoded_dim, out_dim, hidden_dim=hidden_dim, dropout=dropout)


def implicit_query(
    params: ImplicitNet,
    cfg: FourierConfig,
    image: GuidanceImage,
    coords: torch.Tensor,
    train_mode: bool = False,
    seed: int = 0,
) -> torch.Tensor:
    """
    Evaluate features at arbitrary normalized (row, col) coordinates

    ``coords`` is (2, ...); returns (C, ...). Colors are bilinear samples of the
    image at the same coordinates, so results depend only on the coordinates.
    """
    if coords.shape[0] != 2:
        raise DimensionError(f"coords must be (2, ...), got shape {tuple(coords.shape)}")
    dtype = params.fc1.weight.dtype
    coords = coords.to(dtype)
    inputs = [coords]
    if cfg.include_color:
        inputs.append(sample_points(image.to(dtype), coords[0], coords[1]))
    field = torch.cat(inputs, dim=0)

    spatial = field.shape[1:]
    flat = field.reshape(field.shape[0], -1).T

    was_training = params.training
    params.train(train_mode)
    try:
        out = params(_encode(flat, cfg), seed)
    finally:
        params.train(was_training)
    return out.T.reshape(out.shape[1], *spatial)


def implicit_forward(
    params: ImplicitNet,
    cfg: FourierConfig,
    image: GuidanceImage,
    query_h: int,
    query_w: int,
    train_mode: bool = False,
    seed: int = 0,
) -> FeatureMap:
    """Render the (C, query_h, query_w) feature map on a pixel-center grid"""
    coords = coordinate_field(query_h, query_w, params.fc1.weight.dtype)
    return implicit_query(params, cfg, image, coords, train_mode=train_mode, seed=seed)


def parameter_count(params: nn.Module) -> int:
    return sum(p.numel() for p in params.parameters())
