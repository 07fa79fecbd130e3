"""
Learned downsamplers that render high-resolution features back to a view's resolution

Both variants interpolate features within local windows with convex weights, so
the downsampled features stay in the space of the input features.
"""
from typing import Literal, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from featup.core.errors import ParameterError
from featup.services.tensor_core import FeatureMap, as_batch, check_feature_map


def patch_geometry(in_size: int, out_size: int, kernel_size: int) -> Tuple[int, int, int]:
    """
    Stride and border adjustment for one axis

    Windows are centered on each output cell's footprint; a negative adjustment
    crops the input, a positive one reflection-pads it.
    """
    if out_size < 1 or out_size > in_size:
        raise ParameterError(f"output size {out_size} must lie in [1, {in_size}]")
    if in_size % out_size != 0:
        raise ParameterError(f"input size {in_size} is not a multiple of output size {out_size}")
    if kernel_size > in_size:
        raise ParameterError(f"kernel size {kernel_size} exceeds input size {in_size}")
    stride = in_size // out_size
    before = (kernel_size - stride) // 2
    after = kernel_size - stride - before
    return stride, before, after


def extract_patches(fm: torch.Tensor, out_h: int, out_w: int, kernel_size: int) -> torch.Tensor:
    """(B, C, H, W) -> (B, C, k*k, out_h*out_w) windows, one per output cell"""
    _, _, h, w = fm.shape
    stride_h, top, bottom = patch_geometry(h, out_h, kernel_size)
    stride_w, left, right = patch_geometry(w, out_w, kernel_size)
    if stride_h != stride_w:
        raise ParameterError(f"anisotropic downsampling ({stride_h} vs {stride_w}) is not supported")

    if top < 0 or left < 0:
        fm = fm[:, :, max(-top, 0) : h - max(-bottom, 0), max(-left, 0) : w - max(-right, 0)]
    pads = (max(left, 0), max(right, 0), max(top, 0), max(bottom, 0))
    if any(pads):
        if max(pads) >= min(h, w):
            raise ParameterError(f"kernel size {kernel_size} too large to reflection-pad a {h}x{w} input")
        fm = F.pad(fm, pads, mode="reflect")

    b, c = fm.shape[:2]
    patches = F.unfold(fm, kernel_size=kernel_size, stride=stride_h)
    return patches.reshape(b, c, kernel_size * kernel_size, out_h * out_w)


class SimpleDownsampler(nn.Module):
    """Learned blur kernel shared by all channels, normalized with a softmax"""

    def __init__(self, kernel_size: int):
        super().__init__()
        self.kernel_size = kernel_size
        self.kernel_logits = nn.Parameter(torch.zeros(kernel_size, kernel_size))

    @property
    def kernel(self) -> torch.Tensor:
        return torch.softmax(self.kernel_logits.flatten(), dim=0).reshape(self.kernel_size, self.kernel_size)

    def forward(self, fm: FeatureMap, out_h: int, out_w: int) -> FeatureMap:
        batch, squeeze = as_batch(fm)
        patches = extract_patches(batch, out_h, out_w, self.kernel_size)
        weights = self.kernel.flatten().to(patches.dtype)
        out = torch.einsum("bckl,k->bcl", patches, weights)
        out = out.reshape(batch.shape[0], batch.shape[1], out_h, out_w)
        return out[0] if squeeze else out


class AttentionDownsampler(nn.Module):
    """
    Content-adaptive downsampler

    A 1x1 convolution predicts per-pixel salience; per window the logits
    ``w * salience + b`` are softmax-normalized and blend the window's features.
    """

    def __init__(self, channels: int, kernel_size: int):
        super().__init__()
        self.kernel_size = kernel_size
        self.salience = nn.Conv2d(channels, 1, kernel_size=1)
        self.w = nn.Parameter(torch.zeros(kernel_size, kernel_size))
        self.b = nn.Parameter(torch.zeros(kernel_size, kernel_size))
        nn.init.normal_(self.salience.weight, std=0.02)
        nn.init.zeros_(self.salience.bias)

    def attention(self, fm: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
        """(B, C, H, W) -> (B, k*k, out_h*out_w) window weights summing to 1"""
        salience = self.salience(fm)
        patches = extract_patches(salience, out_h, out_w, self.kernel_size)[:, 0]
        logits = self.w.flatten()[None, :, None] * patches + self.b.flatten()[None, :, None]
        return torch.softmax(logits, dim=1)

    def forward(self, fm: FeatureMap, out_h: int, out_w: int) -> FeatureMap:
        batch, squeeze = as_batch(fm)
        attention = self.attention(batch, out_h, out_w)
        patches = extract_patches(batch, out_h, out_w, self.kernel_size)
        out = torch.einsum("bckl,bkl->bcl", patches, attention)
        out = out.reshape(batch.shape[0], batch.shape[1], out_h, out_w)
        return out[0] if squeeze else out


Downsampler = nn.Module


def build_downsampler(kind: Literal["attention", "simple"], channels: int, kernel_size: int) -> Downsampler:
    if kind == "attention":
        return AttentionDownsampler(channels, kernel_size)
    if kind == "simple":
        return SimpleDownsampler(kernel_size)
    raise ParameterError(f"unknown downsampler kind {kind!r}")


def simple_downsample(fm: FeatureMap, p: SimpleDownsampler, out_h: int, out_w: int) -> FeatureMap:
    check_feature_map(fm)
    return p(fm, out_h, out_w)


def attention_downsample(fm: FeatureMap, p: AttentionDownsampler, out_h: int, out_w: int) -> FeatureMap:
    check_feature_map(fm)
    return p(fm, out_h, out_w)
