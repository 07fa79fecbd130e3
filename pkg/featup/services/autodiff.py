"""
Differentiation, losses and optimization

Reverse-mode differentiation runs on torch autograd: a ``Tape`` names the leaf
tensors of one pass and ``backward`` returns a gradient for every one of them.
"""
from dataclasses import dataclass
from typing import Dict, Iterator, Literal, Mapping, Optional, Tuple

import math
import torch
import torch.nn.functional as F
from torch import nn

from featup.core.errors import DimensionError, NonFiniteError, ParameterError, ShapeMismatchError

S_MIN = 1e-3
NADAM_BETAS = (0.9, 0.999)
NADAM_EPS = 1e-8
NADAM_LR = 1e-3


class Tape:
    """Ordered set of named leaves whose gradients one backward pass must produce"""

    def __init__(self):
        self._leaves: Dict[str, torch.Tensor] = {}

    def watch(self, name: str, tensor: torch.Tensor) -> torch.Tensor:
        if name in self._leaves:
            raise ParameterError(f"leaf {name!r} is already recorded")
        if not tensor.requires_grad:
            tensor.requires_grad_(True)
        self._leaves[name] = tensor
        return tensor

    def watch_module(self, prefix: str, module: nn.Module) -> nn.Module:
        for name, parameter in module.named_parameters():
            self.watch(f"{prefix}.{name}", parameter)
        return module

    def items(self) -> Iterator[Tuple[str, torch.Tensor]]:
        return iter(self._leaves.items())

    @property
    def leaves(self) -> Dict[str, torch.Tensor]:
        return dict(self._leaves)

    def __len__(self) -> int:
        return len(self._leaves)

    def __contains__(self, name: str) -> bool:
        return name in self._leaves


def backward(tape: Tape, loss_node: torch.Tensor, retain_graph: bool = False) -> Dict[str, torch.Tensor]:
    """Gradients of a scalar loss for every recorded leaf; unused leaves get zeros"""
    if loss_node.dim() != 0:
        raise DimensionError(f"loss must be a scalar, got shape {tuple(loss_node.shape)}")
    names = [name for name, _ in tape.items()]
    leaves = [leaf for _, leaf in tape.items()]
    grads = torch.autograd.grad(loss_node, leaves, allow_unused=True, retain_graph=retain_graph)
    return {
        name: grad if grad is not None else torch.zeros_like(leaf)
        for name, leaf, grad in zip(names, leaves, grads)
    }


class UncertaintyHead(nn.Module):
    """Linear map from view features to a per-pixel scale s >= S_MIN"""

    def __init__(self, channels: int):
        super().__init__()
        self.linear = nn.Conv2d(channels, 1, kernel_size=1)
        nn.init.normal_(self.linear.weight, std=0.02)
        # softplus(bias) == 1 so training starts from a plain Gaussian likelihood
        nn.init.constant_(self.linear.bias, math.log(math.e - 1.0))

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        """(…, C, h, w) -> (…, h, w)"""
        squeeze = features.dim() == 3
        batch = features.unsqueeze(0) if squeeze else features
        s = F.softplus(self.linear(batch)[:, 0]).clamp_min(S_MIN)
        return s[0] if squeeze else s


def reconstruction_loss(pred_lr: torch.Tensor, obs_lr: torch.Tensor, s: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Gaussian multi-view likelihood with adaptive per-pixel uncertainty

    mean over pixels (and views) of |pred - obs|^2 / (2 s^2) + log s, with the
    squared norm taken over channels. ``s=None`` fixes s = 1.
    """
    if pred_lr.shape != obs_lr.shape:
        raise ShapeMismatchError(f"prediction {tuple(pred_lr.shape)} does not match observation {tuple(obs_lr.shape)}")
    residual_sq = ((pred_lr - obs_lr) ** 2).sum(dim=-3)
    if s is None:
        return (residual_sq / 2.0).mean()
    if s.shape != residual_sq.shape:
        raise ShapeMismatchError(f"uncertainty {tuple(s.shape)} does not match pixels {tuple(residual_sq.shape)}")
    return (residual_sq / (2.0 * s ** 2) + torch.log(s)).mean()


def tv_loss(fm: torch.Tensor, reduction: Literal["sum", "mean"] = "sum") -> torch.Tensor:
    """
    Total variation of per-pixel feature magnitudes

    Squared differences to the top and left neighbor over valid pairs only.
    ``mean`` divides by the pixel count.
    """
    if fm.shape[-1] < 2 or fm.shape[-2] < 2:
        raise ParameterError(f"total variation needs H, W >= 2, got {tuple(fm.shape[-2:])}")
    magnitude = torch.linalg.vector_norm(fm, dim=-3)
    vertical = (magnitude[..., 1:, :] - magnitude[..., :-1, :]) ** 2
    horizontal = (magnitude[..., :, 1:] - magnitude[..., :, :-1]) ** 2
    total = vertical.sum() + horizontal.sum()
    if reduction == "mean":
        return total / magnitude.numel()
    if reduction != "sum":
        raise ParameterError(f"unknown reduction {reduction!r}")
    return total


@dataclass
class NadamState:
    """NAdam moments and step count for a fixed set of named parameters"""

    optimizer: torch.optim.NAdam
    params: Dict[str, torch.Tensor]
    steps: int = 0


def make_nadam(params: Mapping[str, torch.Tensor], lr: float = NADAM_LR) -> NadamState:
    named = dict(params)
    optimizer = torch.optim.NAdam(
        list(named.values()),
        lr=lr,
        betas=NADAM_BETAS,
        eps=NADAM_EPS,
        foreach=False,
    )
    return NadamState(optimizer=optimizer, params=named)


def nadam_step(
    state: NadamState,
    params: Mapping[str, torch.Tensor],
    grads: Mapping[str, torch.Tensor],
    max_grad_norm: Optional[float] = None,
) -> Dict[str, torch.Tensor]:
    """
    One Nesterov-accelerated Adam update

    Non-finite gradients are rejected with the offending parameter's name;
    ``max_grad_norm`` clips by global norm before the update.
    """
    if set(params) != set(state.params):
        raise ParameterError("parameters do not match the optimizer state")
    for name, parameter in params.items():
        if parameter is not state.params[name]:
            raise ParameterError(f"parameter {name!r} is not the tensor this optimizer tracks")
        grad = grads.get(name)
        if grad is None:
            parameter.grad = None
            continue
        if grad.shape != parameter.shape:
            raise ShapeMismatchError(f"gradient of {name} has shape {tuple(grad.shape)}, expected {tuple(parameter.shape)}")
        if not torch.isfinite(grad).all():
            raise NonFiniteError(f"gradient of {name} is not finite", name=name)
        parameter.grad = grad.detach().clone()

    if max_grad_norm is not None:
        torch.nn.utils.clip_grad_norm_(list(params.values()), max_grad_norm)
    state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=True)
    state.steps += 1
    return dict(params)
