"""
Training loops for per-image implicit upsamplers and corpus-level JBU stacks

Every step follows the multi-view consistency dataflow: pick jitter transforms,
render high-resolution features, replay each transform on them, downsample
with the learned downsampler and compare against the ingested low-resolution
view of the same transform.
"""
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Mapping, Optional, Protocol, Sequence, Tuple, Union, runtime_checkable

import numpy as np
import torch
from torch import nn

from featup.core.errors import DimensionError, MissingViewError, NonFiniteError, ParameterError
from featup.core.logging import get_logger
from featup.schemas.training import ReconstructionReport, TrainConfig
from featup.schemas.transforms import JitterTransform
from featup.services.autodiff import (
    Tape,
    UncertaintyHead,
    backward,
    make_nadam,
    nadam_step,
    reconstruction_loss,
    tv_loss,
)
from featup.services.downsample import build_downsampler
from featup.services.implicit import FeatureBuffer, ImplicitNet, build_implicit_net, implicit_forward
from featup.services.jbu import Backend, JbuStack, upsampling_stages
from featup.services.tensor_core import (
    FeatureMap,
    GuidanceImage,
    PcaModel,
    check_feature_map,
    check_guidance,
    derive_seed,
    pca_fit,
    projection_matrix,
    resize_area,
    resize_bilinear,
    seeded,
)
from featup.services.transforms import apply_many

logger = get_logger(__name__)

LOSS_COLUMNS = ("loss", "recon_loss", "tv_loss")


@runtime_checkable
class ViewProvider(Protocol):
    """Source of ingested low-resolution features, one map per jitter transform"""

    def transforms(self) -> List[JitterTransform]:
        ...

    def identity(self) -> FeatureMap:
        ...

    def view(self, t: JitterTransform) -> FeatureMap:
        ...


class InMemoryViewProvider:
    """Views held in a dict keyed by transform digest"""

    def __init__(self, views: Sequence[Tuple[JitterTransform, FeatureMap]]):
        self._transforms = [t for t, _ in views]
        self._views = {t.digest(): fm for t, fm in views}

    def transforms(self) -> List[JitterTransform]:
        return list(self._transforms)

    def identity(self) -> FeatureMap:
        for t in self._transforms:
            if t.is_identity:
                return self.view(t)
        raise MissingViewError("no identity view was provided")

    def view(self, t: JitterTransform) -> FeatureMap:
        fm = self._views.get(t.digest())
        if fm is None:
            raise MissingViewError(f"missing view for {t.describe()}", transform=t)
        return fm


@dataclass
class CorpusItem:
    """One training image of a JBU corpus with its ingested features and views"""

    image: GuidanceImage
    features: FeatureMap
    views: ViewProvider

    @classmethod
    def from_provider(cls, image: GuidanceImage, views: ViewProvider) -> "CorpusItem":
        return cls(image=image, features=views.identity(), views=views)


@dataclass
class ImplicitCheckpoint:
    config: TrainConfig
    net: Union[ImplicitNet, FeatureBuffer]
    downsampler: nn.Module
    uncertainty: UncertaintyHead
    pca: PcaModel
    feature_shape: Tuple[int, int, int]
    image_shape: Tuple[int, int]
    loss_trace: torch.Tensor = field(default_factory=lambda: torch.zeros(0, len(LOSS_COLUMNS)))
    transform_seeds: List[int] = field(default_factory=list)
    kind: str = "implicit"

    def modules(self) -> Dict[str, nn.Module]:
        return {"net": self.net, "downsampler": self.downsampler, "uncertainty": self.uncertainty}

    def trainable(self) -> Dict[str, nn.Module]:
        modules = self.modules()
        if not self.config.use_uncertainty:
            modules.pop("uncertainty")
        return modules

    @property
    def dtype(self) -> torch.dtype:
        return next(self.net.parameters()).dtype

    def render(self, image: GuidanceImage, query_h: int, query_w: int, train_mode: bool = False, seed: int = 0) -> FeatureMap:
        """Compressed (k, query_h, query_w) features from the network or the buffer"""
        if isinstance(self.net, FeatureBuffer):
            return self.net(query_h, query_w)
        return implicit_forward(self.net, self.config.fourier, image, query_h, query_w, train_mode=train_mode, seed=seed)


@dataclass
class JbuCheckpoint:
    config: TrainConfig
    stack: JbuStack
    downsampler: nn.Module
    uncertainty: UncertaintyHead
    loss_trace: torch.Tensor = field(default_factory=lambda: torch.zeros(0, len(LOSS_COLUMNS)))
    transform_seeds: List[int] = field(default_factory=list)
    kind: str = "jbu"

    @property
    def num_stages(self) -> int:
        return len(self.stack.stages)

    def modules(self) -> Dict[str, nn.Module]:
        return {"stack": self.stack, "downsampler": self.downsampler, "uncertainty": self.uncertainty}

    def trainable(self) -> Dict[str, nn.Module]:
        modules = self.modules()
        if not self.config.use_uncertainty:
            modules.pop("uncertainty")
        return modules


Checkpoint = Union[ImplicitCheckpoint, JbuCheckpoint]


def _named_parameters(modules: Mapping[str, nn.Module]) -> Iterator[Tuple[str, torch.Tensor]]:
    for prefix, module in modules.items():
        for name, parameter in module.named_parameters():
            yield f"{prefix}.{name}", parameter


def _select_transforms(rng: np.random.Generator, transforms: Sequence[JitterTransform], count: int) -> List[JitterTransform]:
    if not transforms:
        raise MissingViewError("no views are available to train on")
    replace = len(transforms) < count
    indices = sorted(int(i) for i in rng.choice(len(transforms), size=count, replace=replace))
    return [transforms[i] for i in indices]


def _downsample_factor(image_hw: Tuple[int, int], feature_hw: Tuple[int, int]) -> int:
    (big_h, big_w), (h, w) = image_hw, feature_hw
    if big_h % h or big_w % w or big_h // h != big_w // w:
        raise ParameterError(f"image {big_h}x{big_w} is not an isotropic multiple of features {h}x{w}")
    return big_h // h


def _view_loss(
    f_hr: FeatureMap,
    transforms: Sequence[JitterTransform],
    observed: FeatureMap,
    downsampler: nn.Module,
    uncertainty: Optional[UncertaintyHead],
) -> torch.Tensor:
    """Mean reconstruction loss of one high-resolution map against its jittered views"""
    big_h, big_w = f_hr.shape[-2:]
    h, w = observed.shape[-2:]
    rendered = apply_many(transforms, f_hr, big_h, big_w)
    predicted = downsampler(rendered, h, w)
    s = uncertainty(observed) if uncertainty is not None else None
    return reconstruction_loss(predicted, observed, s)


def _check_loss(loss: torch.Tensor, step: int) -> None:
    if not torch.isfinite(loss):
        raise NonFiniteError(f"loss became non-finite at step {step}", name="loss")


def _optimize(
    modules: Mapping[str, nn.Module],
    cfg: TrainConfig,
    step_fn,
) -> torch.Tensor:
    """Run cfg.steps NAdam updates of ``step_fn(step) -> (loss, recon, tv)``; returns the loss trace"""
    tape = Tape()
    params = dict(_named_parameters(modules))
    for name, parameter in params.items():
        tape.watch(name, parameter)
    state = make_nadam(params, lr=cfg.lr)

    trace = torch.zeros(cfg.steps, len(LOSS_COLUMNS))
    for step in range(cfg.steps):
        loss, recon, tv = step_fn(step)
        _check_loss(loss, step)
        grads = backward(tape, loss)
        nadam_step(state, params, grads, max_grad_norm=cfg.grad_clip)
        values = [value.detach().item() for value in (loss, recon, tv)]
        trace[step] = torch.tensor(values)
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            logger.info("train_step", mode=cfg.mode, step=step, **dict(zip(LOSS_COLUMNS, values)))
    return trace


def build_implicit_checkpoint(
    image: GuidanceImage,
    identity: FeatureMap,
    cfg: TrainConfig,
    dtype: torch.dtype = torch.float32,
) -> ImplicitCheckpoint:
    """Fit the PCA basis and initialize every module of an implicit run from ``cfg.seed``"""
    c, h, w = identity.shape
    big_h, big_w = image.shape[-2:]
    _downsample_factor((big_h, big_w), (h, w))
    k = min(cfg.proj_dim, c, h * w)
    pca = pca_fit(identity.to(dtype), k)
    with seeded(cfg.seed):
        if cfg.explicit:
            net = FeatureBuffer.from_features(pca.project(identity.to(dtype)), big_h, big_w)
        else:
            net = build_implicit_net(cfg.fourier, k, hidden_dim=cfg.hidden_dim, dropout=cfg.dropout)
        downsampler = build_downsampler(cfg.downsampler, k, cfg.kernel_size)
        uncertainty = UncertaintyHead(k)
    checkpoint = ImplicitCheckpoint(
        config=cfg,
        net=net.to(dtype),
        downsampler=downsampler.to(dtype),
        uncertainty=uncertainty.to(dtype),
        pca=pca,
        feature_shape=(c, h, w),
        image_shape=(big_h, big_w),
    )
    return checkpoint


def train_implicit(image: GuidanceImage, view_provider: ViewProvider, cfg: Optional[TrainConfig] = None) -> ImplicitCheckpoint:
    """
    Fit a per-image implicit representation to jittered low-resolution views

    Features are compressed with a PCA fit on the identity view; the network
    learns the compressed features and the basis is kept for decompression.
    """
    cfg = cfg or TrainConfig.implicit()
    image = check_guidance(image)
    identity = check_feature_map(view_provider.identity(), "identity view")
    if identity.dim() != 3:
        raise DimensionError("identity view must be an unbatched (C, H, W) map")
    transforms = view_provider.transforms()
    checkpoint = build_implicit_checkpoint(image, identity, cfg)
    checkpoint.transform_seeds = [t.seed for t in transforms if t.seed is not None]
    big_h, big_w = checkpoint.image_shape

    # Compress every view once; missing views surface before any step runs
    compressed: Dict[str, FeatureMap] = {}
    for t in transforms:
        fm = check_feature_map(view_provider.view(t), f"view {t.digest()}")
        if tuple(fm.shape) != tuple(identity.shape):
            raise DimensionError(f"view {t.describe()} has shape {tuple(fm.shape)}, expected {tuple(identity.shape)}")
        compressed[t.digest()] = checkpoint.pca.project(fm)

    logger.info(
        "train_start",
        mode="implicit",
        steps=cfg.steps,
        views=len(transforms),
        channels=identity.shape[0],
        pca_k=checkpoint.pca.k,
    )
    modules = checkpoint.trainable()
    uncertainty = checkpoint.uncertainty if cfg.use_uncertainty else None

    def step_fn(step: int):
        rng = np.random.default_rng([cfg.seed, step])
        chosen = _select_transforms(rng, transforms, cfg.jitters_per_image)
        observed = torch.stack([compressed[t.digest()] for t in chosen])
        f_hr = checkpoint.render(image, big_h, big_w, train_mode=True, seed=derive_seed(cfg.seed, step, 1))
        recon = _view_loss(f_hr, chosen, observed, checkpoint.downsampler, uncertainty)
        tv = tv_loss(f_hr, reduction="mean") if cfg.tv_weight > 0 else torch.zeros((), dtype=recon.dtype)
        return recon + cfg.tv_weight * tv, recon, tv

    checkpoint.loss_trace = _optimize(modules, cfg, step_fn)
    logger.info("train_complete", mode="implicit", steps=cfg.steps, final_loss=_final_loss(checkpoint.loss_trace))
    return checkpoint


def build_jbu_checkpoint(num_stages: int, cfg: TrainConfig, dtype: torch.dtype = torch.float32) -> JbuCheckpoint:
    with seeded(cfg.seed):
        stack = JbuStack(num_stages, radius=cfg.jbu_radius, range_mode=cfg.range_mode, use_mlp=cfg.use_range_mlp)
        downsampler = build_downsampler(cfg.downsampler, cfg.proj_dim, cfg.kernel_size)
        uncertainty = UncertaintyHead(cfg.proj_dim)
    return JbuCheckpoint(
        config=cfg,
        stack=stack.to(dtype),
        downsampler=downsampler.to(dtype),
        uncertainty=uncertainty.to(dtype),
    )


def _corpus_stages(corpus: Sequence[CorpusItem]) -> int:
    factors = set()
    for item in corpus:
        check_feature_map(item.features, "corpus features")
        factors.add(_downsample_factor(tuple(item.image.shape[-2:]), tuple(item.features.shape[-2:])))
    if len(factors) != 1:
        raise ParameterError(f"corpus mixes downsampling factors {sorted(factors)}")
    factor = factors.pop()
    return upsampling_stages(factor, factor)


def _projected(fm: FeatureMap, matrix: torch.Tensor) -> FeatureMap:
    return torch.einsum("dc,...chw->...dhw", matrix, fm)


def _jbu_item_loss(
    checkpoint: JbuCheckpoint,
    item: CorpusItem,
    transforms: Sequence[JitterTransform],
    projection_seed: int,
    upsampler: str = "jbu",
    backend: Backend = "fast",
) -> torch.Tensor:
    channels = item.features.shape[-3]
    matrix = projection_matrix(channels, checkpoint.config.proj_dim, projection_seed, item.features.dtype)
    features = _projected(item.features, matrix)
    observed = torch.stack([_projected(item.views.view(t), matrix) for t in transforms])
    image = check_guidance(item.image).to(features.dtype)
    big_h, big_w = image.shape[-2:]
    if upsampler == "jbu":
        f_hr = checkpoint.stack(features, image, backend)
    else:
        f_hr = resize_bilinear(features, big_h, big_w)
    uncertainty = checkpoint.uncertainty if checkpoint.config.use_uncertainty else None
    return _view_loss(f_hr, transforms, observed, checkpoint.downsampler, uncertainty)


def train_jbu(corpus: Sequence[CorpusItem], cfg: Optional[TrainConfig] = None, backend: Backend = "fast") -> JbuCheckpoint:
    """
    Learn one JBU stack, downsampler and uncertainty head shared by a corpus

    Each batch projects features through a fresh seeded random matrix, so the
    stack never specializes to one feature basis.
    """
    cfg = cfg or TrainConfig.jbu()
    if not corpus:
        raise ParameterError("cannot train a JBU stack on an empty corpus")
    num_stages = _corpus_stages(corpus)
    checkpoint = build_jbu_checkpoint(num_stages, cfg)
    all_transforms = [item.views.transforms() for item in corpus]
    checkpoint.transform_seeds = [t.seed for ts in all_transforms for t in ts if t.seed is not None]
    logger.info("train_start", mode="jbu", steps=cfg.steps, images=len(corpus), stages=num_stages)

    def step_fn(step: int):
        rng = np.random.default_rng([cfg.seed, step])
        replace = len(corpus) < cfg.images_per_batch
        batch = sorted(int(i) for i in rng.choice(len(corpus), size=cfg.images_per_batch, replace=replace))
        projection_seed = derive_seed(cfg.seed, step, 2)
        losses = []
        for index in batch:
            chosen = _select_transforms(rng, all_transforms[index], cfg.jitters_per_image)
            losses.append(_jbu_item_loss(checkpoint, corpus[index], chosen, projection_seed, backend=backend))
        recon = torch.stack(losses).mean()
        return recon, recon, torch.zeros((), dtype=recon.dtype)

    checkpoint.loss_trace = _optimize(checkpoint.trainable(), cfg, step_fn)
    logger.info("train_complete", mode="jbu", steps=cfg.steps, final_loss=_final_loss(checkpoint.loss_trace))
    return checkpoint


def evaluate_reconstruction(
    checkpoint: JbuCheckpoint,
    corpus: Sequence[CorpusItem],
    seed: int = 0,
    backend: Backend = "fast",
) -> ReconstructionReport:
    """Mean held-out reconstruction loss of the stack and of bilinear upsampling through the same downsampler"""
    if not corpus:
        raise ParameterError("cannot evaluate on an empty corpus")
    totals = {"jbu": 0.0, "bilinear": 0.0}
    with torch.no_grad():
        for index, item in enumerate(corpus):
            transforms = item.views.transforms()
            projection_seed = derive_seed(seed, index, 3)
            for upsampler in totals:
                loss = _jbu_item_loss(checkpoint, item, transforms, projection_seed, upsampler, backend)
                totals[upsampler] += float(loss)
    report = ReconstructionReport(
        images=len(corpus),
        jbu_loss=totals["jbu"] / len(corpus),
        bilinear_loss=totals["bilinear"] / len(corpus),
    )
    logger.info("evaluation_complete", **report.model_dump())
    return report


def upsample(
    checkpoint: Checkpoint,
    image: GuidanceImage,
    features: Optional[FeatureMap],
    target_h: int,
    target_w: int,
    backend: Backend = "fast",
) -> FeatureMap:
    """
    Upsample features with a trained checkpoint

    Implicit checkpoints carry their own features and ignore ``features``;
    they are queried on the target grid and decompressed through the stored
    PCA basis. JBU checkpoints upsample ``features`` under ``image``.
    """
    if target_h < 1 or target_w < 1:
        raise ParameterError(f"target size must be positive, got {target_h}x{target_w}")
    image = check_guidance(image)
    if isinstance(checkpoint, ImplicitCheckpoint):
        with torch.no_grad():
            compressed = checkpoint.render(image.to(checkpoint.dtype), target_h, target_w)
            return checkpoint.pca.reconstruct(compressed)

    if features is None:
        raise ParameterError("JBU upsampling needs low-resolution features")
    check_feature_map(features, "low-resolution features")
    h, w = features.shape[-2:]
    if (target_h, target_w) == (h, w):
        return features
    upsampling_stages(target_h / h, target_w / w)
    big_h, big_w = image.shape[-2:]
    if big_h >= target_h and big_w >= target_w:
        guidance = resize_area(image, target_h, target_w)
    else:
        guidance = resize_bilinear(image, target_h, target_w)
    dtype = checkpoint.stack.stages[0].log_sigma_spatial.dtype if checkpoint.num_stages else features.dtype
    with torch.no_grad():
        return checkpoint.stack(features.to(dtype), guidance.to(dtype), backend)


def _final_loss(trace: torch.Tensor) -> Optional[float]:
    return float(trace[-1, 0]) if trace.shape[0] else None
