"""
Checkpoint container

Layout (little-endian)::

    b"FUP1" | u32 format version | u8 kind | u32 manifest length | manifest JSON | payloads

The UTF-8 JSON manifest lists every tensor with its shape in payload order,
together with the training config and transform seeds. Payloads are raw
float32 values.
"""
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
import torch

from featup.core.errors import CheckpointFormatError
from featup.core.logging import get_logger
from featup.schemas.checkpoint import CheckpointManifest, TensorSpec
from featup.services.autodiff import UncertaintyHead
from featup.services.downsample import build_downsampler
from featup.services.implicit import FeatureBuffer, build_implicit_net
from featup.services.jbu import JbuStack
from featup.services.tensor_core import PcaModel
from featup.services.trainer import Checkpoint, ImplicitCheckpoint, JbuCheckpoint
from featup.storage.atomic import PathLike, write_bytes

logger = get_logger(__name__)

MAGIC = b"FUP1"
FORMAT_VERSION = 1
KIND_CODES = {"implicit": 0, "jbu": 1}
PAYLOAD_DTYPE = np.dtype("<f4")
_PREFIX = struct.Struct("<4sIBI")


def checkpoint_tensors(checkpoint: Checkpoint) -> "OrderedDict[str, torch.Tensor]":
    tensors: "OrderedDict[str, torch.Tensor]" = OrderedDict()
    for prefix, module in checkpoint.modules().items():
        for name, value in module.state_dict().items():
            tensors[f"{prefix}.{name}"] = value
    if isinstance(checkpoint, ImplicitCheckpoint):
        tensors["pca.mean"] = checkpoint.pca.mean
        tensors["pca.components"] = checkpoint.pca.components
        tensors["pca.explained_variance"] = checkpoint.pca.explained_variance
    tensors["loss_trace"] = checkpoint.loss_trace
    return tensors


def _metadata(checkpoint: Checkpoint) -> Dict[str, object]:
    if isinstance(checkpoint, ImplicitCheckpoint):
        return {
            "feature_shape": list(checkpoint.feature_shape),
            "image_shape": list(checkpoint.image_shape),
            "pca_k": checkpoint.pca.k,
        }
    return {"num_stages": checkpoint.num_stages}


def checkpoint_bytes(checkpoint: Checkpoint) -> bytes:
    tensors = checkpoint_tensors(checkpoint)
    manifest = CheckpointManifest(
        kind=checkpoint.kind,
        format_version=FORMAT_VERSION,
        tensors=[TensorSpec(name=name, shape=list(value.shape)) for name, value in tensors.items()],
        config=checkpoint.config,
        transform_seeds=checkpoint.transform_seeds,
        metadata=_metadata(checkpoint),
    )
    header = manifest.model_dump_json().encode("utf-8")
    chunks = [_PREFIX.pack(MAGIC, FORMAT_VERSION, KIND_CODES[checkpoint.kind], len(header)), header]
    for value in tensors.values():
        array = value.detach().cpu().contiguous().numpy().astype(PAYLOAD_DTYPE)
        chunks.append(array.tobytes(order="C"))
    return b"".join(chunks)


def save_checkpoint(checkpoint: Checkpoint, path: PathLike) -> Path:
    payload = checkpoint_bytes(checkpoint)
    write_bytes(path, payload)
    logger.info("checkpoint_saved", path=str(path), kind=checkpoint.kind, bytes=len(payload))
    return Path(path)


def _parse(payload: bytes) -> Tuple[CheckpointManifest, "OrderedDict[str, torch.Tensor]"]:
    if len(payload) < _PREFIX.size:
        raise CheckpointFormatError("checkpoint is truncated")
    magic, version, kind_code, header_len = _PREFIX.unpack_from(payload)
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad checkpoint magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    try:
        manifest = CheckpointManifest.model_validate_json(payload[start : start + header_len])
    except ValueError as exc:
        raise CheckpointFormatError(f"malformed checkpoint manifest: {exc.__class__.__name__}") from exc
    if KIND_CODES[manifest.kind] != kind_code:
        raise CheckpointFormatError(f"kind tag {kind_code} disagrees with manifest kind {manifest.kind!r}")

    offset = start + header_len
    expected = sum(spec.numel for spec in manifest.tensors) * PAYLOAD_DTYPE.itemsize
    if len(payload) - offset != expected:
        raise CheckpointFormatError(f"payload holds {len(payload) - offset} bytes, manifest declares {expected}")
    tensors: "OrderedDict[str, torch.Tensor]" = OrderedDict()
    for spec in manifest.tensors:
        size = spec.numel * PAYLOAD_DTYPE.itemsize
        array = np.frombuffer(payload, dtype=PAYLOAD_DTYPE, count=spec.numel, offset=offset)
        tensors[spec.name] = torch.from_numpy(array.copy()).reshape(spec.shape)
        offset += size
    return manifest, tensors


def _load_states(checkpoint: Checkpoint, tensors: Dict[str, torch.Tensor]) -> None:
    for prefix, module in checkpoint.modules().items():
        state = {
            name[len(prefix) + 1 :]: value
            for name, value in tensors.items()
            if name.startswith(prefix + ".")
        }
        try:
            module.load_state_dict(state, strict=True)
        except RuntimeError as exc:
            raise CheckpointFormatError(f"checkpoint tensors do not fit module {prefix!r}") from exc


def load_checkpoint_bytes(payload: bytes) -> Checkpoint:
    manifest, tensors = _parse(payload)
    cfg = manifest.config
    meta = manifest.metadata
    try:
        if manifest.kind == "implicit":
            k = int(meta["pca_k"])
            image_shape = tuple(meta["image_shape"])
            if cfg.explicit:
                net = FeatureBuffer(k, *image_shape)
            else:
                net = build_implicit_net(cfg.fourier, k, hidden_dim=cfg.hidden_dim, dropout=cfg.dropout)
            checkpoint: Checkpoint = ImplicitCheckpoint(
                config=cfg,
                net=net,
                downsampler=build_downsampler(cfg.downsampler, k, cfg.kernel_size),
                uncertainty=UncertaintyHead(k),
                pca=PcaModel(
                    mean=tensors["pca.mean"],
                    components=tensors["pca.components"],
                    explained_variance=tensors["pca.explained_variance"],
                ),
                feature_shape=tuple(meta["feature_shape"]),
                image_shape=image_shape,
            )
        else:
            checkpoint = JbuCheckpoint(
                config=cfg,
                stack=JbuStack(
                    int(meta["num_stages"]),
                    radius=cfg.jbu_radius,
                    range_mode=cfg.range_mode,
                    use_mlp=cfg.use_range_mlp,
                ),
                downsampler=build_downsampler(cfg.downsampler, cfg.proj_dim, cfg.kernel_size),
                uncertainty=UncertaintyHead(cfg.proj_dim),
            )
        checkpoint.loss_trace = tensors["loss_trace"]
    except KeyError as exc:
        raise CheckpointFormatError(f"checkpoint lacks entry {exc.args[0]!r}") from exc
    checkpoint.transform_seeds = list(manifest.transform_seeds)
    _load_states(checkpoint, tensors)
    return checkpoint


def load_checkpoint(path: PathLike) -> Checkpoint:
    with open(path, "rb") as handle:
        payload = handle.read()
    checkpoint = load_checkpoint_bytes(payload)
    logger.info("checkpoint_loaded", path=str(path), kind=checkpoint.kind)
    return checkpoint
