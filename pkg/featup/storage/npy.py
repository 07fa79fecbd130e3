"""
Feature ingestion through the ``.npy`` array container

Only version 1.0 headers holding little-endian float32 C-order arrays are
accepted; anything else is rejected with a message naming the problem.
"""
from pathlib import Path

import numpy as np
import torch
from numpy.lib import format as npy_format

from featup.core.errors import DimensionError, FormatError, UnsupportedDtypeError
from featup.core.logging import get_logger
from featup.services.tensor_core import FeatureMap
from featup.storage.atomic import PathLike, atomic_write

logger = get_logger(__name__)

FEATURE_DTYPE = np.dtype("<f4")


def _feature_shape(shape, source: str):
    if len(shape) == 4:
        if shape[0] != 1:
            raise DimensionError(f"{source}: 4-D arrays must have batch size 1, got shape {tuple(shape)}")
        return tuple(shape[1:])
    if len(shape) != 3:
        raise DimensionError(f"{source}: expected a (C, H, W) array, got shape {tuple(shape)}")
    return tuple(shape)


def read_npy(path: PathLike) -> FeatureMap:
    """Load a (C, H, W) or (1, C, H, W) float32 array as a (C, H, W) tensor"""
    source = str(path)
    with open(path, "rb") as handle:
        try:
            version = npy_format.read_magic(handle)
        except ValueError as exc:
            raise FormatError(f"{source}: not an .npy file ({exc})") from exc
        if version != (1, 0):
            raise FormatError(f"{source}: unsupported .npy version {version[0]}.{version[1]}, expected 1.0")
        try:
            shape, fortran_order, dtype = npy_format.read_array_header_1_0(handle)
        except ValueError as exc:
            raise FormatError(f"{source}: malformed .npy header ({exc})") from exc
        if dtype != FEATURE_DTYPE:
            raise UnsupportedDtypeError(f"{source}: unsupported dtype {dtype.str}, expected little-endian float32 (<f4)")
        if fortran_order:
            raise FormatError(f"{source}: Fortran-order arrays are not supported, save in C order")
        payload = handle.read()

    count = int(np.prod(shape)) if shape else 1
    if len(payload) != count * FEATURE_DTYPE.itemsize:
        raise FormatError(f"{source}: payload holds {len(payload)} bytes, header declares {count * FEATURE_DTYPE.itemsize}")
    shape = _feature_shape(shape, source)
    array = np.frombuffer(payload, dtype=FEATURE_DTYPE).reshape(shape)
    return torch.from_numpy(array.copy())


def write_npy(fm: FeatureMap, path: PathLike) -> Path:
    """Write a (C, H, W) map (or batch of one) as a version 1.0 float32 array"""
    shape = _feature_shape(tuple(fm.shape), str(path))
    array = np.ascontiguousarray(fm.detach().cpu().reshape(shape).numpy().astype(FEATURE_DTYPE))
    header = {"descr": npy_format.dtype_to_descr(FEATURE_DTYPE), "fortran_order": False, "shape": shape}
    with atomic_write(path) as handle:
        npy_format.write_array_header_1_0(handle, header)
        handle.write(array.tobytes(order="C"))
    logger.debug("npy_written", path=str(path), shape=list(shape))
    return Path(path)
