import io

import numpy as np
import torch
from PIL import Image

from featup.core.errors import DimensionError, FormatError
from featup.services.tensor_core import GuidanceImage
from featup.storage.atomic import PathLike, write_bytes


def read_png(path: PathLike) -> GuidanceImage:
    """Load an image as a (3, H, W) float32 tensor in [0, 1]"""
    try:
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError:
        raise
    except (OSError, Image.UnidentifiedImageError) as exc:
        raise FormatError(f"{path}: cannot decode image ({exc})") from exc
    return torch.from_numpy(pixels.astype(np.float32) / 255.0).permute(2, 0, 1).contiguous()


def to_uint8(image: torch.Tensor) -> np.ndarray:
    """(3, H, W) floats in [0, 1] -> (H, W, 3) bytes"""
    if image.dim() != 3 or image.shape[0] != 3:
        raise DimensionError(f"expected a (3, H, W) image, got shape {tuple(image.shape)}")
    scaled = (image.detach().cpu().clamp(0.0, 1.0) * 255.0).round().to(torch.uint8)
    return scaled.permute(1, 2, 0).contiguous().numpy()


def write_png(image: torch.Tensor, path: PathLike) -> None:
    buffer = io.BytesIO()
    Image.fromarray(to_uint8(image)).save(buffer, format="PNG")
    write_bytes(path, buffer.getvalue())
