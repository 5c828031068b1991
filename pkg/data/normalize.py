from typing import Union

import numpy as np

from errors import DataError
from tensor.core import Tensor, get_default_dtype


def pad_to(images: np.ndarray, size: int = 32) -> np.ndarray:
    """Zero-pad [N, H, W] images symmetrically to size x size (extra pixel goes bottom/right)."""
    n, h, w = images.shape
    if h > size or w > size:
        raise DataError(f"images of {h}x{w} do not fit a {size}x{size} canvas")
    if h == size and w == size:
        return images
    top, left = (size - h) // 2, (size - w) // 2
    out = np.zeros((n, size, size), dtype=images.dtype)
    out[:, top:top + h, left:left + w] = images
    return out


def normalize(images: np.ndarray, mean: float, std: float, size: int = 32) -> Tensor:
    """u8 [N, H, W] -> standardised [N, 1, size, size]."""
    dtype = get_default_dtype()
    scaled = pad_to(np.asarray(images), size).astype(dtype) / dtype.type(255.0)
    return Tensor(((scaled - dtype.type(mean)) / dtype.type(std))[:, None, :, :])


def denormalize(x: Union[Tensor, np.ndarray], mean: float, std: float) -> np.ndarray:
    """Inverse of normalize up to padding: values back on the [0, 1] scale."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    return data * std + mean
