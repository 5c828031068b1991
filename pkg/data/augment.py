"""
Weak and strong views of u8 images [N, H, W].

weak:   random shift of up to +-shift pixels (zero fill), optional horizontal flip p=0.5
strong: num_ops operations drawn from the pool, each at a random magnitude,
        then random erasing of a patch covering erase_fraction of the image
"""
from typing import Callable, Dict, Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from errors import ConfigError

Seed = Union[int, np.random.Generator]


def _rng(seed: Seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _to_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def weak_augment(images: np.ndarray, seed: Seed, shift: int = 2, flip: bool = False) -> np.ndarray:
    rng = _rng(seed)
    out = np.array(images, dtype=np.uint8)
    for i in range(len(out)):
        if shift:
            dy, dx = rng.integers(-shift, shift + 1, size=2)
            if dy or dx:
                out[i] = ndimage.shift(out[i], (int(dy), int(dx)), order=0, mode="constant", cval=0)
        if flip and rng.random() < 0.5:
            out[i] = out[i, :, ::-1].copy()
    return out


def _invert_region(img, rng):
    h, w = img.shape
    y, x = rng.integers(0, h // 2 + 1), rng.integers(0, w // 2 + 1)
    out = img.copy()
    out[y:y + h // 2, x:x + w // 2] = 255.0 - out[y:y + h // 2, x:x + w // 2]
    return out


def _posterize(img, rng):
    bits = int(rng.integers(2, 5))
    mask = 0xFF ^ ((1 << (8 - bits)) - 1)
    return (_to_u8(img) & mask).astype(np.float64)


def _sharpness(img, rng):
    blurred = ndimage.uniform_filter(img, size=3, mode="nearest")
    return img + rng.uniform(0.5, 2.0) * (img - blurred)


def _shear(img, rng):
    s = rng.uniform(-0.3, 0.3)
    h, w = img.shape
    matrix = np.array([[1.0, 0.0], [s, 1.0]])
    center = np.array([h / 2.0, w / 2.0])
    offset = center - matrix @ center
    return ndimage.affine_transform(img, matrix, offset=offset, order=1, mode="constant", cval=0.0)


def _translate(img, rng):
    limit = max(1, int(round(0.3 * img.shape[0])))
    dy, dx = rng.integers(-limit, limit + 1, size=2)
    return ndimage.shift(img, (int(dy), int(dx)), order=0, mode="constant", cval=0.0)


def _rotate(img, rng):
    return ndimage.rotate(img, rng.uniform(-30.0, 30.0), reshape=False, order=1, mode="constant", cval=0.0)


def _contrast(img, rng):
    mean = img.mean()
    return mean + rng.uniform(0.1, 1.9) * (img - mean)


def _brightness(img, rng):
    return img * rng.uniform(0.1, 1.9)


STRONG_OPS: Dict[str, Callable[[np.ndarray, np.random.Generator], np.ndarray]] = {
    "invert_region": _invert_region,
    "posterize": _posterize,
    "sharpness": _sharpness,
    "shear": _shear,
    "translate": _translate,
    "rotate": _rotate,
    "contrast": _contrast,
    "brightness": _brightness,
}


def random_erase(img: np.ndarray, rng: np.random.Generator, fraction: float = 0.25) -> np.ndarray:
    if fraction <= 0:
        return img
    h, w = img.shape
    ph = max(1, int(round(h * np.sqrt(fraction))))
    pw = max(1, int(round(w * np.sqrt(fraction))))
    y, x = rng.integers(0, h - ph + 1), rng.integers(0, w - pw + 1)
    out = img.copy()
    out[y:y + ph, x:x + pw] = rng.integers(0, 256, size=(ph, pw))
    return out


def strong_augment(
    images: np.ndarray,
    seed: Seed,
    num_ops: int = 2,
    ops: Optional[Sequence[str]] = None,
    erase_fraction: float = 0.25,
) -> np.ndarray:
    rng = _rng(seed)
    names = list(ops or STRONG_OPS)
    unknown = [name for name in names if name not in STRONG_OPS]
    if unknown:
        raise ConfigError(f"unknown strong augmentation op(s) {unknown} (known: {sorted(STRONG_OPS)})")
    out = np.empty_like(np.asarray(images, dtype=np.uint8))
    for i, image in enumerate(images):
        img = image.astype(np.float64)
        if names and num_ops:
            for index in rng.choice(len(names), size=num_ops, replace=num_ops > len(names)):
                img = np.clip(STRONG_OPS[names[index]](img, rng), 0.0, 255.0)
        out[i] = _to_u8(random_erase(img, rng, erase_fraction))
    return out
