"""
Synthetic domain shift and toy digit generation.

Recipes are pixel transforms chained with "+", e.g. "invert+noise(0.2)":

    invert          255 - x
    noise(s)        additive Gaussian noise, std s * 255
    rotate(deg)     rotation about the image centre (bilinear, zero fill)
    stripes(p)      every other band of p rows is inverted
"""
import hashlib
import logging
import os
import re
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from data.idx import LabeledSet, load_idx, write_labeled_set
from errors import DataError

logger = logging.getLogger(__name__)

RECIPE_PATTERN = re.compile(r"^([a-z_]+)(?:\(([-+0-9.eE]+)\))?$")
RECIPES_WITH_ARG = {"noise", "rotate", "stripes"}
RECIPES = {"invert"} | RECIPES_WITH_ARG


def parse_recipe(recipe: str) -> List[Tuple[str, Optional[float]]]:
    steps = []
    for part in recipe.replace(" ", "").split("+"):
        match = RECIPE_PATTERN.match(part)
        if not match or match.group(1) not in RECIPES:
            raise DataError(f"unknown synthetic recipe {part!r} (known: {sorted(RECIPES)})")
        name, arg = match.group(1), match.group(2)
        if (name in RECIPES_WITH_ARG) != (arg is not None):
            raise DataError(f"recipe {name!r} {'needs' if name in RECIPES_WITH_ARG else 'takes no'} argument")
        steps.append((name, float(arg) if arg is not None else None))
    return steps


def _to_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def apply_recipe(images: np.ndarray, recipe: str, rng: np.random.Generator) -> np.ndarray:
    out = np.array(images, dtype=np.uint8)
    for name, arg in parse_recipe(recipe):
        if name == "invert":
            out = 255 - out
        elif name == "noise":
            if arg == 0:
                continue
            out = _to_u8(out.astype(np.float64) + rng.normal(0.0, arg * 255.0, size=out.shape))
        elif name == "rotate":
            rotated = ndimage.rotate(out.astype(np.float64), arg, axes=(2, 1), reshape=False, order=1, mode="constant")
            out = _to_u8(rotated)
        elif name == "stripes":
            period = int(arg)
            if period < 1:
                raise DataError(f"stripes period must be >= 1, got {arg}")
            rows = (np.arange(out.shape[1]) // period) % 2 == 1
            out = out.copy()
            out[:, rows, :] = 255 - out[:, rows, :]
    return out


def _cache_prefix(cache_dir: str, base: LabeledSet, recipe: str, seed: int) -> str:
    digest = hashlib.sha1()
    digest.update(base.images.tobytes())
    digest.update(base.labels.tobytes())
    digest.update(f"{recipe}|{seed}".encode())
    tag = re.sub(r"[^a-z0-9]+", "_", recipe.lower()).strip("_")
    return os.path.join(cache_dir, f"{base.domain.replace('/', '_')}-{tag}-{digest.hexdigest()[:12]}")


def make_synthetic_domain(
    base: LabeledSet,
    recipe: str,
    seed: int = 0,
    cache_dir: Optional[str] = None,
) -> LabeledSet:
    """A domain-shifted copy of base with labels preserved; cached as IDX files when cache_dir is set."""
    parse_recipe(recipe)
    domain = f"{base.domain}/{recipe}"
    if cache_dir:
        prefix = _cache_prefix(cache_dir, base, recipe, seed)
        images_path = f"{prefix}-images-idx3-ubyte"
        if os.path.exists(images_path):
            logger.info(f"[DATA] synthetic domain {domain} from cache {prefix}")
            return load_idx(images_path, f"{prefix}-labels-idx1-ubyte", domain=domain, split=base.split)
    images = apply_recipe(base.images, recipe, np.random.default_rng(seed))
    shifted = LabeledSet(images=images, labels=base.labels.copy(), domain=domain, split=base.split)
    if cache_dir:
        write_labeled_set(prefix, shifted)
        logger.info(f"[DATA] cached synthetic domain {domain} at {prefix}")
    return shifted


def _stroke(canvas: np.ndarray, start, end, width: float) -> None:
    size = canvas.shape[0]
    yy, xx = np.mgrid[0:size, 0:size]
    p0, p1 = np.asarray(start, dtype=np.float64), np.asarray(end, dtype=np.float64)
    d = p1 - p0
    length2 = max(float(d @ d), 1e-9)
    t = np.clip(((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / length2, 0.0, 1.0)
    dist = np.hypot(yy - (p0[0] + t * d[0]), xx - (p0[1] + t * d[1]))
    np.maximum(canvas, np.clip(width - dist + 0.5, 0.0, 1.0), out=canvas)


def class_prototypes(num_classes: int, strokes: int = 3, size: int = 28) -> List[np.ndarray]:
    """Fixed stroke endpoints per class: [strokes, 2 points, (y, x)]."""
    prototypes = []
    for c in range(num_classes):
        rng = np.random.default_rng(7919 + c)
        prototypes.append(rng.uniform(0.2 * size, 0.8 * size, size=(strokes, 2, 2)))
    return prototypes


def make_toy_set(
    count: int,
    seed: int = 0,
    num_classes: int = 10,
    size: int = 28,
    domain: str = "toy",
    split: str = "train",
) -> LabeledSet:
    """Class-conditional stroke images with per-sample jitter; balanced labels."""
    if count < 1:
        raise DataError("toy set needs at least one sample")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(count) % num_classes)
    prototypes = class_prototypes(num_classes, size=size)
    images = np.zeros((count, size, size), dtype=np.uint8)
    for i, label in enumerate(labels):
        canvas = np.zeros((size, size), dtype=np.float64)
        offset = rng.uniform(-2.0, 2.0, size=2)
        for start, end in prototypes[label]:
            jitter = rng.normal(0.0, 0.7, size=(2, 2))
            _stroke(canvas, start + offset + jitter[0], end + offset + jitter[1], width=rng.uniform(1.0, 1.8))
        images[i] = _to_u8(canvas * rng.uniform(200.0, 255.0))
    logger.debug(f"[DATA] toy set {domain}/{split} count={count} seed={seed}")
    return LabeledSet(images=images, labels=labels, domain=domain, split=split)
