"""
IDX reader/writer and the labeled / unlabeled set containers.

Layout (big endian):

    u8 0 | u8 0 | u8 dtype code | u8 ndim | u32 dim_0 ... u32 dim_{ndim-1} | payload

Images are 0x00000803 (u8, 3 dims), labels 0x00000801 (u8, 1 dim).
Files ending in ".gz" are read and written through gzip.
"""
import gzip
import logging
import os
import struct
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from cachetools import LRUCache, cached

from errors import DataError, IdxCountMismatchError, IdxMagicError, IdxTrailingDataError, IdxTruncatedError

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

DTYPE_CODES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
CODES_BY_KIND = {np.dtype(v).newbyteorder("=").str[1:]: k for k, v in DTYPE_CODES.items()}


@dataclass
class LabeledSet:
    images: np.ndarray
    labels: np.ndarray
    domain: str = ""
    split: str = "train"

    def __post_init__(self):
        if self.images.ndim != 3:
            raise DataError(f"{self.domain}: images must be [M, H, W], got shape {self.images.shape}")
        if len(self.images) == 0:
            raise DataError(f"{self.domain}/{self.split}: empty set")
        if len(self.labels) != len(self.images):
            raise IdxCountMismatchError(
                f"{self.domain}: {len(self.images)} images but {len(self.labels)} labels"
            )
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.min() < 0:
            raise DataError(f"{self.domain}: negative label {self.labels.min()}")

    def __len__(self) -> int:
        return len(self.images)

    def check_classes(self, num_classes: int) -> None:
        if self.labels.max() >= num_classes:
            raise DataError(f"{self.domain}: label {self.labels.max()} outside [0, {num_classes})")

    def unlabeled(self) -> "UnlabeledSet":
        return UnlabeledSet(images=self.images, domain=self.domain, split=self.split)

    def subset(self, limit: Optional[int], offset: int = 0) -> "LabeledSet":
        """Samples [offset, offset + limit); limit None keeps everything from offset on."""
        if offset == 0 and (limit is None or limit >= len(self)):
            return self
        if offset >= len(self):
            raise DataError(f"{self.domain}/{self.split}: offset {offset} leaves no samples of {len(self)}")
        end = len(self) if limit is None else offset + limit
        return LabeledSet(self.images[offset:end], self.labels[offset:end], self.domain, self.split)


@dataclass
class UnlabeledSet:
    images: np.ndarray
    domain: str = ""
    split: str = "train"

    def __post_init__(self):
        if self.images.ndim != 3:
            raise DataError(f"{self.domain}: images must be [M, H, W], got shape {self.images.shape}")
        if len(self.images) == 0:
            raise DataError(f"{self.domain}/{self.split}: empty set")

    def __len__(self) -> int:
        return len(self.images)


def _open(path: str, mode: str):
    return gzip.open(path, mode) if path.endswith(".gz") else open(path, mode)


def parse_idx(blob: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(blob) < 4:
        raise IdxTruncatedError(f"{source}: file shorter than the 4-byte magic")
    zero0, zero1, code, ndim = struct.unpack(">BBBB", blob[:4])
    if zero0 or zero1 or code not in DTYPE_CODES or ndim == 0:
        raise IdxMagicError(f"{source}: bad magic 0x{int.from_bytes(blob[:4], 'big'):08x}")
    header_len = 4 + 4 * ndim
    if len(blob) < header_len:
        raise IdxTruncatedError(f"{source}: header needs {header_len} bytes, file has {len(blob)}")
    dims = struct.unpack(f">{ndim}I", blob[4:header_len])
    dtype = DTYPE_CODES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    payload = blob[header_len:]
    if len(payload) < expected:
        raise IdxTruncatedError(f"{source}: payload has {len(payload)} bytes, header {dims} needs {expected}")
    if len(payload) > expected:
        raise IdxTrailingDataError(f"{source}: {len(payload) - expected} trailing bytes after payload")
    array = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return array.astype(dtype.newbyteorder("="))


def _cache_key(path: str):
    if not os.path.exists(path):
        raise DataError(f"IDX file not found: {path}")
    stat = os.stat(path)
    return (os.path.abspath(path), stat.st_mtime_ns, stat.st_size)


@cached(cache=LRUCache(maxsize=32), key=_cache_key)
def read_idx(path: str) -> np.ndarray:
    with _open(path, "rb") as f:
        blob = f.read()
    array = parse_idx(blob, source=path)
    array.setflags(write=False)
    logger.info(f"[IDX] read {path} shape={array.shape}")
    return array


def encode_idx(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    kind = array.dtype.newbyteorder("=").str[1:]
    if kind not in CODES_BY_KIND:
        raise DataError(f"dtype {array.dtype} has no IDX code")
    code = CODES_BY_KIND[kind]
    header = struct.pack(">BBBB", 0, 0, code, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array, dtype=DTYPE_CODES[code]).tobytes()


def write_idx(path: str, array: np.ndarray) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with _open(path, "wb") as f:
        f.write(encode_idx(array))


def load_idx(
    images_path: str,
    labels_path: Optional[str] = None,
    domain: str = "",
    split: str = "train",
) -> Union[LabeledSet, UnlabeledSet]:
    images = read_idx(images_path)
    if images.ndim != 3 or images.dtype != np.uint8:
        raise IdxMagicError(f"{images_path}: expected u8 images with 3 dims, got {images.dtype} {images.shape}")
    domain = domain or os.path.basename(images_path)
    if labels_path is None:
        return UnlabeledSet(images=images, domain=domain, split=split)
    labels = read_idx(labels_path)
    if labels.ndim != 1:
        raise IdxMagicError(f"{labels_path}: expected 1-dim labels, got shape {labels.shape}")
    if len(labels) != len(images):
        raise IdxCountMismatchError(
            f"{images_path} has {len(images)} images but {labels_path} has {len(labels)} labels"
        )
    return LabeledSet(images=images, labels=labels, domain=domain, split=split)


def write_labeled_set(prefix: str, data: LabeledSet) -> Tuple[str, str]:
    images_path = f"{prefix}-images-idx3-ubyte"
    labels_path = f"{prefix}-labels-idx1-ubyte"
    write_idx(images_path, data.images.astype(np.uint8))
    write_idx(labels_path, data.labels.astype(np.uint8))
    return images_path, labels_path
