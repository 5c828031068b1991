"""
"DIDA1" checkpoint container.

    b"DIDA1" | uint32 LE manifest length | manifest (UTF-8 JSON) | float32 LE payloads

The manifest lists every tensor as {name, shape, offset}; offsets are byte
offsets into the payload section and tensors are stored in manifest order.
"meta" carries the model spec and resolved experiment config so a checkpoint
can be evaluated on its own.
"""
import json
import logging
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, Tuple

import numpy as np

from errors import CheckpointError
from models import BackboneSpec, DidaNet, build_model

logger = logging.getLogger(__name__)

MAGIC = b"DIDA1"
PAYLOAD_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    tensors: "OrderedDict[str, np.ndarray]"
    meta: Dict[str, Any] = field(default_factory=dict)


def encode_checkpoint(tensors: Dict[str, np.ndarray], meta: Dict[str, Any] | None = None) -> bytes:
    entries = []
    payloads = []
    offset = 0
    for name, array in tensors.items():
        data = np.ascontiguousarray(array, dtype=PAYLOAD_DTYPE)
        entries.append({"name": name, "shape": list(data.shape), "offset": offset})
        raw = data.tobytes()
        payloads.append(raw)
        offset += len(raw)
    manifest = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<I", len(manifest)) + manifest + b"".join(payloads)


def decode_checkpoint(blob: bytes, source: str = "<bytes>") -> Checkpoint:
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{source}: not a DIDA1 checkpoint (magic {blob[:len(MAGIC)]!r})")
    header_end = len(MAGIC) + 4
    if len(blob) < header_end:
        raise CheckpointError(f"{source}: truncated header")
    (manifest_len,) = struct.unpack("<I", blob[len(MAGIC):header_end])
    payload_start = header_end + manifest_len
    if len(blob) < payload_start:
        raise CheckpointError(f"{source}: truncated manifest")
    try:
        manifest = json.loads(blob[header_end:payload_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{source}: corrupt manifest: {e}")

    payload = memoryview(blob)[payload_start:]
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for entry in manifest.get("tensors", []):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        start = int(entry["offset"])
        end = start + count * PAYLOAD_DTYPE.itemsize
        if end > len(payload):
            raise CheckpointError(f"{source}: payload of {entry['name']} is truncated")
        array = np.frombuffer(payload[start:end], dtype=PAYLOAD_DTYPE).reshape(shape)
        tensors[entry["name"]] = array.astype(np.float32)
    return Checkpoint(tensors=tensors, meta=manifest.get("meta", {}))


def save_checkpoint(path: str, tensors: Dict[str, np.ndarray], meta: Dict[str, Any] | None = None) -> None:
    blob = encode_checkpoint(tensors, meta)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)
    logger.info(f"[CHECKPOINT] wrote {len(tensors)} tensors to {path}")


def load_checkpoint(path: str) -> Checkpoint:
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        blob = f.read()
    checkpoint = decode_checkpoint(blob, source=path)
    logger.info(f"[CHECKPOINT] loaded {len(checkpoint.tensors)} tensors from {path}")
    return checkpoint


def save_model(path: str, model: DidaNet, meta: Dict[str, Any] | None = None) -> None:
    """Parameters and BN buffers of model, plus its BackboneSpec under meta["model"]."""
    meta = {**(meta or {}), "model": model.spec.model_dump(mode="json")}
    save_checkpoint(path, model.state_dict(), meta)


def load_model(path: str) -> Tuple[DidaNet, Checkpoint]:
    """Rebuild the model recorded in a checkpoint and load its weights."""
    checkpoint = load_checkpoint(path)
    if "model" not in checkpoint.meta:
        raise CheckpointError(f"{path}: no model spec in checkpoint meta")
    spec = BackboneSpec.model_validate(checkpoint.meta["model"])
    model = build_model(spec, np.random.default_rng(0))
    model.load_state_dict(checkpoint.tensors, strict=True)
    model.eval()
    return model, checkpoint
