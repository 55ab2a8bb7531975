"""Binary checkpoint container: magic, JSON metadata block, named float32 tensors."""
from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"BSGCKPT1"


class CheckpointFormatError(ValueError):
    pass


def save_checkpoint(path: str, kind: str, tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Write the container; tensors are stored row-major float32."""
    meta = dict(meta)
    meta["kind"] = kind
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<Q", len(tensors)))
        for name, arr in tensors.items():
            data = np.ascontiguousarray(arr, dtype=np.float32)
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            fh.write(data.tobytes())


def load_checkpoint(path: str) -> tuple[str, dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"bad magic; expected {MAGIC!r}")
    off = len(MAGIC)

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise CheckpointFormatError("truncated checkpoint")
        out = blob[off : off + n]
        off += n
        return out

    (meta_len,) = struct.unpack("<Q", take(8))
    meta = json.loads(take(meta_len).decode("utf-8"))
    (n_tensors,) = struct.unpack("<Q", take(8))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim)) if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(4 * count), dtype=np.float32).reshape(shape).copy()
        tensors[name] = data
    kind = meta.pop("kind", None)
    if kind is None:
        raise CheckpointFormatError("metadata missing model kind")
    return kind, tensors, meta


def state_dict_to_tensors(state_dict) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy() for k, v in state_dict.items()}


def tensors_to_state_dict(tensors: dict[str, np.ndarray]):
    import torch

    return {k: torch.from_numpy(v.copy()) for k, v in tensors.items()}
