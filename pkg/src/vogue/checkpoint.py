"""Single-file checkpoints: a text manifest followed by length-prefixed float64 blobs.

Layout::

    vogue-checkpoint <format_version> <manifest_bytes>\\n
    <manifest: UTF-8 JSON, sorted keys>
    repeated per parameter, little-endian:
        u32 name_len, name (UTF-8), u32 ndim, u64 * ndim shape, u64 n_bytes, float64 data
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .data import Vocabs
from .model import ModelConfig, VogueModel

FORMAT_VERSION = 1
MAGIC = "vogue-checkpoint"


class CheckpointError(ValueError):
    pass


def to_bytes(model: VogueModel, seed: int, epoch: int, extra: dict | None = None) -> bytes:
    params = model.named_parameters()
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_config": model.cfg.to_dict(),
        "vocabs": model.vocabs.to_json(),
        "seed": seed,
        "epoch": epoch,
        "parameters": sorted(params),
    }
    if extra:
        manifest["extra"] = extra
    text = json.dumps(manifest, sort_keys=True, indent=1).encode("utf-8")
    buf = io.BytesIO()
    buf.write(f"{MAGIC} {FORMAT_VERSION} {len(text)}\n".encode("ascii"))
    buf.write(text)
    for name in sorted(params):
        data = np.asarray(params[name].data, dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", data.ndim))
        buf.write(struct.pack(f"<{data.ndim}Q", *data.shape))
        payload = data.tobytes()
        buf.write(struct.pack("<Q", len(payload)))
        buf.write(payload)
    return buf.getvalue()


def save(path: str | Path, model: VogueModel, seed: int, epoch: int,
         extra: dict | None = None) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(model, seed, epoch, extra))
    tmp.replace(path)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("truncated checkpoint")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(blob: bytes) -> tuple[VogueModel, dict]:
    nl = blob.find(b"\n")
    head = blob[:nl].decode("ascii", "replace").split() if nl > 0 else []
    if len(head) != 3 or head[0] != MAGIC:
        raise CheckpointError("not a vogue checkpoint")
    if int(head[1]) != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {head[1]}")
    r = _Reader(blob)
    r.pos = nl + 1
    manifest = json.loads(r.take(int(head[2])).decode("utf-8"))
    cfg = ModelConfig(**manifest["model_config"])
    model = VogueModel(cfg, Vocabs.from_json(manifest["vocabs"]), seed=manifest["seed"])
    params = model.named_parameters()
    if sorted(params) != manifest["parameters"]:
        raise CheckpointError("parameter names do not match the model configuration")
    for _ in manifest["parameters"]:
        (n,) = r.unpack("<I")
        name = r.take(n).decode("utf-8")
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q")
        (nbytes,) = r.unpack("<Q")
        if name not in params:
            raise CheckpointError(f"unknown parameter {name}")
        target = params[name]
        if tuple(shape) != target.data.shape:
            raise CheckpointError(f"{name}: shape {tuple(shape)} != {target.data.shape}")
        data = np.frombuffer(r.take(nbytes), dtype="<f8").reshape(shape)
        target.data = data.astype(np.float64, copy=True)
    if r.pos != len(blob):
        raise CheckpointError("trailing bytes after the last parameter")
    return model, manifest


def load(path: str | Path) -> tuple[VogueModel, dict]:
    return from_bytes(Path(path).read_bytes())
