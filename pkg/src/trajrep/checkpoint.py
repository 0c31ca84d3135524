"""Model checkpoints: magic ``TRRP``, version u16, u32 header length, a
JSON header (model kind, constructor config, parameter names/shapes),
then the named parameter blocks as little-endian float64 in header order.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .heads import AttentionHead, GRUHead, PerTimeMLP
from .models import ImageScoreNet, TrajectoryEncoder, VectorScoreNet
from .rng import seed_stream

MAGIC = b"TRRP"
VERSION = 1

KINDS = {
    "encoder": TrajectoryEncoder,
    "image_score": ImageScoreNet,
    "vector_score": VectorScoreNet,
    "head_mlp": PerTimeMLP,
    "head_gru": GRUHead,
    "head_attn": AttentionHead,
}


def file_hash(path):
    h = hashlib.blake2s(digest_size=16)
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def save_model(model, kind, config, path, extra=None):
    """Write a checkpoint; returns the file's content hash.

    config must hold the keyword arguments that rebuild the model (minus
    the rng); load_model reconstructs from it and overwrites parameters.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown checkpoint kind '{kind}' (have {sorted(KINDS)})")
    names = sorted(model.params)
    header = {
        "kind": kind,
        "config": config,
        "params": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n].data, dtype="<f8").tobytes())
    return file_hash(path)


def load_model(path):
    """Rebuild the model a checkpoint describes; returns (model, header)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 10 or raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<HI", raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[10:10 + hlen].decode())
    except ValueError as err:
        raise ValueError(f"{path}: bad JSON header: {err}") from err
    if header.get("kind") not in KINDS:
        raise ValueError(f"{path}: unknown model kind {header.get('kind')!r}")

    model = KINDS[header["kind"]](seed_stream(0, "restore"), **header["config"])
    want = {p["name"]: tuple(p["shape"]) for p in header["params"]}
    have = {n: model.params[n].shape for n in model.params}
    if want != have:
        raise ValueError(f"{path}: parameter table does not match the "
                         f"rebuilt architecture")

    offset = 10 + hlen
    for p in header["params"]:
        n = int(np.prod(p["shape"], dtype=np.int64)) if p["shape"] else 1
        end = offset + 8 * n
        if end > len(raw):
            raise ValueError(f"{path}: truncated parameter block '{p['name']}'")
        block = np.frombuffer(raw, dtype="<f8", count=n, offset=offset)
        model.params[p["name"]].data[...] = block.reshape(p["shape"])
        offset = end
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    return model, header
