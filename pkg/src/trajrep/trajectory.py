"""Trajectory codes on a uniform time grid, plus their on-disk cache.

Cache layout: magic ``TRJC``, version u16, k u16, c u32, count u32 (all
little-endian), then count*(k+1)*c float32 values in sample order, then a
JSON footer tying the file to its dataset fingerprint and encoder
checkpoint hash.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .sde import grid_times

MAGIC = b"TRJC"
VERSION = 1
_HEADER = struct.Struct("<HHII")


@dataclass(frozen=True)
class Trajectory:
    """One sample's code path: times (T,), codes (T, c)."""

    times: np.ndarray
    codes: np.ndarray


@dataclass
class TrajectoryCodes:
    """Codes for a whole dataset: (N, k+1, c) float32, uniform grid."""

    k: int
    codes: np.ndarray
    dataset_fingerprint: str = ""
    encoder_hash: str = ""

    def __post_init__(self):
        want = self.k + 1
        if self.codes.ndim != 3 or self.codes.shape[1] != want:
            raise ValueError(
                f"codes shape {self.codes.shape} does not match k={self.k} "
                f"(expect (N, {want}, c))")

    @property
    def times(self):
        return grid_times(self.k)

    @property
    def latent_dim(self):
        return self.codes.shape[2]

    def __len__(self):
        return self.codes.shape[0]

    def sample(self, i):
        return Trajectory(self.times, np.asarray(self.codes[i], dtype=np.float64))


def extract_codes(encoder, dataset, k, encoder_hash="", chunk=512):
    """Frozen-encoder read-out over the k+1 uniform grid times.

    Deterministic: vdrl encoders contribute their posterior mean.  Stored
    as float32 so in-memory results match a cache round trip exactly.
    """
    codes = encoder.read_codes(dataset.images, grid_times(k), chunk=chunk)
    return TrajectoryCodes(k=int(k), codes=codes.astype(np.float32),
                           dataset_fingerprint=dataset.fingerprint(),
                           encoder_hash=encoder_hash)


def save_codes(tc, path):
    codes = np.ascontiguousarray(tc.codes, dtype="<f4")
    n, n_times, c = codes.shape
    footer = json.dumps({
        "dataset_fingerprint": tc.dataset_fingerprint,
        "encoder_hash": tc.encoder_hash,
    }, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(VERSION, tc.k, c, n))
        fh.write(codes.tobytes())
        fh.write(footer)


def load_codes(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 + _HEADER.size or raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a trajectory cache (bad magic)")
    version, k, c, count = _HEADER.unpack_from(raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported cache version {version}")
    body = 4 + _HEADER.size
    n_vals = count * (k + 1) * c
    end = body + 4 * n_vals
    if len(raw) < end:
        raise ValueError(f"{path}: truncated payload "
                         f"({len(raw) - body} bytes, expected {4 * n_vals})")
    codes = np.frombuffer(raw, dtype="<f4", count=n_vals, offset=body)
    codes = codes.reshape(count, k + 1, c).copy()
    try:
        footer = json.loads(raw[end:].decode())
    except ValueError as err:
        raise ValueError(f"{path}: bad JSON footer: {err}") from err
    return TrajectoryCodes(k=k, codes=codes,
                           dataset_fingerprint=footer.get("dataset_fingerprint", ""),
                           encoder_hash=footer.get("encoder_hash", ""))


def separation_gap(traj_a, traj_b):
    """Distance at t=0 versus the largest distance anywhere on the grid.

    Returns (sep0, sep_sup, argmax_time).  sep_sup >= sep0 always, since
    t=0 is itself a grid point.
    """
    if traj_a.times.shape != traj_b.times.shape or np.any(traj_a.times != traj_b.times):
        raise ValueError("trajectories use different grids")
    d = np.linalg.norm(np.asarray(traj_a.codes, dtype=np.float64)
                       - np.asarray(traj_b.codes, dtype=np.float64), axis=1)
    i = int(d.argmax())
    return float(d[0]), float(d[i]), float(traj_a.times[i])
