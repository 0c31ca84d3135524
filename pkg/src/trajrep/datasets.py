"""Procedural image datasets with factored labels, plus IDX ingestion.

Every sample is generated from its own seed stream keyed by (master seed,
index), so a dataset is fully determined by (kind, seed, count) and any
subset can be regenerated without generating the rest.  Images are float64
RGB in [0, 1], channel-first.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .rng import seed_stream

CANVAS = 16

# Six saturated, mutually distant RGB colors; background and foreground are
# drawn from the same palette with fg != bg enforced.
PALETTE = np.array([
    [0.90, 0.10, 0.10],   # red
    [0.10, 0.80, 0.20],   # green
    [0.15, 0.25, 0.90],   # blue
    [0.95, 0.85, 0.10],   # yellow
    [0.85, 0.15, 0.80],   # magenta
    [0.10, 0.80, 0.85],   # cyan
])

COLOR_NAMES = ["red", "green", "blue", "yellow", "magenta", "cyan"]

# 3x3 grid of placement cells; a 5x5 stamp centered on any of these stays
# inside the 16x16 canvas.
CELL_CENTERS = [3, 8, 13]

SHAPE_NAMES = ["square", "disc", "triangle", "cross"]


def _shape_masks():
    dy, dx = np.mgrid[-2:3, -2:3]
    square = np.ones((5, 5), dtype=bool)
    disc = (dx**2 + dy**2) <= 6.25
    triangle = np.zeros((5, 5), dtype=bool)
    for r, width in enumerate([1, 3, 3, 5, 5]):
        half = width // 2
        triangle[r, 2 - half:2 + half + 1] = True
    cross = np.zeros((5, 5), dtype=bool)
    cross[2, :] = True
    cross[:, 2] = True
    return np.stack([square, disc, triangle, cross])


SHAPE_MASKS = _shape_masks()

_DIGIT_ROWS = [
    ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
]

DIGIT_GLYPHS = np.array([[[ch == "1" for ch in row] for row in rows]
                         for rows in _DIGIT_ROWS])


@dataclass
class Dataset:
    """Images plus one integer label array per prediction task."""

    name: str
    images: np.ndarray                    # (N, 3, H, W) float64 in [0, 1]
    labels: dict = field(default_factory=dict)
    n_classes: dict = field(default_factory=dict)
    seed: int = 0

    def __len__(self):
        return self.images.shape[0]

    @property
    def canvas(self):
        return self.images.shape[2]

    @property
    def tasks(self):
        return list(self.labels.keys())

    def fingerprint(self):
        """Content hash over pixels and labels (stable across runs)."""
        h = hashlib.blake2s(digest_size=16)
        h.update(np.ascontiguousarray(self.images.astype(np.float32)).tobytes())
        for task in sorted(self.labels):
            h.update(task.encode())
            h.update(np.ascontiguousarray(self.labels[task].astype(np.int64)).tobytes())
        return h.hexdigest()


def _draw_colors(rng):
    bg = int(rng.integers(0, 6))
    # offset draw keeps the sample count fixed and fg uniform over the rest
    fg = (bg + 1 + int(rng.integers(0, 5))) % 6
    return bg, fg


def _stamp(canvas_img, mask, color, cy, cx):
    h, w = mask.shape
    view = canvas_img[:, cy - h // 2:cy + h // 2 + 1, cx - w // 2:cx + w // 2 + 1]
    view[:, mask] = color[:, None]


def synthetic_sample(seed, index):
    """One 16x16 scene: a colored shape in one of nine cells on a colored field."""
    rng = seed_stream(seed, "synthetic", index)
    bg, fg = _draw_colors(rng)
    location = int(rng.integers(0, 9))
    shape = int(rng.integers(0, 4))
    img = np.empty((3, CANVAS, CANVAS))
    img[:] = PALETTE[bg][:, None, None]
    cy, cx = CELL_CENTERS[location // 3], CELL_CENTERS[location % 3]
    _stamp(img, SHAPE_MASKS[shape], PALETTE[fg], cy, cx)
    return img, {"bg_color": bg, "fg_color": fg, "location": location, "shape": shape}


def make_synthetic(count, seed):
    images = np.empty((count, 3, CANVAS, CANVAS))
    labels = {k: np.empty(count, dtype=np.int64)
              for k in ("bg_color", "fg_color", "location", "shape")}
    for i in range(count):
        images[i], lab = synthetic_sample(seed, i)
        for k, v in lab.items():
            labels[k][i] = v
    return Dataset("synthetic", images, labels,
                   {"bg_color": 6, "fg_color": 6, "location": 9, "shape": 4},
                   seed=seed)


def digit_sample(seed, index):
    rng = seed_stream(seed, "digits", index)
    bg, fg = _draw_colors(rng)
    digit = int(rng.integers(0, 10))
    glyph = DIGIT_GLYPHS[digit].repeat(2, axis=0).repeat(2, axis=1)   # 14x10
    img = np.empty((3, CANVAS, CANVAS))
    img[:] = PALETTE[bg][:, None, None]
    view = img[:, 1:15, 3:13]
    view[:, glyph] = PALETTE[fg][:, None]
    return img, {"digit": digit, "bg_color": bg, "fg_color": fg}


def make_digits(count, seed):
    images = np.empty((count, 3, CANVAS, CANVAS))
    labels = {k: np.empty(count, dtype=np.int64) for k in ("digit", "bg_color", "fg_color")}
    for i in range(count):
        images[i], lab = digit_sample(seed, i)
        for k, v in lab.items():
            labels[k][i] = v
    return Dataset("digits", images, labels,
                   {"digit": 10, "bg_color": 6, "fg_color": 6}, seed=seed)


def make_dataset(kind, count, seed):
    if kind == "synthetic":
        return make_synthetic(count, seed)
    if kind == "digits":
        return make_digits(count, seed)
    raise ValueError(f"unknown dataset kind '{kind}' (have: synthetic, digits)")


# --- IDX ingestion -----------------------------------------------------------

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def load_idx(path):
    """Read an IDX file: uint8 images (N,H,W) or labels (N,). Big-endian."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic == IDX_IMAGES_MAGIC:
        n, h, w = struct.unpack(">III", raw[4:16])
        body = np.frombuffer(raw, dtype=np.uint8, offset=16)
        if body.size != n * h * w:
            raise ValueError(f"{path}: payload size {body.size} != {n}x{h}x{w}")
        return body.reshape(n, h, w).copy()
    if magic == IDX_LABELS_MAGIC:
        n = struct.unpack(">I", raw[4:8])[0]
        body = np.frombuffer(raw, dtype=np.uint8, offset=8)
        if body.size != n:
            raise ValueError(f"{path}: payload size {body.size} != {n}")
        return body.copy()
    raise ValueError(f"{path}: unrecognized IDX magic 0x{magic:08x}")


def dataset_from_bitmaps(bitmaps, digit_labels, seed, threshold=128, name="idx"):
    """Colorize grayscale bitmaps into the palette world.

    Pixels >= threshold become foreground.  Color factors are drawn the
    same way as for the procedural sets, so the color tasks exist here too.
    """
    bitmaps = np.asarray(bitmaps)
    count, h, w = bitmaps.shape
    images = np.empty((count, 3, h, w))
    labels = {
        "digit": np.asarray(digit_labels, dtype=np.int64),
        "bg_color": np.empty(count, dtype=np.int64),
        "fg_color": np.empty(count, dtype=np.int64),
    }
    if labels["digit"].shape != (count,):
        raise ValueError(f"labels shape {labels['digit'].shape} != ({count},)")
    for i in range(count):
        rng = seed_stream(seed, "colorize", i)
        bg, fg = _draw_colors(rng)
        labels["bg_color"][i] = bg
        labels["fg_color"][i] = fg
        mask = bitmaps[i] >= threshold
        images[i] = PALETTE[bg][:, None, None]
        images[i][:, mask] = PALETTE[fg][:, None]
    n_classes = {"digit": int(labels["digit"].max()) + 1, "bg_color": 6, "fg_color": 6}
    return Dataset(name, images, labels, n_classes, seed=seed)


# --- persistence ----------------------------------------------------------------


def save_dataset(ds, path):
    """Write <path>.npz plus a JSON manifest next to it; returns manifest dict."""
    path = str(path)
    base = path[:-4] if path.endswith(".npz") else path
    arrays = {"images": ds.images.astype(np.float32)}
    for k, v in ds.labels.items():
        arrays[f"label_{k}"] = v
    np.savez_compressed(base + ".npz", **arrays)
    manifest = {
        "name": ds.name,
        "seed": int(ds.seed),
        "count": len(ds),
        "canvas": int(ds.canvas),
        "n_classes": {k: int(v) for k, v in ds.n_classes.items()},
        "fingerprint": ds.fingerprint(),
    }
    with open(base + ".json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_dataset(path):
    """Load an .npz written by save_dataset; verifies the manifest hash."""
    path = str(path)
    base = path[:-4] if path.endswith(".npz") else path
    with np.load(base + ".npz") as npz:
        images = npz["images"].astype(np.float64)
        labels = {k[len("label_"):]: npz[k].astype(np.int64)
                  for k in npz.files if k.startswith("label_")}
    with open(base + ".json") as fh:
        manifest = json.load(fh)
    ds = Dataset(manifest["name"], images, labels,
                 {k: int(v) for k, v in manifest["n_classes"].items()},
                 seed=int(manifest["seed"]))
    got = ds.fingerprint()
    if got != manifest["fingerprint"]:
        raise ValueError(f"{base}.npz: content hash {got} does not match manifest")
    return ds
