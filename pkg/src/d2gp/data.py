"""Dataset generation and ingestion: synthetic phantoms, PGM (P5) and
IDX ubyte image files. Loaded images are float64 in [0, 1], flattened."""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import DataError, FormatError, ParameterError

MANIFEST_NAME = "manifest.json"
IDX_IMAGE_MAGIC = 0x00000803


# ---------------------------------------------------------------------------
# PGM (binary P5, maxval 255)
# ---------------------------------------------------------------------------

def save_pgm(path, image):
    """image: 2D float in [0, 1]; quantized to 8 bits."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise DataError(f"save_pgm expects a 2D image, got shape {img.shape}")
    q = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def load_pgm(path):
    """Returns a 2D float64 image in [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5)", offset=0)
    off = 2
    fields = []
    while len(fields) < 3:
        while off < len(blob) and blob[off:off + 1].isspace():
            off += 1
        if off < len(blob) and blob[off:off + 1] == b"#":
            while off < len(blob) and blob[off:off + 1] != b"\n":
                off += 1
            continue
        start = off
        while off < len(blob) and not blob[off:off + 1].isspace():
            off += 1
        if start == off:
            raise FormatError(f"{path}: truncated PGM header", offset=off)
        fields.append(blob[start:off])
    off += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError:
        raise FormatError(f"{path}: malformed PGM header", offset=2)
    if maxval != 255:
        raise FormatError(f"{path}: unsupported PGM maxval {maxval}", offset=2)
    need = width * height
    if len(blob) - off < need:
        raise FormatError(f"{path}: truncated PGM payload", offset=off)
    data = np.frombuffer(blob[off:off + need], dtype=np.uint8)
    return data.reshape(height, width).astype(np.float64) / 255.0


# ---------------------------------------------------------------------------
# IDX ubyte images
# ---------------------------------------------------------------------------

def load_idx_images(path):
    """Returns (N, H, W) float64 images in [0, 1] from an IDX ubyte file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise FormatError(f"{path}: truncated IDX header", offset=0)
    (magic,) = struct.unpack(">I", blob[:4])
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(
            f"{path}: magic 0x{magic:08x} is not an IDX ubyte image file "
            f"(expected 0x{IDX_IMAGE_MAGIC:08x})", offset=0)
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated IDX dimensions", offset=4)
    n, h, w = struct.unpack(">III", blob[4:16])
    need = n * h * w
    if len(blob) - 16 < need:
        raise FormatError(f"{path}: truncated IDX payload", offset=16)
    if len(blob) - 16 > need:
        raise FormatError(f"{path}: {len(blob) - 16 - need} trailing bytes", offset=16 + need)
    data = np.frombuffer(blob[16:], dtype=np.uint8)
    return data.reshape(n, h, w).astype(np.float64) / 255.0


def resize_nearest(img, side):
    """Nearest-neighbor resize of a 2D image to side x side."""
    h, w = img.shape
    ri = (np.arange(side) * h) // side
    ci = (np.arange(side) * w) // side
    return img[np.ix_(ri, ci)]


# ---------------------------------------------------------------------------
# synthetic phantoms
# ---------------------------------------------------------------------------

def _render_phantom(side, rng, supersample=4):
    """1-4 anti-aliased ellipses/rectangles, intensities in [0.2, 1.0]."""
    S = side * supersample
    yy, xx = np.mgrid[0:S, 0:S]
    yy = (yy + 0.5) / S
    xx = (xx + 0.5) / S
    canvas = np.zeros((S, S))
    for _ in range(rng.integers(1, 5)):
        intensity = rng.uniform(0.2, 1.0)
        cy, cx = rng.uniform(0.2, 0.8, size=2)
        ry, rx = rng.uniform(0.08, 0.3, size=2)
        if rng.random() < 0.5:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        canvas = np.maximum(canvas, intensity * mask)
    # box-average down for anti-aliasing
    return canvas.reshape(side, supersample, side, supersample).mean(axis=(1, 3))


def gen_data(count, image_side, seed, out_dir, train_fraction=0.8):
    """Write ``count`` phantom PGMs plus a manifest; deterministic per seed."""
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    files = []
    for i in range(count):
        img = _render_phantom(image_side, rng)
        name = f"phantom_{i:05d}.pgm"
        save_pgm(os.path.join(out_dir, name), img)
        files.append(name)
    manifest = {
        "schema": 1,
        "source": "synthetic",
        "count": count,
        "image_side": image_side,
        "normalization": "divide_255",
        "seed": seed,
        "split": {"seed": seed, "train_fraction": train_fraction},
        "files": files,
    }
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


def load_dataset(manifest, base_dir=None, image_side=None):
    """Load a dataset described by a manifest (dict or path to JSON).

    Returns a (N, side*side) float64 array in [0, 1], ordered by filename
    (PGM) or record index (IDX).
    """
    if isinstance(manifest, str):
        base_dir = base_dir or os.path.dirname(os.path.abspath(manifest))
        with open(manifest) as fh:
            manifest = json.load(fh)
    source = manifest.get("source")
    side = image_side or manifest.get("image_side")
    if side is None:
        raise DataError("manifest lacks image_side and none was supplied")
    if source in ("synthetic", "pgm_dir"):
        if "files" in manifest:
            names = list(manifest["files"])
        else:
            names = sorted(f for f in os.listdir(base_dir) if f.endswith(".pgm"))
        if not names:
            raise DataError(f"no PGM files found under {base_dir}")
        imgs = []
        for name in names:
            img = load_pgm(os.path.join(base_dir, name))
            if img.shape != (side, side):
                img = resize_nearest(img, side)
            imgs.append(img.reshape(-1))
        return np.asarray(imgs)
    if source == "idx_pair":
        path = manifest["images"]
        if base_dir is not None and not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        raw = load_idx_images(path)
        if "count" in manifest:
            raw = raw[: manifest["count"]]
        return np.asarray([resize_nearest(im, side).reshape(-1) for im in raw])
    raise DataError(f"unknown dataset source {source!r}")


def split_dataset(X, split_seed, train_fraction):
    """Deterministic shuffled train/test split."""
    rng = np.random.default_rng(split_seed)
    order = rng.permutation(len(X))
    n_train = int(round(train_fraction * len(X)))
    return X[order[:n_train]], X[order[n_train:]]
