"""Synthetic texture dataset, its binary container, and 8-bit PNM image I/O.

Dataset file layout (little-endian)::

    b"MNDDAT1\\0"        8-byte magic
    uint32 count, uint32 channels, uint32 height, uint32 width
    uint64 seed
    uint8[count]        labels
    uint8[count*C*H*W]  pixels, row-major (N, C, H, W); value / 255 is the intensity
"""

import colorsys
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, UsageError

MAGIC = b"MNDDAT1\x00"
NUM_CLASSES = 10
IMAGE_SHAPE = (3, 32, 32)
# low contrast and overlapping hues keep class margins small enough for 8/255 attacks
HUE_JITTER = 0.025
SATURATION = 0.5
NOISE = 0.01
CONTRAST = 0.4

# one row per class: (hue, shape, stripe cycles across the image, stripe angle in degrees)
CLASS_STYLES = [
    (0.00, "disk", 2.0, 0.0),
    (0.10, "square", 3.0, 30.0),
    (0.20, "triangle", 4.0, 60.0),
    (0.30, "ring", 2.5, 90.0),
    (0.40, "cross", 3.5, 120.0),
    (0.50, "diamond", 4.5, 150.0),
    (0.60, "disk", 5.0, 45.0),
    (0.70, "square", 2.0, 135.0),
    (0.80, "ring", 4.0, 15.0),
    (0.90, "cross", 3.0, 75.0),
]


@dataclass
class Dataset:
    images: np.ndarray  # (N, 3, H, W) float64 on the 1/255 grid
    labels: np.ndarray  # (N,) int64
    seed: int

    def __len__(self):
        return len(self.labels)


def quantize(x):
    """Clamp to [0, 1] and snap to the nearest multiple of 1/255."""
    return np.rint(np.clip(x, 0.0, 1.0) * 255.0) / 255.0


def _shape_mask(kind, yy, xx, cy, cx, r):
    dy, dx = yy - cy, xx - cx
    if kind == "disk":
        return dy * dy + dx * dx <= r * r
    if kind == "square":
        return (np.abs(dy) <= r * 0.85) & (np.abs(dx) <= r * 0.85)
    if kind == "triangle":
        return (dy <= r * 0.8) & (dy >= -r) & (np.abs(dx) <= (dy + r) * 0.55)
    if kind == "ring":
        d2 = dy * dy + dx * dx
        return (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)
    if kind == "cross":
        return ((np.abs(dy) <= r * 0.3) & (np.abs(dx) <= r)) | ((np.abs(dx) <= r * 0.3) & (np.abs(dy) <= r))
    if kind == "diamond":
        return np.abs(dy) + np.abs(dx) <= r
    raise ValueError(kind)


def _rgb(h, s, v):
    return np.array(colorsys.hsv_to_rgb(h % 1.0, s, v))


def render(label, rng, shape=IMAGE_SHAPE):
    """Render one image of class ``label`` with seeded jitter and noise."""
    hue, kind, cycles, angle = CLASS_STYLES[label]
    _, h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    hue = hue + rng.normal(0.0, HUE_JITTER)
    theta = np.deg2rad(angle + rng.normal(0.0, 8.0))
    freq = cycles * (1.0 + rng.normal(0.0, 0.06)) / w
    phase = rng.uniform(0.0, 2 * np.pi)
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    dark = _rgb(hue, SATURATION, 0.45 + rng.uniform(-0.05, 0.05))
    light = _rgb(hue, SATURATION * 0.6, 0.6 + rng.uniform(-0.05, 0.05))
    img = dark[:, None, None] + (light - dark)[:, None, None] * stripes[None]
    cy = h / 2 + rng.uniform(-4, 4)
    cx = w / 2 + rng.uniform(-4, 4)
    r = min(h, w) * rng.uniform(0.22, 0.32)
    mask = _shape_mask(kind, yy, xx, cy, cx, r)
    fill = _rgb(hue + 0.5, SATURATION * 0.5, 0.7 + rng.uniform(-0.05, 0.05))
    img = np.where(mask[None], fill[:, None, None], img)
    img = 0.5 + CONTRAST * (img - 0.5) + rng.normal(0.0, NOISE, size=img.shape)
    return quantize(img)


def generate(samples_per_class, seed, shape=IMAGE_SHAPE):
    """Balanced dataset, classes interleaved (0, 1, ..., 9, 0, 1, ...)."""
    rng = np.random.default_rng(seed)
    n = samples_per_class * NUM_CLASSES
    labels = np.tile(np.arange(NUM_CLASSES), samples_per_class).astype(np.int64)
    images = np.empty((n,) + tuple(shape))
    for i, lab in enumerate(labels):
        images[i] = render(int(lab), rng, shape)
    return Dataset(images, labels, int(seed))


def save_dataset(ds, path):
    n, c, h, w = ds.images.shape
    pix = np.rint(ds.images * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIIIQ", n, c, h, w, ds.seed))
        fh.write(ds.labels.astype(np.uint8).tobytes())
        fh.write(pix.tobytes())


def load_dataset(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise UsageError(f"{path}: not a dataset file")
    n, c, h, w, seed = struct.unpack_from("<IIIIQ", blob, 8)
    off = 8 + struct.calcsize("<IIIIQ")
    expected = off + n + n * c * h * w
    if len(blob) != expected:
        raise UsageError(f"{path}: expected {expected} bytes, found {len(blob)}")
    labels = np.frombuffer(blob, dtype=np.uint8, count=n, offset=off).astype(np.int64)
    pix = np.frombuffer(blob, dtype=np.uint8, offset=off + n).reshape(n, c, h, w)
    return Dataset(pix.astype(np.float64) / 255.0, labels, int(seed))


def write_manifest(ds, data_path, manifest_path):
    doc = {
        "file": os.path.basename(data_path),
        "count": len(ds),
        "shape": list(ds.images.shape[1:]),
        "seed": ds.seed,
        "num_classes": NUM_CLASSES,
        "records": [{"index": i, "label": int(lab)} for i, lab in enumerate(ds.labels)],
    }
    with open(manifest_path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------- PNM


def to_uint8(img):
    return np.rint(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, image):
    """Write a (3, H, W) float image in [0, 1] as binary P6."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"P6 needs a (3, H, W) image, got {image.shape}")
    _, h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(to_uint8(image).transpose(1, 2, 0).tobytes())


def write_pgm(path, gray):
    """Write an (H, W) uint8 map, or a float map in [0, 1], as binary P5."""
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise ShapeError(f"P5 needs an (H, W) map, got {gray.shape}")
    if gray.dtype != np.uint8:
        gray = to_uint8(gray)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def _tokens(blob, count):
    out, i = [], 2
    while len(out) < count:
        while blob[i:i + 1].isspace():
            i += 1
        if blob[i:i + 1] == b"#":
            while blob[i:i + 1] not in (b"\n", b""):
                i += 1
            continue
        j = i
        while not blob[j:j + 1].isspace():
            j += 1
        out.append(int(blob[i:j]))
        i = j
    return out, i + 1


def read_pnm(path):
    """Read P5/P6. Returns float64 in [0, 1]: (3, H, W) for P6, (H, W) for P5."""
    with open(path, "rb") as fh:
        blob = fh.read()
    magic = blob[:2]
    if magic not in (b"P5", b"P6"):
        raise UsageError(f"{path}: only binary P5/P6 files are supported")
    (w, h, maxval), start = _tokens(blob, 3)
    if maxval != 255:
        raise UsageError(f"{path}: only 8-bit files are supported")
    depth = 3 if magic == b"P6" else 1
    pix = np.frombuffer(blob, dtype=np.uint8, count=w * h * depth, offset=start)
    if magic == b"P6":
        return pix.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0
    return pix.reshape(h, w).astype(np.float64) / 255.0


def resize_nearest(image, height, width):
    c, h, w = image.shape
    ri = (np.arange(height) * h) // height
    ci = (np.arange(width) * w) // width
    return image[:, ri][:, :, ci]


def load_image_folder(folder, shape=IMAGE_SHAPE):
    """Load every ``*.ppm`` in ``folder`` (sorted by name), resized by nearest neighbour."""
    names = sorted(f for f in os.listdir(folder) if f.lower().endswith(".ppm"))
    images = [resize_nearest(read_pnm(os.path.join(folder, f)), shape[1], shape[2]) for f in names]
    return names, np.stack(images) if images else np.zeros((0,) + tuple(shape))
