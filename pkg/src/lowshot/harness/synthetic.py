"""Synthetic image families with learnable structure.

``blob_images``: a soft-edged ellipse on a flat background, two classes,
each with its own (jittered) background/foreground colors.

``tinted_images``: smooth random luminance fields rendered with one fixed
hue, so chroma is a deterministic function of luma.

All generators return float arrays (N, 3, R, R) in [-1, 1] and can also be
written out as PNG files to exercise the directory loader.
"""

import os

import numpy as np
from PIL import Image

from ..operators import LUMA_COEFFS

PALETTES = (
    # (background, foreground) on the [0, 1] scale
    ((0.15, 0.25, 0.55), (0.90, 0.75, 0.30)),
    ((0.20, 0.55, 0.25), (0.85, 0.30, 0.35)),
)

DEFAULT_TINT = (1.20, 0.98, 0.62)


def _grid(resolution):
    c = (np.arange(resolution) + 0.5) / resolution
    return np.meshgrid(c, c, indexing="ij")


def blob_images(count, resolution=32, seed=0, jitter=0.04, palettes=PALETTES):
    rng = np.random.default_rng(seed)
    yy, xx = _grid(resolution)
    out = np.empty((count, 3, resolution, resolution))
    for i in range(count):
        bg, fg = (np.asarray(c) for c in palettes[rng.integers(len(palettes))])
        bg = np.clip(bg + rng.uniform(-jitter, jitter, 3), 0.05, 0.95)
        fg = np.clip(fg + rng.uniform(-jitter, jitter, 3), 0.05, 0.95)
        cy, cx = rng.uniform(0.3, 0.7, 2)
        ry, rx = rng.uniform(0.14, 0.3, 2)
        d = np.sqrt(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2)
        mask = 1.0 / (1.0 + np.exp((d - 1.0) * 12.0))
        img = bg[:, None, None] * (1 - mask) + fg[:, None, None] * mask
        out[i] = img * 2 - 1
    return out


def tint_vector(tint=DEFAULT_TINT):
    t = np.asarray(tint, dtype=np.float64)
    return t / (np.asarray(LUMA_COEFFS) @ t)


def tinted_images(count, resolution=32, seed=0, tint=DEFAULT_TINT):
    rng = np.random.default_rng(seed)
    t = tint_vector(tint)
    top = 0.98 / t.max()
    yy, xx = _grid(resolution)
    out = np.empty((count, 3, resolution, resolution))
    for i in range(count):
        field = np.zeros((resolution, resolution))
        for _ in range(rng.integers(2, 4)):
            cy, cx = rng.uniform(0.15, 0.85, 2)
            s = rng.uniform(0.1, 0.25)
            field += rng.uniform(0.5, 1.0) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        field = field / field.max()
        luma = 0.08 + (top - 0.08) * field
        out[i] = (t[:, None, None] * luma) * 2 - 1
    return out


def chroma(images):
    """Per-pixel RGB minus its luma, on the [0, 1] scale: (..., 3, H, W)."""
    unit = (np.asarray(images, dtype=np.float64) + 1) / 2
    luma = np.tensordot(unit, np.asarray(LUMA_COEFFS), axes=([-3], [0]))
    return unit - np.expand_dims(luma, -3)


def chroma_error(estimate, truth):
    """Mean over pixels of the Euclidean distance between chroma vectors."""
    d = chroma(estimate) - chroma(truth)
    return float(np.mean(np.sqrt((d * d).sum(axis=-3))))


def write_pngs(images, directory, prefix="img"):
    """Save (N, 3, R, R) images in [-1, 1] as 8-bit PNG files; returns the paths."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for i, img in enumerate(images):
        arr = np.clip(np.round((img.transpose(1, 2, 0) + 1) / 2 * 255), 0, 255).astype(np.uint8)
        path = os.path.join(directory, f"{prefix}_{i:04d}.png")
        Image.fromarray(arr, "RGB").save(path)
        paths.append(path)
    return paths
