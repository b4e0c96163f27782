"""Training data: HR image sets, synthetic cross-scale textures, batch sampling
and dihedral augmentation.

All randomness comes from ``numpy.random.Generator`` instances backed by
PCG64. Batch ``k`` of a run uses ``default_rng([seed, k])`` so any step can be
regenerated without replaying earlier ones.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .imageio import bicubic_resize, list_pngs, load_png

log = logging.getLogger(__name__)


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step])


def synthetic_textures(count: int, size: int = 64, seed: int = 0, cells: int = 4, cell: int = 4,
                       region: int | None = None) -> list[np.ndarray]:
    """Periodic textures with cross-scale repetition, as (3, size, size) float32 in [0, 1].

    Each image draws a 3-colour palette and a ``cells`` x ``cells`` label grid
    whose cells are ``cell`` pixels wide. The image is split into quadrants:
    one diagonal pair tiles this motif at its native size, the other tiles a
    2x nearest-upscaled copy, so every native region has an exact larger twin
    elsewhere in the picture. Cells of at least 4 pixels stay resolvable after
    2x downscaling.
    """
    if size % 2:
        raise ValueError("size must be even")
    rng = np.random.default_rng(seed)
    period = cells * cell
    region = size // 2 if region is None else region
    yy, xx = np.indices((size, size)) // region
    images = []
    for _ in range(count):
        palette = rng.uniform(0.05, 0.95, size=(3, 3))
        labels = rng.integers(0, 3, size=(cells, cells)).repeat(cell, 0).repeat(cell, 1)
        tile1 = palette[:, labels]
        tile2 = tile1.repeat(2, axis=1).repeat(2, axis=2)
        layers = []
        for tile, p in ((tile1, period), (tile2, 2 * period)):
            oy, ox = rng.integers(0, p, size=2)
            reps = size // p + 2
            layers.append(np.tile(tile, (1, reps, reps))[:, oy : oy + size, ox : ox + size])
        enlarged = (yy + xx + rng.integers(0, 2)) % 2 == 0
        img = np.where(enlarged[None], layers[1], layers[0])
        # quantize to 8-bit levels like a stored image
        images.append((np.floor(img * 255 + 0.5) / 255).astype(np.float32))
    return images


def load_dataset(source: str, *, count: int = 32, size: int = 64, seed: int = 0) -> list[np.ndarray]:
    """``"synthetic"`` or a directory of PNGs -> list of (3, H, W) float32 images."""
    if source == "synthetic":
        return synthetic_textures(count, size=size, seed=seed)
    paths = list_pngs(source)
    images = [(load_png(p).transpose(2, 0, 1) / 255.0).astype(np.float32) for p in paths]
    if not images:
        raise ValueError(f"no PNG images in {source}")
    return images


def dihedral(x: np.ndarray, k: int) -> np.ndarray:
    """The k-th of the 8 square symmetries on the last two axes: rotate by 90*(k % 4), then flip if k >= 4."""
    out = np.rot90(x, k % 4, axes=(-2, -1))
    if k >= 4:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def dihedral_inverse(x: np.ndarray, k: int) -> np.ndarray:
    if k >= 4:
        x = x[..., ::-1]
    return np.ascontiguousarray(np.rot90(x, -(k % 4), axes=(-2, -1)))


def augment(pair: tuple[np.ndarray, np.ndarray], rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Apply one uniformly drawn dihedral transform to both LR and HR."""
    k = int(rng.integers(0, 8))
    return dihedral(pair[0], k), dihedral(pair[1], k)


def degrade_float(hr: np.ndarray, scale: int) -> np.ndarray:
    """Bicubic LR of a float HR crop, quantized to 8-bit levels."""
    h, w = hr.shape[-2:]
    lr = bicubic_resize(hr, h // scale, w // scale)
    return (np.floor(np.clip(lr, 0, 1) * 255 + 0.5) / 255).astype(np.float32)


def sample_batch(dataset: list[np.ndarray], batch: int, crop: int, scale: int, rng: np.random.Generator,
                 augment_pairs: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Random aligned crops: LR (n, 3, crop/s, crop/s) and HR (n, 3, crop, crop).

    HR crop corners are multiples of ``scale``; the LR crop is the bicubic
    downscale of the HR crop. Images smaller than ``crop`` are skipped.
    """
    if not dataset:
        raise ValueError("empty dataset")
    if crop % scale:
        raise ValueError(f"crop {crop} not divisible by scale {scale}")
    usable = [im for im in dataset if min(im.shape[-2:]) >= crop]
    if len(usable) < len(dataset):
        log.warning("skipping %d images smaller than crop %d", len(dataset) - len(usable), crop)
    if not usable:
        raise ValueError(f"no image is at least {crop}x{crop}")
    lrs, hrs = [], []
    for _ in range(batch):
        img = usable[int(rng.integers(0, len(usable)))]
        h, w = img.shape[-2:]
        y = int(rng.integers(0, (h - crop) // scale + 1)) * scale
        x = int(rng.integers(0, (w - crop) // scale + 1)) * scale
        hr = img[:, y : y + crop, x : x + crop]
        lr = degrade_float(hr, scale)
        if augment_pairs:
            lr, hr = augment((lr, hr), rng)
        lrs.append(lr)
        hrs.append(hr)
    return np.stack(lrs), np.stack(hrs).astype(np.float32)


def save_dataset(images: list[np.ndarray], directory) -> list[Path]:
    """Write float (3, H, W) images as PNGs named 0000.png, 0001.png, ..."""
    from .imageio import quantize, save_png

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, img in enumerate(images):
        p = directory / f"{k:04d}.png"
        save_png(p, quantize(img.transpose(1, 2, 0)))
        paths.append(p)
    return paths
