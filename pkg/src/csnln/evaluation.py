"""Benchmark-style evaluation: bicubic LR generation, Y-channel PSNR/SSIM per
image, and a plain-text table with a bicubic-upscaling baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .imageio import bicubic_resize, degrade, image_to_tensor, list_pngs, load_png, mod_crop, rgb_to_y, tensor_to_image
from .metrics import psnr, ssim
from .network import CsnlnParams, forward


@dataclass
class EvalRow:
    name: str
    psnr: float
    ssim: float
    bicubic_psnr: float
    bicubic_ssim: float


def model_upscaler(params: CsnlnParams) -> Callable[[np.ndarray], np.ndarray]:
    """uint8 (h, w, 3) LR -> uint8 (s*h, s*w, 3) SR with the given weights."""
    def run(lr: np.ndarray) -> np.ndarray:
        return tensor_to_image(forward(image_to_tensor(lr), params))
    return run


def evaluate(images: Sequence[tuple[str, np.ndarray]], scale: int, upscale: Callable[[np.ndarray], np.ndarray],
             border_crop: int | None = None) -> list[EvalRow]:
    """Score ``upscale`` on (name, uint8 HR) pairs; border crop defaults to ``scale``.

    Each HR image is cropped to a multiple of ``scale``, bicubic-downscaled,
    super-resolved and compared on the Y channel.
    """
    border = scale if border_crop is None else border_crop
    rows = []
    for name, hr in images:
        hr = mod_crop(hr, scale)
        lr = degrade(hr, scale)
        sr = upscale(lr)
        if sr.shape != hr.shape:
            raise ValueError(f"{name}: upscaler returned {sr.shape}, expected {hr.shape}")
        base = bicubic_resize(lr, hr.shape[0], hr.shape[1])
        y_hr, y_sr, y_bic = rgb_to_y(hr), rgb_to_y(sr), rgb_to_y(base)
        rows.append(EvalRow(name,
                            psnr(y_sr, y_hr, border_crop=border), ssim(y_sr, y_hr, border_crop=border),
                            psnr(y_bic, y_hr, border_crop=border), ssim(y_bic, y_hr, border_crop=border)))
    return rows


def load_hr_dir(directory) -> list[tuple[str, np.ndarray]]:
    paths = list_pngs(directory)
    if not paths:
        raise ValueError(f"no PNG images in {directory}")
    return [(Path(p).name, load_png(p)) for p in paths]


def mean_row(rows: Sequence[EvalRow]) -> EvalRow:
    def avg(key):
        return float(np.mean([getattr(r, key) for r in rows]))
    return EvalRow("mean", avg("psnr"), avg("ssim"), avg("bicubic_psnr"), avg("bicubic_ssim"))


def format_table(rows: Sequence[EvalRow]) -> str:
    """Fixed-width table, one line per image plus a mean line."""
    def num(v, digits):
        return "inf" if math.isinf(v) else f"{v:.{digits}f}"

    width = max([len("image"), 4] + [len(r.name) for r in rows])
    header = f"{'image':<{width}}  {'psnr':>8}  {'ssim':>6}  {'bic_psnr':>8}  {'bic_ssim':>8}"
    lines = [header]
    for r in list(rows) + [mean_row(rows)]:
        lines.append(f"{r.name:<{width}}  {num(r.psnr, 2):>8}  {num(r.ssim, 4):>6}  "
                     f"{num(r.bicubic_psnr, 2):>8}  {num(r.bicubic_ssim, 4):>8}")
    return "\n".join(lines)
