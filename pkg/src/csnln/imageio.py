"""PNG I/O, luminance conversion and bicubic resampling.

Images on disk are 8-bit RGB, held in memory as ``(H, W, 3)`` uint8 arrays.
Network tensors are ``(n, 3, h, w)`` reals in ``[0, 1]``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from . import ops
from .tensor import Tensor

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class UnsupportedImageError(ValueError):
    pass


def _png_bit_depth(path: Path) -> int:
    with open(path, "rb") as fh:
        head = fh.read(33)
    if len(head) < 33 or head[:8] != PNG_SIGNATURE or head[12:16] != b"IHDR":
        raise UnsupportedImageError(f"{path}: not a PNG file")
    return head[24]


def load_png(path) -> np.ndarray:
    """Read an 8-bit PNG as (H, W, 3) uint8; grayscale is promoted, alpha dropped."""
    path = Path(path)
    depth = _png_bit_depth(path)
    if depth != 8:
        raise UnsupportedImageError(f"{path}: {depth}-bit PNG is not supported (8-bit only)")
    try:
        with Image.open(path) as im:
            im.load()
            rgb = im.convert("RGB")
    except (OSError, SyntaxError) as exc:
        raise UnsupportedImageError(f"{path}: malformed PNG ({exc})") from exc
    return np.asarray(rgb, dtype=np.uint8).copy()


def save_png(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"save_png expects (H, W, 3) uint8, got {image.shape} {image.dtype}")
    Image.fromarray(image, mode="RGB").save(Path(path), format="PNG")


def quantize(x) -> np.ndarray:
    """Clamp [0, 1] reals, scale to [0, 255] and round half away from zero."""
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(x + 0.5).astype(np.uint8)


def image_to_tensor(image: np.ndarray, dtype=np.float32) -> Tensor:
    """(H, W, 3) uint8 -> (1, 3, H, W) tensor with values/255."""
    return Tensor((np.asarray(image, dtype=np.float64).transpose(2, 0, 1)[None] / 255.0).astype(dtype))


def tensor_to_image(t) -> np.ndarray:
    """(1, 3, H, W) values in [0, 1] -> (H, W, 3) uint8."""
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise ValueError("tensor_to_image converts one image at a time")
        arr = arr[0]
    return quantize(arr.transpose(1, 2, 0))


def rgb_to_y(rgb, channel_axis: int = -1) -> np.ndarray:
    """ITU-R BT.601 studio-swing luma from RGB in [0, 255]: ``16 + (65.481 R + 128.553 G + 24.966 B) / 255``."""
    rgb = np.moveaxis(np.asarray(rgb, dtype=np.float64), channel_axis, -1)
    if rgb.shape[-1] != 3:
        raise ValueError("rgb_to_y expects 3 channels")
    return 16.0 + (65.481 * rgb[..., 0] + 128.553 * rgb[..., 1] + 24.966 * rgb[..., 2]) / 255.0


def cubic_kernel(x, a: float = -0.5) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def cubic_resize_matrix(in_size: int, out_size: int) -> np.ndarray:
    """(out_size, in_size) cubic weights, half-pixel centers, edge clamp.

    Downscaling widens the kernel by the inverse scale (antialiasing); rows are
    normalized so constants are reproduced exactly.
    """
    scale = out_size / in_size
    kscale = min(scale, 1.0)
    support = 2.0 / kscale
    m = np.zeros((out_size, in_size))
    for i in range(out_size):
        center = (i + 0.5) / scale - 0.5
        taps = np.arange(int(np.floor(center - support)), int(np.ceil(center + support)) + 1)
        wts = cubic_kernel((center - taps) * kscale)
        wts = wts / wts.sum()
        np.add.at(m[i], np.clip(taps, 0, in_size - 1), wts)
    return m


def bicubic_resize(x, out_h: int, out_w: int):
    """Bicubic resize of the last two axes (or of an (H, W, 3) uint8 image).

    A :class:`Tensor` input returns a Tensor (differentiable), a uint8 image
    returns a rounded uint8 image, any other array returns float64.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("bicubic_resize: output size must be >= 1")
    if isinstance(x, Tensor):
        h, w = x.shape[-2:]
        ry = cubic_resize_matrix(h, out_h).astype(x.dtype)
        rx = cubic_resize_matrix(w, out_w).astype(x.dtype)
        return ops.matmul(ops.matmul(ry, x), rx.T)
    arr = np.asarray(x)
    if arr.dtype == np.uint8:
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError("uint8 images must be (H, W, 3)")
        chw = arr.astype(np.float64).transpose(2, 0, 1) / 255.0
        return quantize(bicubic_resize(chw, out_h, out_w).transpose(1, 2, 0))
    h, w = arr.shape[-2:]
    return cubic_resize_matrix(h, out_h) @ arr.astype(np.float64) @ cubic_resize_matrix(w, out_w).T


def degrade(hr: np.ndarray, scale: int) -> np.ndarray:
    """LR image by bicubic downscaling of an (H, W, 3) uint8 HR image.

    HR sides must be divisible by ``scale`` (see :func:`mod_crop`).
    """
    h, w = hr.shape[:2]
    if h % scale or w % scale:
        raise ValueError(f"HR size {h}x{w} not divisible by scale {scale}")
    return bicubic_resize(hr, h // scale, w // scale)


def mod_crop(image: np.ndarray, scale: int) -> np.ndarray:
    h, w = image.shape[:2]
    return image[: h - h % scale, : w - w % scale]


def list_pngs(directory) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".png")

