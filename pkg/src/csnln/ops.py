"""Differentiable primitive operations on :class:`~csnln.tensor.Tensor`.

Every op computes its forward value with numpy and, when recording, a
vector-Jacobian closure. Padding is zero padding unless stated otherwise.
Reductions over kernel offsets run in a fixed row-major order so results are
bit-reproducible.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor, make_result

__all__ = [
    "add", "sub", "mul", "div", "sum", "mean", "abs", "matmul", "reshape",
    "transpose", "getitem", "concat", "pad", "index_select", "relu", "prelu",
    "softmax", "conv2d", "conv_transpose2d", "bilinear_resize",
    "extract_patches", "fold_patches", "l1_loss", "patch_grid_size",
]


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _shape(x) -> tuple[int, ...]:
    return np.shape(_data(x))


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    sa, sb = _shape(a), _shape(b)
    return make_result(_data(a) + _data(b), (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    sa, sb = _shape(a), _shape(b)
    return make_result(_data(a) - _data(b), (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    da, db = _data(a), _data(b)
    return make_result(da * db, (a, b),
                       lambda g: (_unbroadcast(g * db, da.shape), _unbroadcast(g * da, np.shape(db))))


def div(a, b) -> Tensor:
    da, db = _data(a), _data(b)
    out = da / db
    return make_result(out, (a, b),
                       lambda g: (_unbroadcast(g / db, np.shape(da)),
                                  _unbroadcast(-g * out / db, np.shape(db))))


def abs(x: Tensor) -> Tensor:
    d = x.data
    return make_result(np.abs(d), (x,), lambda g: (g * np.sign(d),))


def sum(x: Tensor) -> Tensor:
    shape = x.shape
    return make_result(np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                       lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return make_result(np.asarray(x.data.mean(), dtype=x.dtype), (x,),
                       lambda g: (np.full(shape, g / n, dtype=g.dtype),))


def relu(x: Tensor) -> Tensor:
    mask = x.data >= 0
    return make_result(np.where(mask, x.data, 0).astype(x.dtype), (x,),
                       lambda g: (np.where(mask, g, 0).astype(g.dtype),))


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """``x`` if ``x >= 0`` else ``slope * x``, with one slope per channel (axis 1)."""
    if slope.ndim != 1 or slope.shape[0] != x.shape[1]:
        raise ValueError(f"prelu slope shape {slope.shape} does not match {x.shape[1]} channels")
    a = slope.data.reshape((1, -1) + (1,) * (x.ndim - 2))
    neg = x.data < 0
    out = np.where(neg, a * x.data, x.data)

    def vjp(g):
        gx = np.where(neg, a * g, g)
        red = (0,) + tuple(range(2, x.ndim))
        ga = np.where(neg, g * x.data, 0).sum(axis=red)
        return gx, ga.astype(slope.dtype)

    return make_result(out, (x, slope), vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (x,), vjp)


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error over all elements."""
    if _shape(pred) != _shape(target):
        raise ValueError(f"l1_loss shape mismatch: {_shape(pred)} vs {_shape(target)}")
    return mean(abs(sub(pred, target)))


# ------------------------------------------------------------------ structure

def matmul(a, b) -> Tensor:
    da, db = _data(a), _data(b)

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(db, -1, -2), np.shape(da))
        gb = _unbroadcast(np.swapaxes(da, -1, -2) @ g, np.shape(db))
        return ga, gb

    return make_result(da @ db, (a, b), vjp)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)
    return make_result(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                       lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def getitem(x: Tensor, idx) -> Tensor:
    """Basic (slice/int) indexing."""
    shape, dtype = x.shape, x.dtype

    def vjp(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[idx] = g
        return (out,)

    return make_result(np.ascontiguousarray(x.data[idx]), (x,), vjp)


def concat(inputs: Sequence[Tensor], axis: int = 1) -> Tensor:
    inputs = list(inputs)
    if not inputs:
        raise ValueError("concat of empty list")
    ref = inputs[0].shape
    ax = axis % len(ref)
    for t in inputs[1:]:
        if len(t.shape) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ValueError(f"concat shape mismatch: {t.shape} vs {ref} on axis {axis}")
    sizes = [t.shape[ax] for t in inputs]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(np.ascontiguousarray(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax))
                     for i in range(len(inputs)))

    return make_result(np.concatenate([t.data for t in inputs], axis=ax), tuple(inputs), vjp)


def pad(x: Tensor, pad_h: int, pad_w: int | None = None) -> Tensor:
    """Zero-pad the last two axes symmetrically."""
    pad_w = pad_h if pad_w is None else pad_w
    widths = [(0, 0)] * (x.ndim - 2) + [(pad_h, pad_h), (pad_w, pad_w)]
    h, w = x.shape[-2:]
    return make_result(np.pad(x.data, widths), (x,),
                       lambda g: (np.ascontiguousarray(g[..., pad_h:pad_h + h, pad_w:pad_w + w]),))


def index_select(x: Tensor, axis: int, index: np.ndarray) -> Tensor:
    """Gather ``index`` along ``axis``; repeated indices accumulate gradients."""
    index = np.asarray(index, dtype=np.intp)
    shape = x.shape
    ax = axis % x.ndim

    def vjp(g):
        out = np.zeros(shape, dtype=g.dtype)
        moved = np.moveaxis(out, ax, 0)
        np.add.at(moved, index, np.moveaxis(g, ax, 0))
        return (out,)

    return make_result(np.take(x.data, index, axis=ax), (x,), vjp)


# ------------------------------------------------------------ patch machinery

def patch_grid_size(size: int, k: int, stride: int, pad: int) -> int:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n = (size + 2 * pad - k) // stride + 1
    if size + 2 * pad < k or n < 1:
        raise ValueError(f"kernel {k} larger than padded size {size + 2 * pad}")
    return n


def _unfold(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """Padded (n, c, H, W) -> columns laid out (c, kh, kw, n, oh, ow)."""
    n, c = xp.shape[:2]
    xt = xp.transpose(1, 0, 2, 3)
    out = np.empty((c, kh, kw, n, oh, ow), dtype=xp.dtype)
    for a in range(kh):
        for b in range(kw):
            out[:, a, b] = xt[:, :, a : a + stride * (oh - 1) + 1 : stride, b : b + stride * (ow - 1) + 1 : stride]
    return out


def _fold(cols: np.ndarray, hp: int, wp: int, stride: int) -> np.ndarray:
    """Overlap-add (c, kh, kw, n, oh, ow) columns onto a (c, n, hp, wp) canvas."""
    c, kh, kw, n, oh, ow = cols.shape
    out = np.zeros((c, n, hp, wp), dtype=cols.dtype)
    for a in range(kh):
        for b in range(kw):
            out[:, :, a : a + stride * (oh - 1) + 1 : stride, b : b + stride * (ow - 1) + 1 : stride] += cols[:, a, b]
    return out


def _pad2(x: np.ndarray, pad: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x


def _crop_nchw(canvas: np.ndarray, pad: int, h: int, w: int) -> np.ndarray:
    """(c, n, hp, wp) canvas -> cropped (n, c, h, w) contiguous array."""
    return np.ascontiguousarray(canvas[:, :, pad : pad + h, pad : pad + w].transpose(1, 0, 2, 3))


def extract_patches(x: Tensor, p: int, stride: int = 1, pad: int = 0) -> Tensor:
    """Sliding p x p patches as columns: (n, c*p*p, L).

    Rows are ordered channel-major then patch row then patch column; columns
    follow row-major patch positions.
    """
    if p < 1:
        raise ValueError("patch size must be >= 1")
    n, c, h, w = x.shape
    oh = patch_grid_size(h, p, stride, pad)
    ow = patch_grid_size(w, p, stride, pad)
    cols = _unfold(_pad2(x.data, pad), p, p, stride, oh, ow)
    out = np.ascontiguousarray(cols.transpose(3, 0, 1, 2, 4, 5)).reshape(n, c * p * p, oh * ow)

    def vjp(g):
        gc = np.ascontiguousarray(g.reshape(n, c, p, p, oh, ow).transpose(1, 2, 3, 0, 4, 5))
        return (_crop_nchw(_fold(gc, h + 2 * pad, w + 2 * pad, stride), pad, h, w),)

    return make_result(out, (x,), vjp)


def fold_patches(patches: Tensor, out_h: int, out_w: int, p: int, stride: int = 1, pad: int = 0):
    """Overlap-add columns back onto an image; adjoint of :func:`extract_patches`.

    Returns ``(image, counts)`` where ``counts`` (shape (1, 1, out_h, out_w),
    no gradient) is the number of patches covering each pixel.
    """
    n, cpp, L = patches.shape
    oh = patch_grid_size(out_h, p, stride, pad)
    ow = patch_grid_size(out_w, p, stride, pad)
    if L != oh * ow or cpp % (p * p):
        raise ValueError(f"{L} patches inconsistent with a {oh}x{ow} grid for output {out_h}x{out_w}")
    c = cpp // (p * p)
    cols = np.ascontiguousarray(patches.data.reshape(n, c, p, p, oh, ow).transpose(1, 2, 3, 0, 4, 5))
    img = _crop_nchw(_fold(cols, out_h + 2 * pad, out_w + 2 * pad, stride), pad, out_h, out_w)

    ones = np.ones((1, p, p, 1, oh, ow), dtype=patches.dtype)
    counts = _crop_nchw(_fold(ones, out_h + 2 * pad, out_w + 2 * pad, stride), pad, out_h, out_w)

    def vjp(g):
        gc = _unfold(_pad2(g, pad), p, p, stride, oh, ow)
        return (np.ascontiguousarray(gc.transpose(3, 0, 1, 2, 4, 5)).reshape(n, cpp, L),)

    return make_result(img, (patches,), vjp), Tensor(counts)


# --------------------------------------------------------------- convolutions

def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation, weight (out_c, in_c, kh, kw), zero padding."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    oc, ic, kh, kw = weight.shape
    if ic != c:
        raise ValueError(f"conv2d: weight expects {ic} input channels, input has {c}")
    if stride < 1:
        raise ValueError("conv2d: stride must be >= 1")
    if bias is not None and bias.shape != (oc,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({oc},)")
    oh = patch_grid_size(h, kh, stride, pad)
    ow = patch_grid_size(w, kw, stride, pad)
    cols = _unfold(_pad2(x.data, pad), kh, kw, stride, oh, ow).reshape(c * kh * kw, n * oh * ow)
    wmat = weight.data.reshape(oc, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(oc, n, oh, ow).transpose(1, 0, 2, 3))

    def vjp(g):
        gt = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(oc, n * oh * ow)
        gx = gw = gb = None
        if x.requires_grad:
            gc = (wmat.T @ gt).reshape(c, kh, kw, n, oh, ow)
            gx = _crop_nchw(_fold(gc, h + 2 * pad, w + 2 * pad, stride), pad, h, w)
        if weight.requires_grad:
            gw = (gt @ cols.T).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = gt.sum(axis=1)
        return gx, gw, gb

    return make_result(out, (x, weight, bias), vjp)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d`; weight (in_c, out_c, kh, kw).

    Output size per axis is ``(size - 1) * stride - 2 * pad + k``.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv_transpose2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    ic, oc, kh, kw = weight.shape
    if ic != c:
        raise ValueError(f"conv_transpose2d: weight expects {ic} input channels, input has {c}")
    if stride < 1:
        raise ValueError("conv_transpose2d: stride must be >= 1")
    if bias is not None and bias.shape != (oc,):
        raise ValueError(f"conv_transpose2d: bias shape {bias.shape} != ({oc},)")
    out_h = (h - 1) * stride - 2 * pad + kh
    out_w = (w - 1) * stride - 2 * pad + kw
    if out_h < 1 or out_w < 1:
        raise ValueError("conv_transpose2d: empty output")
    xt = np.ascontiguousarray(x.data.transpose(1, 0, 2, 3)).reshape(c, n * h * w)
    wmat = weight.data.reshape(ic, -1)
    cols = (wmat.T @ xt).reshape(oc, kh, kw, n, h, w)
    out = _crop_nchw(_fold(cols, out_h + 2 * pad, out_w + 2 * pad, stride), pad, out_h, out_w)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1)

    def vjp(g):
        gc = _unfold(_pad2(g, pad), kh, kw, stride, h, w).reshape(oc * kh * kw, n * h * w)
        gx = gw = gb = None
        if x.requires_grad:
            gx = np.ascontiguousarray((wmat @ gc).reshape(c, n, h, w).transpose(1, 0, 2, 3))
        if weight.requires_grad:
            gw = (xt @ gc.T).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return make_result(out, (x, weight, bias), vjp)


# ------------------------------------------------------------------ resampling

def linear_resize_matrix(in_size: int, out_size: int, dtype=np.float64) -> np.ndarray:
    """(out_size, in_size) bilinear weights, half-pixel centers, edge clamp."""
    src = (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0, in_size - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = src - lo
    m = np.zeros((out_size, in_size), dtype=np.float64)
    rows = np.arange(out_size)
    np.add.at(m, (rows, lo), 1 - frac)
    np.add.at(m, (rows, hi), frac)
    return m.astype(dtype)


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if out_h < 1 or out_w < 1:
        raise ValueError("bilinear_resize: output size must be >= 1")
    h, w = x.shape[-2:]
    ry = linear_resize_matrix(h, out_h, x.dtype)
    rx = linear_resize_matrix(w, out_w, x.dtype)
    out = ry @ x.data @ rx.T
    return make_result(out, (x,), lambda g: (ry.T @ g @ rx,))
