"""Non-local attention variants on feature maps.

Four variants share one scoring rule, the raw dot product of two embedded
features (no temperature), followed by a softmax over candidates:

* :func:`in_scale_nonlocal` - candidates are the same-resolution features,
  optionally restricted to region-grid cells.
* :func:`naive_cross_scale` - candidates and summarized values both come from
  the bilinearly downscaled map ``Y``.
* :func:`cross_scale_pixel` - candidates from ``Y``, values are the s x s
  full-resolution blocks that each ``Y`` pixel was computed from; output is s
  times larger.
* :func:`cross_scale_patch` - the patch generalization: p x p query and
  candidate patches, sp x sp value patches, overlap-added and normalized by
  per-pixel coverage counts.

:func:`cross_scale_oracle` evaluates the patch variant with explicit loops and
is kept independent of the primitives the fast path uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .params import Conv, init_conv
from .tensor import Tensor


@dataclass(frozen=True)
class AttentionParams:
    theta: Conv
    delta: Conv
    psi: Conv | None = None  # None: identity
    scale: int = 2
    patch: int = 3
    candidate_stride: int = 1
    grid: tuple[int, int] = (1, 1)

    def __post_init__(self):
        if self.scale < 1 or self.patch < 1 or self.candidate_stride < 1:
            raise ValueError("scale, patch and candidate_stride must all be >= 1")
        if self.patch % 2 == 0:
            raise ValueError("patch size must be odd so patches can be centred")
        ce, c = self.theta.weight.shape[:2]
        if self.delta.weight.shape[:2] != (ce, c) or ce > c:
            raise ValueError("theta/delta must map C -> C_e with C_e <= C")

    @property
    def channels(self) -> int:
        return self.theta.weight.shape[1]

    @property
    def embed_channels(self) -> int:
        return self.theta.weight.shape[0]


def init_attention(rng: np.random.Generator, channels: int, embed: int | None = None, *, psi: str = "identity",
                   scale: int = 2, patch: int = 3, candidate_stride: int = 1, grid=(1, 1),
                   embed_gain: float = 1.0, dtype=np.float32) -> AttentionParams:
    """Random embeddings; ``embed_gain`` widens the theta/delta init so scores start away from zero."""
    embed = channels // 2 if embed is None else embed
    if psi not in ("identity", "learned"):
        raise ValueError(f"unknown psi mode {psi!r}")
    theta = init_conv(rng, channels, embed, 1, gain=embed_gain, dtype=dtype)
    # a key bias only shifts each query's scores by a constant, which softmax cancels
    delta = init_conv(rng, channels, embed, 1, bias=False, gain=embed_gain, dtype=dtype)
    psi_conv = init_conv(rng, channels, channels, 1, dtype=dtype) if psi == "learned" else None
    return AttentionParams(theta, delta, psi_conv, scale=scale, patch=patch,
                           candidate_stride=candidate_stride, grid=tuple(grid))


def identity_attention(channels: int, *, scale: int = 2, patch: int = 3, candidate_stride: int = 1,
                       grid=(1, 1), dtype=np.float64) -> AttentionParams:
    """theta = delta = identity, no bias; handy for raw-feature matching."""
    eye = np.eye(channels, dtype=dtype).reshape(channels, channels, 1, 1)
    conv = Conv(Tensor(eye))
    return AttentionParams(conv, conv, None, scale=scale, patch=patch,
                           candidate_stride=candidate_stride, grid=tuple(grid))


def _psi(params: AttentionParams, x: Tensor) -> Tensor:
    return x if params.psi is None else params.psi(x)


def downscaled_size(h: int, w: int, s: int) -> tuple[int, int]:
    hy, wy = h // s, w // s
    if hy < 1 or wy < 1:
        raise ValueError(f"feature map {h}x{w} too small for scale {s}")
    return hy, wy


def _flat(x: Tensor) -> Tensor:
    """(n, c, h, w) -> (n, c, h*w)."""
    n, c, h, w = x.shape
    return ops.reshape(x, (n, c, h * w))


def _attend(query: Tensor, keys: Tensor, values: Tensor):
    """softmax(query^T keys) applied to values.

    query (n, Ce, Lq), keys (n, Ce, Lk), values (n, Lk, D) -> (n, Lq, D) and
    the (n, Lq, Lk) weights.
    """
    scores = ops.matmul(ops.transpose(query, (0, 2, 1)), keys)
    weights = ops.softmax(scores, axis=-1)
    return ops.matmul(weights, values), weights


def _grid_bounds(size: int, parts: int) -> list[int]:
    if parts < 1 or parts > size:
        raise ValueError(f"cannot split {size} pixels into {parts} non-empty grid cells")
    return [size * k // parts for k in range(parts + 1)]


def in_scale_nonlocal(x: Tensor, params: AttentionParams, return_weights: bool = False):
    """Same-scale non-local attention, independently inside each grid cell.

    Cells that do not divide the map evenly get sizes differing by one pixel.
    """
    n, c, h, w = x.shape
    gy, gx = params.grid
    rows, cols = _grid_bounds(h, gy), _grid_bounds(w, gx)
    t, d, v = params.theta(x), params.delta(x), _psi(params, x)
    cv = v.shape[1]
    band, weights = [], []
    for r0, r1 in zip(rows, rows[1:]):
        cells = []
        for c0, c1 in zip(cols, cols[1:]):
            win = (slice(None), slice(None), slice(r0, r1), slice(c0, c1))
            vals = ops.transpose(_flat(v[win]), (0, 2, 1))
            z, wts = _attend(_flat(t[win]), _flat(d[win]), vals)
            cells.append(ops.reshape(ops.transpose(z, (0, 2, 1)), (n, cv, r1 - r0, c1 - c0)))
            weights.append(wts)
        band.append(cells[0] if len(cells) == 1 else ops.concat(cells, axis=3))
    out = band[0] if len(band) == 1 else ops.concat(band, axis=2)
    return (out, weights) if return_weights else out


def naive_cross_scale(x: Tensor, params: AttentionParams, return_weights: bool = False):
    """Match against ``Y = X downscaled by s`` and summarize ``Y`` itself."""
    n, c, h, w = x.shape
    s = params.scale
    hy, wy = downscaled_size(h, w, s)
    y = ops.bilinear_resize(x, hy, wy)
    v = _psi(params, y)
    z, wts = _attend(_flat(params.theta(x)), _flat(params.delta(y)), ops.transpose(_flat(v), (0, 2, 1)))
    out = ops.reshape(ops.transpose(z, (0, 2, 1)), (n, v.shape[1], h, w))
    return (out, wts) if return_weights else out


def cross_scale_pixel(x: Tensor, params: AttentionParams, return_weights: bool = False):
    """Pixel-to-pixel matching against ``Y``; each query pixel receives an s x s block.

    The block summarized for candidate ``Y[g, h]`` is ``X[s*g : s*g+s, s*h : s*h+s]``.
    """
    n, c, h, w = x.shape
    s, cs = params.scale, params.candidate_stride
    hy, wy = downscaled_size(h, w, s)
    y = ops.bilinear_resize(x, hy, wy)
    keys = params.delta(y)[:, :, ::cs, ::cs]
    gh, gw = keys.shape[2:]
    v = _psi(params, x)
    cv = v.shape[1]
    # space-to-depth over the s-aligned part of X, keeping candidate rows/cols only
    blocks = ops.reshape(v[:, :, : s * hy, : s * wy], (n, cv, hy, s, wy, s))
    blocks = ops.transpose(blocks, (0, 2, 4, 1, 3, 5))[:, ::cs, ::cs]
    blocks = ops.reshape(blocks, (n, gh * gw, cv * s * s))
    z, wts = _attend(_flat(params.theta(x)), _flat(keys), blocks)
    z = ops.transpose(ops.reshape(z, (n, h, w, cv, s, s)), (0, 3, 1, 4, 2, 5))
    out = ops.reshape(z, (n, cv, s * h, s * w))
    return (out, wts) if return_weights else out


def _replicate_pad(x: Tensor, pad: int) -> Tensor:
    if pad == 0:
        return x
    h, w = x.shape[-2:]
    x = ops.index_select(x, 2, np.clip(np.arange(-pad, h + pad), 0, h - 1))
    return ops.index_select(x, 3, np.clip(np.arange(-pad, w + pad), 0, w - 1))


def _check_patch(h: int, w: int, params: AttentionParams) -> tuple[int, int]:
    hy, wy = downscaled_size(h, w, params.scale)
    if params.patch > min(hy, wy):
        raise ValueError(f"patch size {params.patch} exceeds downscaled map {hy}x{wy}: no valid candidate")
    return hy, wy


def _candidates(x: Tensor, params: AttentionParams):
    """Key patches from zero-padded delta(Y) and sp x sp value patches from X.

    Value patches come from X padded by edge replication, which keeps the
    summarized evidence of border candidates free of artificial zeros.
    """
    n, c, h, w = x.shape
    s, p, cs = params.scale, params.patch, params.candidate_stride
    r = p // 2
    hy, wy = _check_patch(h, w, params)
    y = ops.bilinear_resize(x, hy, wy)
    keys = ops.extract_patches(params.delta(y), p, stride=cs, pad=r)
    v = _psi(params, x)[:, :, : s * hy, : s * wy]
    values = ops.extract_patches(_replicate_pad(v, s * r), s * p, stride=s * cs)
    grid = (ops.patch_grid_size(hy, p, cs, r), ops.patch_grid_size(wy, p, cs, r))
    return keys, values, grid


def cross_scale_patch(x: Tensor, params: AttentionParams, return_weights: bool = False):
    """Patch-based cross-scale attention, output (n, C, s*h, s*w).

    Correlation runs as a convolution of theta(X) with candidate patches as
    filters; aggregation as a transposed convolution of the softmax maps with
    value patches as filters, divided by the coverage counts.
    """
    n, c, h, w = x.shape
    s, p = params.scale, params.patch
    r = p // 2
    keys, values, _ = _candidates(x, params)
    tx = params.theta(x)
    ce = tx.shape[1]
    L = keys.shape[2]
    cv = values.shape[1] // (s * p) ** 2
    counts = coverage_counts(h, w, s, p).astype(x.dtype)
    outs, weights = [], []
    for b in range(n):
        filt = ops.reshape(ops.transpose(keys[b], (1, 0)), (L, ce, p, p))
        scores = ops.conv2d(tx[b : b + 1], filt, pad=r)
        wts = ops.softmax(scores, axis=1)
        vfilt = ops.reshape(ops.transpose(values[b], (1, 0)), (L, cv, s * p, s * p))
        outs.append(ops.conv_transpose2d(wts, vfilt, stride=s, pad=s * r))
        weights.append(wts)
    z = outs[0] if n == 1 else ops.concat(outs, axis=0)
    out = ops.div(z, counts)
    return (out, weights) if return_weights else out


def _unit_patches(L: int, k: int, dtype) -> Tensor:
    return Tensor(np.ones((1, k * k, L), dtype=dtype))


def coverage_counts(h: int, w: int, s: int, p: int) -> np.ndarray:
    """How many sp x sp output patches cover each pixel, shaped (1, 1, s*h, s*w)."""
    r = p // 2
    _, counts = ops.fold_patches(_unit_patches(h * w, s * p, np.float64), s * h, s * w, s * p, s, s * r)
    return counts.data


def correlation_map(x: Tensor, params: AttentionParams, query: tuple[int, int], batch: int = 0) -> Tensor:
    """Softmax weights of every candidate for one query, laid out on the candidate grid of ``Y``."""
    n, c, h, w = x.shape
    i, j = query
    if not (0 <= i < h and 0 <= j < w) or not (0 <= batch < n):
        raise IndexError(f"query {query} outside {h}x{w} map")
    p, r = params.patch, params.patch // 2
    keys, _, grid = _candidates(x, params)
    tx = params.theta(x)
    q = ops.extract_patches(ops.pad(tx, r)[batch : batch + 1, :, i : i + p, j : j + p], p)
    scores = ops.matmul(ops.transpose(q, (0, 2, 1)), keys[batch : batch + 1])
    wts = ops.softmax(scores, axis=-1)
    return ops.reshape(wts, (1, 1) + grid)


# ------------------------------------------------------------------- oracles

def _np_bilinear(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    n, c, h, w = x.shape
    out = np.zeros((n, c, out_h, out_w))
    for i in range(out_h):
        sy = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1)
        y0 = int(np.floor(sy))
        y1, fy = min(y0 + 1, h - 1), sy - y0
        for j in range(out_w):
            sx = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1)
            x0 = int(np.floor(sx))
            x1, fx = min(x0 + 1, w - 1), sx - x0
            out[:, :, i, j] = ((1 - fy) * (1 - fx) * x[:, :, y0, x0] + (1 - fy) * fx * x[:, :, y0, x1]
                               + fy * (1 - fx) * x[:, :, y1, x0] + fy * fx * x[:, :, y1, x1])
    return out


def _np_pointwise(conv: Conv | None, x: np.ndarray) -> np.ndarray:
    if conv is None:
        return x
    wt = conv.weight.data[:, :, 0, 0].astype(np.float64)
    out = np.einsum("oc,nchw->nohw", wt, x)
    if conv.bias is not None:
        out = out + conv.bias.data.astype(np.float64)[None, :, None, None]
    return out


def cross_scale_oracle(x, params: AttentionParams, candidate_order=None) -> np.ndarray:
    """Literal-loop evaluation of patch-based cross-scale attention (float64).

    For every query pixel (i, j) and candidate (g, h) of Y the score is the sum
    over the p x p neighbourhoods of theta(X)[i+a, j+b] . delta(Y)[g+a, h+b]
    (zero outside). The softmax-weighted sp x sp blocks of X (edge-replicated
    outside) are accumulated at output rows s*(i-r)... and divided by the
    number of contributions each output pixel received. ``candidate_order``
    permutes the enumeration of candidates.
    """
    xd = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    n, c, h, w = xd.shape
    s, p, cs = params.scale, params.patch, params.candidate_stride
    r = p // 2
    hy, wy = _check_patch(h, w, params)
    y = _np_bilinear(xd, hy, wy)
    tx = _np_pointwise(params.theta, xd)
    dy = _np_pointwise(params.delta, y)
    v = _np_pointwise(params.psi, xd)
    cv = v.shape[1]

    cands = [(g, k) for g in range(0, hy, cs) for k in range(0, wy, cs)]
    if candidate_order is not None:
        cands = [cands[m] for m in candidate_order]

    def tget(arr, b, i, j, hh, ww):
        if 0 <= i < hh and 0 <= j < ww:
            return arr[b, :, i, j]
        return np.zeros(arr.shape[1])

    # sp x sp value block of every candidate, edge-replicated outside X
    blocks = np.zeros((n, len(cands), cv, s * p, s * p))
    for b in range(n):
        for m, (g, k) in enumerate(cands):
            for a in range(s * p):
                for bb in range(s * p):
                    sy = min(max(s * (g - r) + a, 0), s * hy - 1)
                    sx = min(max(s * (k - r) + bb, 0), s * wy - 1)
                    blocks[b, m, :, a, bb] = v[b, :, sy, sx]

    out = np.zeros((n, cv, s * h, s * w))
    cnt = np.zeros((s * h, s * w))
    for b in range(n):
        for i in range(h):
            for j in range(w):
                scores = []
                for g, k in cands:
                    acc = 0.0
                    for a in range(-r, r + 1):
                        for bb in range(-r, r + 1):
                            acc += float(np.dot(tget(tx, b, i + a, j + bb, h, w), tget(dy, b, g + a, k + bb, hy, wy)))
                    scores.append(acc)
                scores = np.array(scores)
                wts = np.exp(scores - scores.max())
                wts /= wts.sum()
                block = np.zeros((cv, s * p, s * p))
                for m, wt in enumerate(wts):
                    block += wt * blocks[b, m]
                for a in range(s * p):
                    for bb in range(s * p):
                        oy, ox = s * (i - r) + a, s * (j - r) + bb
                        if 0 <= oy < s * h and 0 <= ox < s * w:
                            out[b, :, oy, ox] += block[:, a, bb]
                            if b == 0:
                                cnt[oy, ox] += 1
    return out / cnt
