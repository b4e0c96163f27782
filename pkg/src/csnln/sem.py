"""Self-Exemplars Mining cell: Local / in-scale / cross-scale branches and
mutual-projected fusion.

Fusion, for branch features ``F_L`` (LR) and ``F_I``, ``F_C`` (HR)::

    F_IC = act(fuse(F_I - F_C)) + F_I
    H    = act(up_proj(F_L - down_proj(F_IC))) + F_IC

When a branch is disabled its parameters are absent and the wiring falls back:
no IS-NL gives ``F_IC = F_C``, no CS-NL gives ``F_IC = F_I``, no Local skips
the back-projection so ``H = F_IC``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .attention import AttentionParams, cross_scale_patch, in_scale_nonlocal, init_attention
from .params import Conv, activation, init_conv, init_slope
from .tensor import Tensor

BRANCHES = ("local", "isnl", "csnl")

# (kernel, pad) of the stride-s projections; chosen so sizes map exactly h <-> s*h
_PROJECTION = {2: (6, 2), 3: (9, 3), 4: (8, 2)}

# attention embedding init gain: with plain fan-in init the dot-product scores
# start near zero, every softmax is uniform and theta/delta get almost no gradient
EMBED_GAIN = 8.0


def projection_geometry(scale: int) -> tuple[int, int]:
    if scale < 2:
        raise ValueError("scale must be >= 2")
    return _PROJECTION.get(scale, (scale + 4, 2))


@dataclass(frozen=True)
class SemParams:
    scale: int
    local: bool = True
    isnl: AttentionParams | None = None
    isnl_upscale: Conv | None = None
    csnl: AttentionParams | None = None
    fuse: Conv | None = None
    fuse_act: Tensor | None = None
    down_proj: Conv | None = None
    up_proj: Conv | None = None
    up_act: Tensor | None = None

    def __post_init__(self):
        if self.isnl is None and self.csnl is None:
            raise ValueError("SEM needs at least one of the isnl/csnl branches to reach HR resolution")


def init_sem(rng: np.random.Generator, channels: int, embed: int, scale: int, *, patch: int = 3,
             candidate_stride: int = 1, grid=(2, 2), branches=BRANCHES, prelu: bool = True,
             dtype=np.float32) -> SemParams:
    unknown = set(branches) - set(BRANCHES)
    if unknown:
        raise ValueError(f"unknown branches {sorted(unknown)}")
    k, pad = projection_geometry(scale)
    slope = (lambda: init_slope(channels, dtype)) if prelu else (lambda: None)
    isnl = csnl = up = fuse = fuse_act = down = up_proj = up_act = None
    if "isnl" in branches:
        isnl = init_attention(rng, channels, embed, psi="learned", scale=scale, patch=1, grid=grid,
                              embed_gain=EMBED_GAIN, dtype=dtype)
        up = init_conv(rng, channels, channels, k, stride=scale, pad=pad, transposed=True, dtype=dtype)
    if "csnl" in branches:
        csnl = init_attention(rng, channels, embed, psi="identity", scale=scale, patch=patch,
                              candidate_stride=candidate_stride, embed_gain=EMBED_GAIN, dtype=dtype)
    if isnl is not None and csnl is not None:
        fuse = init_conv(rng, channels, channels, 3, dtype=dtype)
        fuse_act = slope()
    if "local" in branches:
        down = init_conv(rng, channels, channels, k, stride=scale, pad=pad, dtype=dtype)
        up_proj = init_conv(rng, channels, channels, k, stride=scale, pad=pad, transposed=True, dtype=dtype)
        up_act = slope()
    return SemParams(scale, "local" in branches, isnl, up, csnl, fuse, fuse_act, down, up_proj, up_act)


def branch_local(L: Tensor) -> Tensor:
    return L


def branch_isnl(L: Tensor, params: SemParams) -> Tensor:
    return params.isnl_upscale(in_scale_nonlocal(L, params.isnl))


def branch_csnl(L: Tensor, params: SemParams) -> Tensor:
    return cross_scale_patch(L, params.csnl)


def mutual_project(F_I: Tensor, F_C: Tensor, fuse: Conv, slope: Tensor | None = None) -> Tensor:
    if F_I.shape != F_C.shape:
        raise ValueError(f"mutual_project: F_I {F_I.shape} and F_C {F_C.shape} differ")
    return ops.add(activation(fuse(ops.sub(F_I, F_C)), slope), F_I)


def back_project(F_L: Tensor, F_IC: Tensor, down_proj: Conv, up_proj: Conv, slope: Tensor | None = None) -> Tensor:
    down = down_proj(F_IC)
    if down.shape != F_L.shape:
        raise ValueError(f"back_project: downsampled {down.shape} does not match local features {F_L.shape}")
    e = ops.sub(F_L, down)
    return ops.add(activation(up_proj(e), slope), F_IC)


def sem_forward(L: Tensor, params: SemParams) -> Tensor:
    """Fused HR feature ``H`` of shape (n, C, s*h, s*w)."""
    F_I = branch_isnl(L, params) if params.isnl is not None else None
    F_C = branch_csnl(L, params) if params.csnl is not None else None
    if F_I is not None and F_C is not None:
        F_IC = mutual_project(F_I, F_C, params.fuse, params.fuse_act)
    else:
        F_IC = F_I if F_I is not None else F_C
    if not params.local:
        return F_IC
    return back_project(branch_local(L), F_IC, params.down_proj, params.up_proj, params.up_act)
