"""Verification suites: finite-difference gradient checks of every
differentiable op and of the toy network, and fast-path vs loop-oracle
agreement for cross-scale attention.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import ops
from .attention import (AttentionParams, cross_scale_oracle, cross_scale_patch, cross_scale_pixel,
                        in_scale_nonlocal, init_attention, naive_cross_scale)
from .network import TOY, forward, init_csnln, l1_loss
from .params import cast_tensors, named_tensors, replace_tensors
from .sem import init_sem, sem_forward
from .tensor import Tensor, finite_diff_check, make_result

GRAD_TOL = 1e-4
ORACLE_TOL_32 = 1e-5
ORACLE_TOL_64 = 1e-9
# deep compositions have gradients down to 1e-7 (roundoff-limited at small steps)
# and bias shifts move hundreds of pre-activations past kinks 1e-6 away (large
# steps straddle them), so a ladder of steps is tried per coordinate
DEEP_EPS = (1e-7, 1e-6, 1e-5, 1e-4)
BREAK_ENV = "CSNLN_GRADCHECK_BREAK"


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance


def _weighted_sum(out: Tensor, seed: int) -> Tensor:
    """sum(out * R) with fixed random R, so every output entry matters."""
    r = np.random.default_rng(seed).standard_normal(out.shape)
    return ops.sum(ops.mul(out, r))


def _broken(fn: Callable[..., Tensor]) -> Callable[..., Tensor]:
    # forward scaled by 1.01 while the recorded VJP claims identity
    def wrapped(*args, **kwargs):
        out = fn(*args, **kwargs)
        return make_result(out.data * 1.01, (out,), lambda g: (g,))
    return wrapped


def _params_fn(tree, build: Callable):
    """Turn a parameter tree into (leaves, f(x, *leaves)) for finite_diff_check."""
    names = [n for n, _ in named_tensors(tree)]
    leaves = [t for _, t in named_tensors(tree)]

    def f(x, *vals):
        return build(x, replace_tensors(tree, dict(zip(names, vals))))

    return leaves, f


def gradcheck_cases(seed: int = 0) -> dict[str, Callable[[], float]]:
    """Name -> thunk returning the max relative error of that check (float64)."""
    rng = np.random.default_rng(seed)

    def rand(*shape):
        return Tensor(rng.standard_normal(shape))

    def away_from_zero(*shape):
        v = rng.uniform(0.2, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
        return Tensor(v)

    def check(fn, *args, **kw):
        return finite_diff_check(lambda *a: _weighted_sum(fn(*a), seed), list(args), **kw)

    def attn(**kw):
        return init_attention(np.random.default_rng(seed), 4, 2, dtype=np.float64, **kw)

    def attention_case(variant, params: AttentionParams, shape):
        x = rand(*shape)
        leaves, f = _params_fn(params, lambda xx, p: variant(xx, p))
        return lambda: finite_diff_check(lambda xx, *v: _weighted_sum(f(xx, *v), seed), [x] + leaves, eps=DEEP_EPS)

    cases: dict[str, Callable[[], float]] = {
        "add": lambda: check(ops.add, rand(2, 3), rand(1, 3)),
        "sub": lambda: check(ops.sub, rand(2, 3), rand(2, 1)),
        "mul": lambda: check(ops.mul, rand(2, 3), rand(2, 3)),
        "div": lambda: check(ops.div, rand(2, 3), away_from_zero(2, 3)),
        "abs": lambda: check(ops.abs, away_from_zero(2, 5)),
        "sum": lambda: check(ops.sum, rand(3, 4)),
        "mean": lambda: check(ops.mean, rand(3, 4)),
        "matmul": lambda: check(ops.matmul, rand(2, 3, 4), rand(2, 4, 5)),
        "reshape": lambda: check(lambda x: ops.reshape(x, (6, 4)), rand(2, 3, 4)),
        "transpose": lambda: check(lambda x: ops.transpose(x, (2, 0, 1)), rand(2, 3, 4)),
        "getitem": lambda: check(lambda x: x[:, 1:, ::2], rand(2, 3, 5)),
        "concat": lambda: check(lambda a, b: ops.concat([a, b], axis=1), rand(1, 2, 3, 3), rand(1, 3, 3, 3)),
        "pad": lambda: check(lambda x: ops.pad(x, 2, 1), rand(1, 2, 3, 4)),
        "index_select": lambda: check(lambda x: ops.index_select(x, 3, np.array([0, 0, 1, 3, 3])), rand(1, 2, 3, 4)),
        "relu": lambda: check(ops.relu, away_from_zero(1, 3, 4, 4)),
        "prelu": lambda: check(ops.prelu, away_from_zero(2, 3, 4, 4), Tensor(rng.uniform(0.1, 0.5, 3))),
        "softmax": lambda: check(lambda x: ops.softmax(x, axis=1), rand(2, 5, 3, 3)),
        "l1_loss": lambda: finite_diff_check(lambda a: ops.l1_loss(a, np.zeros((2, 3, 4, 4))),
                                             [away_from_zero(2, 3, 4, 4)]),
        "conv2d": lambda: check(lambda x, w, b: ops.conv2d(x, w, b, stride=1, pad=1),
                                rand(2, 3, 8, 8), rand(4, 3, 3, 3), rand(4)),
        "conv2d_strided": lambda: check(lambda x, w, b: ops.conv2d(x, w, b, stride=2, pad=2),
                                        rand(1, 2, 6, 6), rand(3, 2, 6, 6), rand(3)),
        "conv_transpose2d": lambda: check(lambda x, w, b: ops.conv_transpose2d(x, w, b, stride=2, pad=2),
                                          rand(1, 3, 4, 4), rand(3, 2, 6, 6), rand(2)),
        "bilinear_resize": lambda: check(lambda x: ops.bilinear_resize(x, 3, 5), rand(1, 2, 7, 6)),
        "extract_patches": lambda: check(lambda x: ops.extract_patches(x, 3, stride=1, pad=1), rand(1, 2, 5, 4)),
        "fold_patches": lambda: check(lambda p: ops.fold_patches(p, 4, 5, 2, stride=1, pad=0)[0], rand(1, 8, 12)),
        "in_scale_nonlocal": attention_case(in_scale_nonlocal, attn(psi="learned", patch=1, grid=(2, 2)), (1, 4, 6, 6)),
        "naive_cross_scale": attention_case(naive_cross_scale, attn(psi="learned", scale=2, patch=1), (1, 4, 6, 6)),
        "cross_scale_pixel": attention_case(cross_scale_pixel, attn(scale=2, patch=1), (2, 4, 6, 6)),
        "cross_scale_patch": attention_case(cross_scale_patch, attn(scale=2, patch=3), (1, 4, 8, 8)),
    }

    def sem_case():
        sem = init_sem(np.random.default_rng(seed), 4, 2, 2, patch=3, grid=(1, 1), dtype=np.float64)
        x = rand(1, 4, 6, 6)
        leaves, f = _params_fn(sem, lambda xx, p: sem_forward(xx, p))
        return finite_diff_check(lambda xx, *v: _weighted_sum(f(xx, *v), seed), [x] + leaves,
                                 eps=DEEP_EPS, max_coords=12)

    def network_case():
        params = cast_tensors(init_csnln(TOY, seed=seed), np.float64)
        x = Tensor(rng.uniform(0, 1, (1, 3, 6, 6)))
        target = rng.uniform(0, 1, (1, 3, 12, 12))
        leaves, f = _params_fn(params, lambda xx, p: forward(xx, p))
        # L1 loss against a target keeps the check on the training objective
        return finite_diff_check(lambda xx, *v: ops.add(l1_loss(f(xx, *v), target), _weighted_sum(f(xx, *v), seed)),
                                 [x] + leaves, eps=DEEP_EPS, max_coords=8)

    cases["sem_forward"] = sem_case
    cases["network_toy"] = network_case
    return cases


def run_gradcheck(seed: int = 0, only: list[str] | None = None, broken: str | None = None,
                  report: Callable[[CheckResult], None] | None = None) -> list[CheckResult]:
    """Run every gradient check. ``broken`` (or the CSNLN_GRADCHECK_BREAK
    environment variable) names an op to sabotage, for testing the harness.
    """
    broken = broken or os.environ.get(BREAK_ENV) or None
    saved = None
    if broken:
        if not hasattr(ops, broken):
            raise ValueError(f"cannot break unknown op {broken!r}")
        saved = getattr(ops, broken)
        setattr(ops, broken, _broken(saved))
    try:
        results = []
        for name, thunk in gradcheck_cases(seed).items():
            if only and name not in only:
                continue
            res = CheckResult(name, thunk(), GRAD_TOL)
            results.append(res)
            if report is not None:
                report(res)
        return results
    finally:
        if saved is not None:
            setattr(ops, broken, saved)


@dataclass
class OracleCase:
    name: str
    shape: tuple[int, ...]
    scale: int
    patch: int
    dtype: str
    divergence: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.divergence < self.tolerance


def random_oracle_setup(seed: int):
    """Random (x64, params64) with n<=2, C<=4, h,w<=12, s in {2,3}, p in {1,3}."""
    rng = np.random.default_rng(seed)
    s = int(rng.choice([2, 3]))
    p = int(rng.choice([1, 3]))
    n = int(rng.integers(1, 3))
    c = int(rng.integers(1, 5))
    lo = max(s * p, 2 * s)
    h, w = (int(v) for v in rng.integers(lo, 13, size=2))
    ce = int(rng.integers(1, c + 1))
    params = init_attention(rng, c, ce, scale=s, patch=p, dtype=np.float64)
    x = rng.standard_normal((n, c, h, w))
    return x, params


def run_oracle(seeds: int = 20, report: Callable[[OracleCase], None] | None = None,
               first_seed: int = 0) -> list[OracleCase]:
    """Fast cross-scale attention vs loop oracle, plus the two reduction identities,
    on cases drawn from seeds ``first_seed .. first_seed + seeds - 1``."""
    results = []

    def emit(case):
        results.append(case)
        if report is not None:
            report(case)

    for seed in range(first_seed, first_seed + seeds):
        x, params = random_oracle_setup(seed)
        ref = cross_scale_oracle(x, params)
        for dtype, tol in ((np.float64, ORACLE_TOL_64), (np.float32, ORACLE_TOL_32)):
            p = cast_tensors(params, dtype)
            # the oracle sees exactly the rounded inputs the fast path sees
            xr = x.astype(dtype)
            ref_d = ref if dtype == np.float64 else cross_scale_oracle(xr, p)
            fast = cross_scale_patch(Tensor(xr), p).data
            emit(OracleCase(f"patch-vs-oracle[{seed}]", x.shape, params.scale, params.patch,
                            np.dtype(dtype).name, float(np.abs(fast - ref_d).max()), tol))
        # p = 1 reduction to pixel-level attention
        p1 = replace(params, patch=1)
        d = np.abs(cross_scale_patch(Tensor(x), p1).data - cross_scale_pixel(Tensor(x), p1).data).max()
        emit(OracleCase(f"patch(p=1)-vs-pixel[{seed}]", x.shape, params.scale, 1, "float64", float(d), 1e-6))
        # naive cross-scale at s = 1 is in-scale attention over the whole map
        s1 = replace(params, scale=1, patch=1, grid=(1, 1))
        d = np.abs(naive_cross_scale(Tensor(x), s1).data - in_scale_nonlocal(Tensor(x), s1).data).max()
        emit(OracleCase(f"naive(s=1)-vs-inscale[{seed}]", x.shape, 1, 1, "float64", float(d), 1e-6))
    return results
