"""Parameter containers and helpers to walk them by name.

Parameter sets are frozen dataclasses whose leaves are :class:`Tensor`. Since
tensors are immutable, optimizers produce a new tree with
:func:`replace_tensors`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tensor


@dataclass(frozen=True)
class Conv:
    """Convolution weights. ``transposed`` flips the weight layout to (in, out, kh, kw)."""

    weight: Tensor
    bias: Tensor | None = None
    stride: int = 1
    pad: int = 0
    transposed: bool = False

    def __call__(self, x: Tensor) -> Tensor:
        fn = ops.conv_transpose2d if self.transposed else ops.conv2d
        return fn(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


def init_conv(rng: np.random.Generator, in_c: int, out_c: int, k: int, *, stride: int = 1, pad: int | None = None,
              transposed: bool = False, bias: bool = True, gain: float = 1.0, dtype=np.float32) -> Conv:
    """Fan-in scaled uniform weights (times ``gain``), zero bias.

    For a transposed conv the fan-in counts the inputs that reach one output
    pixel, ``in_c * k * k / stride**2``.
    """
    pad = (k - 1) // 2 if pad is None else pad
    fan_in = in_c * k * k / (stride * stride if transposed else 1)
    bound = gain / np.sqrt(fan_in)
    shape = (in_c, out_c, k, k) if transposed else (out_c, in_c, k, k)
    w = rng.uniform(-bound, bound, size=shape).astype(dtype)
    b = Tensor(np.zeros(out_c, dtype=dtype), requires_grad=True) if bias else None
    return Conv(Tensor(w, requires_grad=True), b, stride=stride, pad=pad, transposed=transposed)


def init_slope(channels: int, dtype=np.float32, value: float = 0.25) -> Tensor:
    return Tensor(np.full(channels, value, dtype=dtype), requires_grad=True)


def activation(x: Tensor, slope: Tensor | None) -> Tensor:
    """PReLU when a slope tensor is present, plain ReLU otherwise."""
    return ops.relu(x) if slope is None else ops.prelu(x, slope)


def named_tensors(tree, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Yield ``(dotted.name, tensor)`` for every tensor leaf, in field order."""
    if isinstance(tree, Tensor):
        yield prefix, tree
    elif dataclasses.is_dataclass(tree):
        for f in dataclasses.fields(tree):
            val = getattr(tree, f.name)
            if val is None:
                continue
            yield from named_tensors(val, f"{prefix}.{f.name}" if prefix else f.name)


def replace_tensors(tree, mapping: dict[str, Tensor], prefix: str = ""):
    """Return a copy of ``tree`` with leaves swapped for ``mapping[name]``."""
    if isinstance(tree, Tensor):
        return mapping.get(prefix, tree)
    if dataclasses.is_dataclass(tree):
        changes = {}
        for f in dataclasses.fields(tree):
            val = getattr(tree, f.name)
            if isinstance(val, Tensor) or dataclasses.is_dataclass(val):
                changes[f.name] = replace_tensors(val, mapping, f"{prefix}.{f.name}" if prefix else f.name)
        return dataclasses.replace(tree, **changes)
    return tree


def cast_tensors(tree, dtype):
    """Copy of ``tree`` with every tensor converted to ``dtype``."""
    return replace_tensors(tree, {name: t.astype(dtype) for name, t in named_tensors(tree)})


def count_parameters(tree) -> int:
    return int(sum(t.size for _, t in named_tensors(tree)))
