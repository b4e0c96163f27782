"""Immutable tensor values and a tape-based reverse-mode gradient engine.

A :class:`Tensor` wraps a numpy array. Operations in :mod:`csnln.ops` build
new tensors; while a :class:`GradTape` is active, every op whose inputs need
gradients is appended to the tape together with a closure computing the
vector-Jacobian product. :func:`backward` replays the tape in reverse.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "GradTape",
    "backward",
    "finite_diff_check",
    "tensor",
    "zeros",
    "ones",
]

VJP = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """Dense real array with an optional gradient flag.

    The wrapped array is marked read-only; ops always return new tensors.
    Non-finite values are rejected at construction.
    """

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite values in tensor {name or ''}".strip())
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        # skips the defensive copy; the caller hands over ownership
        arr = np.asarray(arr)
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError("operation produced non-finite values")
        out = cls.__new__(cls)
        arr.flags.writeable = False
        out.data = arr
        out.requires_grad = requires_grad
        out.name = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # arithmetic sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __getitem__(self, idx):
        from . import ops
        return ops.getitem(self, idx)

    def sum(self):
        from . import ops
        return ops.sum(self)

    def mean(self):
        from . import ops
        return ops.mean(self)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def tensor(data, requires_grad: bool = False, dtype=np.float64, name: str | None = None) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=requires_grad, name=name)


def zeros(shape, dtype=np.float64, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=np.float64, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


_local = threading.local()


def _tape_stack() -> list["GradTape"]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "GradTape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class GradTape:
    """Ordered record of executed differentiable ops.

    Use as a context manager::

        with GradTape() as tape:
            loss = ops.sum(ops.conv2d(x, w))
        grads = backward(loss, tape)

    A tape belongs to the thread that entered it.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple, VJP]] = []
        self._outputs: set[int] = set()

    def __enter__(self) -> "GradTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("GradTape exited out of order")
        stack.pop()

    def record(self, out: Tensor, inputs: tuple, vjp: VJP) -> None:
        self.records.append((out, inputs, vjp))
        self._outputs.add(id(out))

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._outputs


def make_result(arr: np.ndarray, inputs: tuple, vjp: VJP) -> Tensor:
    """Wrap an op result and put it on the active tape when needed.

    ``inputs`` may contain non-Tensor entries (constants); they never receive
    gradients.
    """
    tape = active_tape()
    needs = tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    out = Tensor._wrap(arr, needs)
    if needs:
        tape.record(out, inputs, vjp)
    return out


def backward(loss: Tensor, tape: GradTape) -> dict[Tensor, np.ndarray]:
    """Reverse-replay ``tape`` from the scalar ``loss``.

    Returns a dict mapping every leaf tensor with ``requires_grad`` that
    influenced ``loss`` to its gradient (same shape as the tensor). Tensors
    that never went through a recorded op are absent.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss not in tape:
        if loss.requires_grad:
            return {loss: np.ones_like(loss.data)}
        raise ValueError("loss was not produced on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    refs: dict[int, Tensor] = {id(loss): loss}
    for out, inputs, vjp in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        refs.pop(id(out), None)
        for t, gi in zip(inputs, vjp(g)):
            if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                raise AssertionError(f"gradient shape {gi.shape} != tensor shape {t.shape}")
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                refs[key] = t
    return {refs[k]: g for k, g in grads.items()}


def finite_diff_check(
    f: Callable[..., Tensor],
    x: "Tensor | Sequence[Tensor]",
    eps: "float | Sequence[float]" = 1e-6,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` maps the tensor(s) in ``x`` to a scalar tensor. Every coordinate is
    perturbed unless ``max_coords`` is given, in which case a seeded random
    subset of at most that many coordinates per tensor is checked. The error
    per coordinate is ``|analytic - numeric| / max(1e-8, |numeric|)``.

    ``eps`` may be a sequence of step sizes; each coordinate then keeps its
    smallest error across them. Small steps suffer roundoff on tiny
    gradients, large ones can straddle a ReLU kink; a wrong VJP disagrees at
    every step size.
    """
    steps = [float(eps)] if np.isscalar(eps) else [float(e) for e in eps]
    xs = [x] if isinstance(x, Tensor) else list(x)
    leaves = [Tensor(t.data, requires_grad=True) for t in xs]
    with GradTape() as tape:
        y = f(*leaves)
    if not np.isfinite(y.data).all():
        raise FloatingPointError("f returned non-finite value")
    grads = backward(y, tape)

    def evaluate(arrays) -> float:
        val = f(*[Tensor._wrap(a) for a in arrays]).data
        if not np.all(np.isfinite(val)):
            raise FloatingPointError("f returned non-finite value")
        return float(val.reshape(-1)[0])

    rng = np.random.default_rng(seed)
    worst = 0.0
    bases = [t.data.copy() for t in leaves]
    for k, leaf in enumerate(leaves):
        analytic = grads.get(leaf, np.zeros_like(leaf.data)).reshape(-1)
        coords: Iterable[int] = range(leaf.size)
        if max_coords is not None and leaf.size > max_coords:
            coords = np.sort(rng.choice(leaf.size, size=max_coords, replace=False))
        for c in coords:
            arrays = [b.copy() for b in bases]
            flat = arrays[k].reshape(-1)
            best = np.inf
            for h in steps:
                flat[c] = bases[k].reshape(-1)[c] + h
                fp = evaluate(arrays)
                flat[c] = bases[k].reshape(-1)[c] - h
                fm = evaluate(arrays)
                numeric = (fp - fm) / (2 * h)
                best = min(best, abs(analytic[c] - numeric) / max(1e-8, abs(numeric)))
            worst = max(worst, best)
    return worst
