"""Recurrent cross-scale super-resolution network.

``L_0 = head(I_LR)``; for ``i = 1..T``: ``H_i = SEM(L_{i-1})`` (HR) and
``L_i = out_cnn(H_i)`` (LR, first layer strided); finally
``I_SR = tail(concat(H_1..H_T))``. One SEM parameter set is shared across all
iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import ops
from .params import Conv, activation, count_parameters, init_conv, init_slope, named_tensors, replace_tensors
from .sem import BRANCHES, SemParams, init_sem, projection_geometry, sem_forward
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    scale: int = 2
    channels: int = 128
    embed: int = 64
    recurrence: int = 12
    patch: int = 3
    candidate_stride: int = 1
    grid: tuple[int, int] = (2, 2)
    branches: tuple[str, ...] = BRANCHES
    prelu: bool = True

    def __post_init__(self):
        if self.recurrence < 1:
            raise ValueError("recurrence must be >= 1")
        if self.embed > self.channels:
            raise ValueError("embedded channels cannot exceed channels")
        object.__setattr__(self, "grid", tuple(self.grid))
        object.__setattr__(self, "branches", tuple(b for b in BRANCHES if b in self.branches))

    def without(self, *branches: str) -> "ModelConfig":
        return replace(self, branches=tuple(b for b in self.branches if b not in branches))


PAPER = ModelConfig()
TOY = ModelConfig(scale=2, channels=16, embed=8, recurrence=2, patch=3, grid=(1, 1))
PRESETS = {"paper": PAPER, "toy": TOY}


def preset(name: str, **overrides) -> ModelConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(base, **overrides)


@dataclass(frozen=True)
class CsnlnParams:
    config: ModelConfig = field(compare=False)
    head1: Conv
    head_act: Tensor | None
    head2: Conv
    sem: SemParams
    out1: Conv
    out_act: Tensor | None
    out2: Conv
    tail: Conv


def init_csnln(config: ModelConfig, seed: int = 0, dtype=np.float32) -> CsnlnParams:
    rng = np.random.default_rng(seed)
    c, s = config.channels, config.scale
    k, pad = projection_geometry(s)
    slope = (lambda: init_slope(c, dtype)) if config.prelu else (lambda: None)
    head1 = init_conv(rng, 3, c, 3, dtype=dtype)
    head_act = slope()
    head2 = init_conv(rng, c, c, 3, dtype=dtype)
    sem = init_sem(rng, c, config.embed, s, patch=config.patch, candidate_stride=config.candidate_stride,
                   grid=config.grid, branches=config.branches, prelu=config.prelu, dtype=dtype)
    out1 = init_conv(rng, c, c, k, stride=s, pad=pad, dtype=dtype)
    out_act = slope()
    out2 = init_conv(rng, c, c, 3, dtype=dtype)
    tail = init_conv(rng, config.recurrence * c, 3, 3, dtype=dtype)
    return CsnlnParams(config, head1, head_act, head2, sem, out1, out_act, out2, tail)


def head(image: Tensor, params: CsnlnParams) -> Tensor:
    if image.ndim != 4 or image.shape[1] != 3:
        raise ValueError(f"head expects an (n, 3, h, w) image, got {image.shape}")
    return params.head2(activation(params.head1(image), params.head_act))


def out_cnn(H: Tensor, params: CsnlnParams) -> Tensor:
    return params.out2(activation(params.out1(H), params.out_act))


def step(L_prev: Tensor, params: CsnlnParams, sem: SemParams | None = None) -> tuple[Tensor, Tensor]:
    """One recurrence: ``(H_i, L_i)``. ``sem`` overrides the shared cell weights."""
    H = sem_forward(L_prev, params.sem if sem is None else sem)
    return H, out_cnn(H, params)


def forward(image: Tensor, params: CsnlnParams) -> Tensor:
    """Super-resolve an (n, 3, h, w) image to (n, 3, s*h, s*w)."""
    L = head(image, params)
    hidden = []
    for _ in range(params.config.recurrence):
        H, L = step(L, params)
        hidden.append(H)
    feats = hidden[0] if len(hidden) == 1 else ops.concat(hidden, axis=1)
    return params.tail(feats)


def l1_loss(sr: Tensor, hr) -> Tensor:
    return ops.l1_loss(sr, hr)


def parameter_report(params: CsnlnParams) -> dict[str, int]:
    """Trainable parameter count per top-level module plus ``total``."""
    report: dict[str, int] = {}
    for name, t in named_tensors(params):
        top = name.split(".")[0]
        if top == "sem":
            top = "sem." + name.split(".")[1]
        report[top] = report.get(top, 0) + t.size
    report["total"] = count_parameters(params)
    return report


_CONFIG_KEYS = ("scale", "channels", "embed", "recurrence", "patch", "candidate_stride")


def params_to_arrays(params: CsnlnParams, prefix: str = "model.") -> dict[str, np.ndarray]:
    """Flat name -> float32 array map, including the model config as 1-element entries."""
    cfg = params.config
    out = {f"config.{k}": np.array([getattr(cfg, k)], dtype=np.float32) for k in _CONFIG_KEYS}
    out["config.grid"] = np.array(cfg.grid, dtype=np.float32)
    out["config.branches"] = np.array([b in cfg.branches for b in BRANCHES], dtype=np.float32)
    out["config.prelu"] = np.array([cfg.prelu], dtype=np.float32)
    for name, t in named_tensors(params):
        out[prefix + name] = t.data.astype(np.float32)
    return out


def config_from_arrays(arrays: dict[str, np.ndarray]) -> ModelConfig:
    try:
        kw = {k: int(arrays[f"config.{k}"][0]) for k in _CONFIG_KEYS}
        kw["grid"] = tuple(int(v) for v in arrays["config.grid"])
        kw["branches"] = tuple(b for b, on in zip(BRANCHES, arrays["config.branches"]) if on)
        kw["prelu"] = bool(arrays["config.prelu"][0])
    except KeyError as exc:
        raise ValueError(f"checkpoint lacks model config entry {exc}") from None
    return ModelConfig(**kw)


def params_from_arrays(arrays: dict[str, np.ndarray], prefix: str = "model.", dtype=np.float32) -> CsnlnParams:
    template = init_csnln(config_from_arrays(arrays), seed=0, dtype=dtype)
    mapping = {}
    for name, t in named_tensors(template):
        key = prefix + name
        if key not in arrays:
            raise ValueError(f"checkpoint lacks parameter {key}")
        if arrays[key].shape != t.shape:
            raise ValueError(f"parameter {key}: shape {arrays[key].shape} != expected {t.shape}")
        mapping[name] = Tensor(arrays[key].astype(dtype), requires_grad=True)
    return replace_tensors(template, mapping)
