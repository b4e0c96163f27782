"""Desk-scale training: config files, ADAM, step-decay schedule and a
resumable, bit-reproducible training loop.

Config files are flat UTF-8 ``key = value`` lines with ``#`` comments; see
:class:`TrainConfig` for the keys. The metrics log is an append-only CSV with
header ``epoch,step,loss,lr,val_psnr``.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import checkpoint
from .data import degrade_float, load_dataset, sample_batch, step_rng
from .imageio import bicubic_resize, quantize, rgb_to_y
from .metrics import psnr
from .network import CsnlnParams, forward, init_csnln, l1_loss, params_from_arrays, params_to_arrays, preset
from .params import named_tensors, replace_tensors
from .tensor import GradTape, Tensor, backward

log = logging.getLogger(__name__)

CSV_HEADER = ["epoch", "step", "loss", "lr", "val_psnr"]


@dataclass
class TrainConfig:
    batch: int = 16
    crop: int = 48
    lr: float = 1e-4
    halve_every: int = 150
    epochs: int = 500
    steps_per_epoch: int = 100
    seed: int = 0
    scale: int = 2
    preset: str = "toy"
    disable: tuple[str, ...] = ()
    dataset: str = "synthetic"
    train_count: int = 32
    val_dataset: str = "synthetic"
    val_count: int = 8
    image_size: int = 64
    out_dir: str = "run"
    augment: bool = True

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.crop % self.scale:
            raise ValueError(f"crop {self.crop} must be divisible by scale {self.scale}")
        if self.steps_per_epoch < 1 or self.halve_every < 1:
            raise ValueError("steps_per_epoch and halve_every must be >= 1")
        self.disable = tuple(self.disable)

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    def model_config(self):
        cfg = preset(self.preset, scale=self.scale)
        return cfg.without(*self.disable)


def _parse_value(raw: str, typ):
    typ = str(typ)
    if typ == "int":
        return int(raw)
    if typ == "float":
        return float(raw)
    if typ == "bool":
        low = raw.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {raw!r}")
        return low in ("true", "1", "yes")
    if typ.startswith("tuple"):
        return tuple(v.strip() for v in raw.split(",") if v.strip())
    return raw


def parse_config(text: str, base_dir=None) -> TrainConfig:
    """Parse ``key = value`` lines; unknown keys and malformed lines raise ValueError.

    Relative ``out_dir``/``dataset`` paths resolve against ``base_dir``.
    """
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _parse_value(raw, types[key])
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad value for {key}: {exc}") from None
    if base_dir is not None:
        for key in ("out_dir", "dataset", "val_dataset"):
            if key in values and values[key] != "synthetic" and not Path(values[key]).is_absolute():
                values[key] = str(Path(base_dir) / values[key])
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent)


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        val = getattr(cfg, f.name)
        if isinstance(val, tuple):
            val = ",".join(val)
        lines.append(f"{f.name} = {val}")
    return "\n".join(lines)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Initial rate halved every ``halve_every`` epochs."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr * 0.5 ** (epoch // cfg.halve_every)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params, grads: dict[str, np.ndarray], state: AdamState, lr: float):
    """One bias-corrected ADAM update. Returns ``(new_params, new_state)``.

    ``grads`` maps parameter names (as from :func:`named_tensors`) to arrays;
    parameters without a gradient are treated as having a zero gradient.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    b1, b2, eps = state.beta1, state.beta2, state.eps
    t = state.step + 1
    c1, c2 = 1 - b1**t, 1 - b2**t
    new_m, new_v, updated = {}, {}, {}
    for name, p in named_tensors(params):
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        g = g.astype(p.dtype, copy=False)
        m = state.m.get(name, np.zeros_like(p.data))
        v = state.v.get(name, np.zeros_like(p.data))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        new_m[name], new_v[name] = m, v
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        updated[name] = Tensor((p.data - step).astype(p.dtype), requires_grad=True)
    new_state = dataclasses.replace(state, m=new_m, v=new_v, step=t)
    return replace_tensors(params, updated), new_state


def named_gradients(params, grads: dict[Tensor, np.ndarray]) -> dict[str, np.ndarray]:
    return {name: grads[t] for name, t in named_tensors(params) if t in grads}


def super_resolve(params: CsnlnParams, lr: np.ndarray) -> np.ndarray:
    """Float (n, 3, h, w) LR in [0, 1] -> float SR (n, 3, s*h, s*w), no gradient."""
    return forward(Tensor(lr.astype(np.float32)), params).data


def _mean_y_psnr(images: list[np.ndarray], scale: int, upscale: Callable[[np.ndarray], np.ndarray]) -> float:
    scores = []
    for hr in images:
        h, w = hr.shape[-2:]
        hr = hr[:, : h - h % scale, : w - w % scale]
        sr = upscale(degrade_float(hr, scale))
        y_sr = rgb_to_y(quantize(sr), channel_axis=0)
        y_hr = rgb_to_y(quantize(hr), channel_axis=0)
        scores.append(psnr(y_sr, y_hr, border_crop=scale))
    return float(np.mean(scores))


def validation_psnr(params: CsnlnParams, images: list[np.ndarray], scale: int) -> float:
    """Mean Y-PSNR (border crop = scale) over float (3, H, W) HR images."""
    return _mean_y_psnr(images, scale, lambda lr: super_resolve(params, lr[None])[0])


def bicubic_validation_psnr(images: list[np.ndarray], scale: int) -> float:
    """The same protocol as :func:`validation_psnr` with plain bicubic upscaling."""
    return _mean_y_psnr(images, scale, lambda lr: bicubic_resize(lr, scale * lr.shape[-2], scale * lr.shape[-1]))


def state_to_arrays(params: CsnlnParams, state: AdamState, step: int, best: float) -> dict[str, np.ndarray]:
    arrays = params_to_arrays(params)
    for name, m in state.m.items():
        arrays[f"adam.m.{name}"] = m.astype(np.float32)
        arrays[f"adam.v.{name}"] = state.v[name].astype(np.float32)
    # counters split into 16-bit halves so float32 stores them exactly
    arrays["train.step"] = np.array([step // 65536, step % 65536], dtype=np.float32)
    arrays["adam.step"] = np.array([state.step // 65536, state.step % 65536], dtype=np.float32)
    arrays["train.best_psnr"] = np.array([best if math.isfinite(best) else -1.0], dtype=np.float32)
    return arrays


def state_from_arrays(arrays: dict[str, np.ndarray]):
    params = params_from_arrays(arrays)
    m = {k[len("adam.m."):]: v for k, v in arrays.items() if k.startswith("adam.m.")}
    v = {k[len("adam.v."):]: a for k, a in arrays.items() if k.startswith("adam.v.")}

    def counter(key):
        hi, lo = arrays[key] if key in arrays else (0, 0)
        return int(hi) * 65536 + int(lo)

    state = AdamState(m=m, v=v, step=counter("adam.step"))
    best = float(arrays.get("train.best_psnr", np.array([-1.0]))[0])
    return params, state, counter("train.step"), best


@dataclass
class TrainResult:
    params: CsnlnParams
    state: AdamState
    step: int
    history: list[dict] = field(default_factory=list)
    best_psnr: float = -math.inf


def train(cfg: TrainConfig, resume=None, *, write: bool = True,
          on_step: Callable[[int, float], None] | None = None) -> TrainResult:
    """Run (or continue) training up to ``cfg.total_steps``.

    With ``write`` the run directory receives ``last.ckpt`` and ``best.ckpt``
    at every epoch end plus ``metrics.csv`` rows. Training is single-threaded
    and fully determined by ``cfg.seed``: batch ``k`` is drawn from
    ``step_rng(seed, k)``, so resuming reproduces an uninterrupted run.
    """
    model_cfg = cfg.model_config()
    train_set = load_dataset(cfg.dataset, count=cfg.train_count, size=cfg.image_size, seed=cfg.seed)
    val_seed = cfg.seed + 1_000_003
    val_set = load_dataset(cfg.val_dataset, count=cfg.val_count, size=cfg.image_size, seed=val_seed)

    if resume is not None:
        arrays = checkpoint.load_checkpoint(resume) if not isinstance(resume, dict) else resume
        params, state, start, best = state_from_arrays(arrays)
        if params.config != model_cfg:
            raise ValueError(f"checkpoint model {params.config} does not match config {model_cfg}")
        best = best if best >= 0 else -math.inf
    else:
        params, state, start, best = init_csnln(model_cfg, seed=cfg.seed), AdamState(), 0, -math.inf

    out_dir = Path(cfg.out_dir)
    csv_path = out_dir / "metrics.csv"
    if write:
        out_dir.mkdir(parents=True, exist_ok=True)
        if not csv_path.exists():
            with open(csv_path, "w", newline="") as fh:
                csv.writer(fh).writerow(CSV_HEADER)
        if start == 0:
            checkpoint.save_checkpoint(out_dir / "last.ckpt", state_to_arrays(params, state, 0, best))

    result = TrainResult(params, state, start, best_psnr=best)
    losses: list[float] = []
    for step in range(start, cfg.total_steps):
        epoch = step // cfg.steps_per_epoch
        lr = lr_at(epoch, cfg)
        rng = step_rng(cfg.seed, step)
        lr_batch, hr_batch = sample_batch(train_set, cfg.batch, cfg.crop, cfg.scale, rng, augment_pairs=cfg.augment)
        with GradTape() as tape:
            loss = l1_loss(forward(Tensor(lr_batch), params), hr_batch)
        value = loss.item()
        if not math.isfinite(value):
            raise FloatingPointError(f"non-finite loss at step {step}")
        grads = named_gradients(params, backward(loss, tape))
        params, state = adam_step(params, grads, state, lr)
        losses.append(value)
        if on_step is not None:
            on_step(step, value)

        if (step + 1) % cfg.steps_per_epoch == 0 or step + 1 == cfg.total_steps:
            val = validation_psnr(params, val_set, cfg.scale)
            row = {"epoch": epoch, "step": step + 1, "loss": float(np.mean(losses)), "lr": lr, "val_psnr": val}
            result.history.append(row)
            log.info("epoch %d step %d loss %.5f lr %.3g val_psnr %.3f", epoch, step + 1, row["loss"], lr, val)
            losses = []
            if write:
                with open(csv_path, "a", newline="") as fh:
                    csv.writer(fh).writerow([row[k] for k in CSV_HEADER])
            if val > best:
                best = val
                if write:
                    checkpoint.save_checkpoint(out_dir / "best.ckpt", state_to_arrays(params, state, step + 1, best))
            if write:
                checkpoint.save_checkpoint(out_dir / "last.ckpt", state_to_arrays(params, state, step + 1, best))

    result.params, result.state, result.step, result.best_psnr = params, state, cfg.total_steps, best
    if start >= cfg.total_steps:
        result.step = start
    return result
