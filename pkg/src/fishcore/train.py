"""Toy-scale codec training.

Straight-through GFSQ, a hand-written AdamW with decoupled weight decay, the
cosine-with-warmup learning-rate schedule, central-difference gradient
checks and a synthetic multi-sine dataset.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np
import torch

from .errors import ConfigError, DomainError, TrainingError
from .firefly import CodecModel
from .gfsq import CodeGrid, GfsqConfig, gfsq_encode, grid_quantize, utilization

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule settings.  Defaults are the large-scale values;
    :meth:`toy` gives the desk-scale run used by tests and the CLI."""

    lr_max: float = 5e-4
    betas: tuple[float, float] = (0.9, 0.98)
    eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_steps: int = 2000
    total_steps: int = 500_000
    final_lr_ratio: float = 0.1
    batch_size: int = 8
    seed: int = 0
    log_every: int = 50

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if not 0 < self.final_lr_ratio <= 1:
            raise ConfigError("final_lr_ratio must be in (0, 1]")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ConfigError("need 0 <= warmup_steps < total_steps")
        if self.lr_max < 0 or self.weight_decay < 0:
            raise ConfigError("lr_max and weight_decay must be non-negative")
        if self.batch_size < 1 or self.log_every < 1:
            raise ConfigError("batch_size and log_every must be positive")

    @classmethod
    def toy(cls, **overrides) -> "TrainConfig":
        base = dict(lr_max=3e-3, warmup_steps=100, total_steps=2000)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad train config: {exc}") from exc


def lr_at(step: int, config: TrainConfig) -> float:
    """Linear warmup from 0 to ``lr_max``, then cosine decay to ``final_lr_ratio * lr_max``."""
    if step < 0:
        raise DomainError(f"step must be non-negative, got {step}")
    lr_max = config.lr_max
    lr_min = config.final_lr_ratio * lr_max
    w, s = config.warmup_steps, config.total_steps
    if step >= s:
        return lr_min
    if step < w:
        return lr_max * step / w
    return lr_min + 0.5 * (lr_max - lr_min) * (1 + math.cos(math.pi * (step - w) / (s - w)))


# --- AdamW --------------------------------------------------------------------


@dataclass
class OptState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def _finite(x) -> bool:
    if isinstance(x, torch.Tensor):
        return bool(torch.isfinite(x).all())
    return bool(np.all(np.isfinite(x)))


def adamw_step(params: Mapping, grads: Mapping, state: OptState, lr: float, config: TrainConfig):
    """One AdamW update over named arrays or tensors.

    Weight decay is applied first (``w -= lr * wd * w``), then the
    bias-corrected Adam step.  Returns ``(new_params, state)``; inputs are not
    modified in place.
    """
    if lr < 0:
        raise DomainError("learning rate must be non-negative")
    b1, b2 = config.betas
    for name, g in grads.items():
        if not _finite(g):
            raise TrainingError(f"non-finite gradient in {name}", step=state.step, path=name)
    t = state.step + 1
    new = {}
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise DomainError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(w.shape)} for {name}")
        m = b1 * state.m.get(name, 0 * w) + (1 - b1) * g
        v = b2 * state.v.get(name, 0 * w) + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        w = w - lr * config.weight_decay * w
        new[name] = w - lr * m_hat / (v_hat**0.5 + config.eps)
    state.step = t
    return new, state


# --- straight-through quantization --------------------------------------------


class _RoundHalfAway(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        whole = torch.trunc(x)
        return whole + torch.sign(x) * ((x - whole).abs() >= 0.5).to(x.dtype)

    @staticmethod
    def backward(ctx, grad):
        return grad


def _channel_half_widths(config: GfsqConfig, like: torch.Tensor) -> torch.Tensor:
    half = [(l - 1) // 2 for l in config.levels] * config.groups
    return torch.tensor(half, dtype=like.dtype)[None, :, None]


def ste_quantize(latent, config: GfsqConfig):
    """GFSQ grid quantization whose backward treats rounding as the identity.

    The ``tanh`` bound keeps its true derivative, so the gradient is that of
    the surrogate ``tanh(latent)``.  Arrays in, arrays out (no gradient).
    """
    if not isinstance(latent, torch.Tensor):
        return grid_quantize(latent, config)
    if latent.ndim != 3 or latent.shape[1] != config.channels:
        raise DomainError(f"expected (B, {config.channels}, L), got {tuple(latent.shape)}")
    half = _channel_half_widths(config, latent)
    return _RoundHalfAway.apply(half * torch.tanh(latent)) / half


def ste_surrogate(latent: torch.Tensor) -> torch.Tensor:
    """The differentiable function whose gradient :func:`ste_quantize` reports."""
    return torch.tanh(latent)


# --- gradient checks ----------------------------------------------------------


def grad_check(fn: Callable, point, grad: Callable, h: float = 1e-5) -> float:
    """Max relative error between ``grad(point)`` and central differences of ``fn``.

    The error of one coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    x = np.array(point, dtype=np.float64)
    analytic = np.asarray(grad(x.copy()), dtype=np.float64).reshape(x.shape)
    numeric = np.empty_like(x)
    flat, out = x.reshape(-1), numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(fn(x.copy()))
        flat[i] = orig - h
        down = float(fn(x.copy()))
        flat[i] = orig
        if not (math.isfinite(up) and math.isfinite(down)):
            raise DomainError(f"function is not finite near coordinate {i}")
        out[i] = (up - down) / (2 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom)) if x.size else 0.0


def torch_grad_check(fn: Callable, *inputs: torch.Tensor, h: float = 1e-5) -> float:
    """Run :func:`grad_check` on every input of a scalar torch function, in float64.

    Returns the worst relative error across all inputs.
    """
    base = [t.detach().double() for t in inputs]
    worst = 0.0
    for i in range(len(base)):

        def f(x, i=i):
            args = list(base)
            args[i] = torch.as_tensor(x)
            with torch.no_grad():
                return fn(*args).item()

        def g(x, i=i):
            args = list(base)
            args[i] = torch.as_tensor(x).requires_grad_(True)
            out = fn(*args)
            # an input the output never touches has a zero gradient
            if not out.requires_grad:
                return np.zeros(np.shape(x))
            (gx,) = torch.autograd.grad(out, args[i], allow_unused=True)
            return np.zeros(np.shape(x)) if gx is None else gx.numpy()

        worst = max(worst, grad_check(f, base[i].numpy(), g, h))
    return worst


# --- data ---------------------------------------------------------------------


def synth_dataset(num_signals: int, length: int, num_tones: int = 3, seed: int = 0) -> np.ndarray:
    """Sums of random sinusoids, each signal scaled to peak magnitude 1.

    Returns (num_signals, 1, length).  Every signal draws from its own child
    seed, so the output does not depend on generation order.
    """
    if num_signals < 1 or length < 1 or num_tones < 0:
        raise DomainError("num_signals and length must be positive, num_tones non-negative")
    children = np.random.SeedSequence(seed).spawn(num_signals)
    t = np.arange(length)
    out = np.zeros((num_signals, 1, length))
    for n, child in enumerate(children):
        rng = np.random.default_rng(child)
        freq = rng.uniform(0.005, 0.08, num_tones)
        phase = rng.uniform(0, 2 * np.pi, num_tones)
        amp = rng.uniform(0.3, 1.0, num_tones)
        x = (amp[:, None] * np.sin(2 * np.pi * freq[:, None] * t[None, :] + phase[:, None])).sum(axis=0)
        peak = np.abs(x).max() if num_tones else 0.0
        out[n, 0] = x / peak if peak > 0 else x
    return out


# --- training loop ------------------------------------------------------------


@dataclass
class TrainResult:
    model: CodecModel
    curve: list[dict]
    initial_mse: float
    final_mse: float
    utilization: list[float]


def reconstruct(model: CodecModel, x: torch.Tensor) -> torch.Tensor:
    latent = model.encode_latent(x)
    return model.decode_latent(ste_quantize(latent, model.config.gfsq), x.shape[-1])


def evaluate(model: CodecModel, data: np.ndarray) -> tuple[float, CodeGrid]:
    """Mean squared reconstruction error over ``data`` and the codes it produced."""
    x = torch.as_tensor(data).to(model.dtype)
    with torch.no_grad():
        latent = model.encode_latent(x)
        recon = model.decode_latent(ste_quantize(latent, model.config.gfsq), x.shape[-1])
    codes = gfsq_encode(latent.double().numpy(), model.config.gfsq)
    return float(((recon - x) ** 2).mean()), codes


def train_codec(data: np.ndarray, model: CodecModel, config: TrainConfig, steps: int | None = None) -> TrainResult:
    """Minimize MSE reconstruction through the straight-through bottleneck.

    Runs ``steps`` updates (default ``config.total_steps``) on batches drawn
    with ``config.seed``.  Every ``log_every`` steps a row
    ``{step, lr, loss, utilization}`` is appended to the curve, where
    utilization is the mean per-group value over that batch.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 3 or data.shape[0] < 1:
        raise DomainError("dataset must be a non-empty (N, C, L) array")
    if not np.all(np.isfinite(data)):
        raise DomainError("dataset contains non-finite samples")
    steps = config.total_steps if steps is None else steps
    rng = np.random.default_rng(config.seed)
    names = [n for n, _ in model.named_parameters()]
    params = dict(model.named_parameters())
    state = OptState()
    initial_mse, _ = evaluate(model, data)
    curve = []
    for step in range(steps):
        batch = torch.as_tensor(data[rng.integers(0, data.shape[0], config.batch_size)]).to(model.dtype)
        latent = model.encode_latent(batch)
        recon = model.decode_latent(ste_quantize(latent, model.config.gfsq), batch.shape[-1])
        loss = ((recon - batch) ** 2).mean()
        if not torch.isfinite(loss):
            raise TrainingError(f"loss diverged at step {step}", step=step)
        grads = torch.autograd.grad(loss, [params[n] for n in names])
        lr = lr_at(step, config)
        with torch.no_grad():
            current = {n: params[n].detach() for n in names}
            try:
                updated, state = adamw_step(current, dict(zip(names, grads)), state, lr, config)
            except TrainingError as exc:
                exc.step = step
                raise
            for n in names:
                params[n].copy_(updated[n])
        if step % config.log_every == 0 or step == steps - 1:
            codes = gfsq_encode(latent.detach().double().numpy(), model.config.gfsq)
            row = {"step": step, "lr": lr, "loss": loss.item(), "utilization": float(utilization(codes).mean())}
            curve.append(row)
            log.info("step %d lr %.3g loss %.5f util %.3f", step, lr, row["loss"], row["utilization"])
    final_mse, codes = evaluate(model, data)
    return TrainResult(model, curve, initial_mse, final_mse, utilization(codes).tolist())


def write_curve(curve: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["step", "lr", "loss", "utilization"])
        writer.writeheader()
        writer.writerows(curve)


def load_train_config(path) -> TrainConfig:
    with open(path) as fh:
        return TrainConfig.from_dict(json.load(fh))
