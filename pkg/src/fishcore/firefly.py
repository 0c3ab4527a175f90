"""Firefly-style 1-D convolutional codec around the GFSQ bottleneck.

The encoder and decoder are built from depthwise-separable dilated
convolutions grouped into ParallelBlocks (three ResBlocks whose outputs are
stacked and averaged).  ``f_down``/``f_up`` are a strided convolution and a
transposed convolution; with no weights they fall back to mean pooling and
nearest-neighbour repetition ("reference" mode).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, DomainError, ShapeError
from .gfsq import CodeGrid, GfsqConfig, gfsq_decode, gfsq_encode


@dataclass
class ConvSpec:
    """Weights of one depthwise-separable convolution.

    ``depthwise`` is (C_in, kernel), ``pointwise`` is (C_out, C_in).
    """

    depthwise: np.ndarray
    pointwise: np.ndarray
    bias: np.ndarray | None = None
    dilation: int = 1
    stride: int = 1

    def __post_init__(self):
        self.depthwise = np.asarray(self.depthwise, dtype=np.float64)
        self.pointwise = np.asarray(self.pointwise, dtype=np.float64)
        if self.depthwise.ndim != 2 or self.pointwise.ndim != 2:
            raise ShapeError("depthwise must be (C_in, k) and pointwise (C_out, C_in)")
        if self.pointwise.shape[1] != self.in_channels:
            raise ShapeError(
                f"pointwise expects {self.pointwise.shape[1]} inputs, depthwise has {self.in_channels}"
            )
        if self.kernel % 2 == 0:
            raise ConfigError(f"kernel must be odd, got {self.kernel}")
        if self.dilation < 1 or self.stride < 1:
            raise ConfigError("dilation and stride must be positive")
        if self.bias is None:
            self.bias = np.zeros(self.out_channels)
        self.bias = np.asarray(self.bias, dtype=np.float64)

    @property
    def in_channels(self) -> int:
        return self.depthwise.shape[0]

    @property
    def out_channels(self) -> int:
        return self.pointwise.shape[0]

    @property
    def kernel(self) -> int:
        return self.depthwise.shape[1]

    @property
    def receptive_field(self) -> int:
        return self.dilation * (self.kernel - 1) + 1

    @property
    def weight_count(self) -> int:
        return self.depthwise.size + self.pointwise.size

    @classmethod
    def identity(cls, channels: int, kernel: int = 3, dilation: int = 1) -> "ConvSpec":
        dw = np.zeros((channels, kernel))
        dw[:, kernel // 2] = 1.0
        return cls(dw, np.eye(channels), dilation=dilation)


def dws_conv(x: torch.Tensor, depthwise, pointwise, bias, dilation: int = 1, stride: int = 1):
    """Depthwise conv (zero "same" padding) followed by a 1x1 channel mix, on tensors."""
    channels, kernel = depthwise.shape
    if x.shape[1] != channels:
        raise ShapeError(f"input has {x.shape[1]} channels, convolution expects {channels}")
    pad = dilation * (kernel - 1) // 2
    h = F.conv1d(x, depthwise[:, None, :], padding=pad, dilation=dilation, stride=stride, groups=channels)
    return F.conv1d(h, pointwise[:, :, None], bias)


def dws_conv1d(x, spec: ConvSpec) -> np.ndarray:
    """Apply a :class:`ConvSpec` to a (B, C, L) array."""
    t = torch.as_tensor(np.asarray(x, dtype=np.float64))
    if t.ndim != 3:
        raise ShapeError(f"expected (B, C, L), got {tuple(t.shape)}")
    out = dws_conv(
        t,
        torch.as_tensor(spec.depthwise),
        torch.as_tensor(spec.pointwise),
        torch.as_tensor(spec.bias),
        spec.dilation,
        spec.stride,
    )
    return out.numpy()


class DWSConv1d(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3, dilation: int = 1, zero_init=False):
        super().__init__()
        if kernel % 2 == 0:
            raise ConfigError(f"kernel must be odd, got {kernel}")
        self.dilation = dilation
        self.depthwise = nn.Parameter(torch.empty(in_channels, kernel))
        self.pointwise = nn.Parameter(torch.empty(out_channels, in_channels))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        nn.init.uniform_(self.depthwise, -1 / math.sqrt(kernel), 1 / math.sqrt(kernel))
        if zero_init:
            nn.init.zeros_(self.pointwise)
        else:
            nn.init.uniform_(self.pointwise, -1 / math.sqrt(in_channels), 1 / math.sqrt(in_channels))

    def forward(self, x):
        return dws_conv(x, self.depthwise, self.pointwise, self.bias, self.dilation)

    def spec(self) -> ConvSpec:
        return ConvSpec(
            self.depthwise.detach().double().numpy(),
            self.pointwise.detach().double().numpy(),
            self.bias.detach().double().numpy(),
            dilation=self.dilation,
        )


class ResBlock(nn.Module):
    """Residual units ``x + conv(silu(conv_d(silu(x))))``, one per dilation.

    The closing convolution of each unit starts at zero, so a fresh block is
    the identity map.
    """

    def __init__(self, channels: int, kernel: int = 3, dilations: Sequence[int] = (1, 3, 5)):
        super().__init__()
        self.kernel = kernel
        self.dilations = tuple(dilations)
        self.dilated = nn.ModuleList(DWSConv1d(channels, channels, kernel, d) for d in self.dilations)
        self.closing = nn.ModuleList(DWSConv1d(channels, channels, kernel, 1, zero_init=True) for _ in self.dilations)

    def forward(self, x):
        for conv_d, conv_1 in zip(self.dilated, self.closing):
            x = x + conv_1(F.silu(conv_d(F.silu(x))))
        return x


def stack_average(outputs: Sequence[torch.Tensor]) -> torch.Tensor:
    shapes = {tuple(o.shape) for o in outputs}
    if len(shapes) != 1:
        raise RuntimeError(f"ParallelBlock branches disagree on shape: {sorted(shapes)}")
    return torch.stack(list(outputs)).mean(dim=0)


def parallel_block(x, branches: Sequence[Callable]):
    """Run every branch on ``x`` and average the stacked results."""
    t = x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x, dtype=np.float64))
    out = stack_average([branch(t) for branch in branches])
    return out if isinstance(x, torch.Tensor) else out.numpy()


class ParallelBlock(nn.Module):
    def __init__(
        self,
        channels: int,
        kernels: Sequence[int] = (3, 7, 11),
        dilations: Sequence[Sequence[int]] = ((1, 3, 5), (1, 3, 5), (1, 3, 5)),
    ):
        super().__init__()
        if len(kernels) != 3 or len(dilations) != 3:
            raise ConfigError("a ParallelBlock has exactly three ResBlocks")
        self.branches = nn.ModuleList(ResBlock(channels, k, d) for k, d in zip(kernels, dilations))

    def forward(self, x):
        return parallel_block(x, self.branches)


# --- sampling pair ------------------------------------------------------------


def downsampled_length(length: int, hop: int) -> int:
    return -(-length // hop)


def f_down(x, hop: int, weight=None, bias=None):
    """Right-pad to a multiple of ``hop`` and apply a stride-``hop`` convolution.

    ``weight`` is (C, C, hop).  Without weights the kernel is mean pooling.
    Accepts tensors or arrays and returns the same kind.
    """
    if hop < 1:
        raise ConfigError(f"hop must be positive, got {hop}")
    is_tensor = isinstance(x, torch.Tensor)
    t = x if is_tensor else torch.as_tensor(np.asarray(x, dtype=np.float64))
    if t.ndim != 3:
        raise ShapeError(f"expected (B, C, L), got {tuple(t.shape)}")
    b, c, length = t.shape
    pad = downsampled_length(length, hop) * hop - length
    t = F.pad(t, (0, pad))
    if weight is None:
        out = t.reshape(b, c, -1, hop).mean(dim=-1)
    else:
        out = F.conv1d(t, weight, bias, stride=hop)
    return out if is_tensor else out.numpy()


def f_up(x, hop: int, target_len: int, weight=None, bias=None):
    """Stride-``hop`` transposed convolution, truncated to ``target_len``.

    ``weight`` is (C, C, hop).  Without weights every frame is repeated ``hop`` times.
    """
    if hop < 1:
        raise ConfigError(f"hop must be positive, got {hop}")
    is_tensor = isinstance(x, torch.Tensor)
    t = x if is_tensor else torch.as_tensor(np.asarray(x, dtype=np.float64))
    if t.ndim != 3:
        raise ShapeError(f"expected (B, C, L_d), got {tuple(t.shape)}")
    if target_len > hop * t.shape[-1]:
        raise DomainError(f"cannot restore {target_len} frames from {t.shape[-1]} x hop {hop}")
    if weight is None:
        out = torch.repeat_interleave(t, hop, dim=-1)
    else:
        out = F.conv_transpose1d(t, weight, bias, stride=hop)
    out = out[..., :target_len]
    return out if is_tensor else out.numpy()


class Downsample(nn.Module):
    """Learned ``f_down``; starts out equal to mean pooling."""

    def __init__(self, channels: int, hop: int):
        super().__init__()
        self.hop = hop
        self.weight = nn.Parameter(torch.eye(channels)[:, :, None].repeat(1, 1, hop) / hop)
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        return f_down(x, self.hop, self.weight, self.bias)


class Upsample(nn.Module):
    """Learned ``f_up``; starts out equal to frame repetition."""

    def __init__(self, channels: int, hop: int):
        super().__init__()
        self.hop = hop
        self.weight = nn.Parameter(torch.eye(channels)[:, :, None].repeat(1, 1, hop))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x, target_len: int):
        return f_up(x, self.hop, target_len, self.weight, self.bias)


class _Reference(nn.Module):
    def __init__(self, hop: int, up: bool):
        super().__init__()
        self.hop = hop
        self.up = up

    def forward(self, x, target_len: int | None = None):
        return f_up(x, self.hop, target_len) if self.up else f_down(x, self.hop)


# --- codec model --------------------------------------------------------------


@dataclass
class CodecConfig:
    """Architecture of a codec.  ``blocks == 0`` gives identity conv stacks."""

    in_channels: int
    gfsq: GfsqConfig
    hidden_channels: int = 16
    blocks: int = 1
    kernels: tuple[int, ...] = (3, 7, 11)
    dilations: tuple[tuple[int, ...], ...] = ((1, 3, 5), (1, 3, 5), (1, 3, 5))
    sampling: str = "learned"

    def __post_init__(self):
        if self.sampling not in ("learned", "reference"):
            raise ConfigError(f"sampling must be 'learned' or 'reference', got {self.sampling!r}")
        if self.blocks < 0:
            raise ConfigError("blocks must be >= 0")
        if self.blocks == 0 and self.in_channels != self.gfsq.channels:
            raise ConfigError(
                f"identity stacks need in_channels == {self.gfsq.channels}, got {self.in_channels}"
            )
        self.kernels = tuple(self.kernels)
        self.dilations = tuple(tuple(d) for d in self.dilations)

    @property
    def hop(self) -> int:
        return self.gfsq.hop

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "hidden_channels": self.hidden_channels,
            "blocks": self.blocks,
            "kernels": list(self.kernels),
            "dilations": [list(d) for d in self.dilations],
            "sampling": self.sampling,
            "gfsq": self.gfsq.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "CodecConfig":
        d = dict(d)
        try:
            gfsq = GfsqConfig.from_dict(d.pop("gfsq"))
            return cls(gfsq=gfsq, **d)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad codec config: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "CodecConfig":
        return cls.from_dict(json.loads(text))


class CodecModel(nn.Module):
    def __init__(self, config: CodecConfig):
        super().__init__()
        self.config = config
        hidden, latent = config.hidden_channels, config.gfsq.channels
        if config.blocks == 0:
            self.encoder = nn.Identity()
            self.decoder = nn.Identity()
        else:
            pb = lambda: ParallelBlock(hidden, config.kernels, config.dilations)
            self.encoder = nn.Sequential(
                DWSConv1d(config.in_channels, hidden, 7),
                *[pb() for _ in range(config.blocks)],
                nn.SiLU(),
                DWSConv1d(hidden, latent, 3),
            )
            self.decoder = nn.Sequential(
                DWSConv1d(latent, hidden, 3),
                *[pb() for _ in range(config.blocks)],
                nn.SiLU(),
                DWSConv1d(hidden, config.in_channels, 7),
            )
        if config.sampling == "reference":
            self.down = _Reference(config.hop, up=False)
            self.up = _Reference(config.hop, up=True)
        else:
            self.down = Downsample(latent, config.hop)
            self.up = Upsample(latent, config.hop)

    @property
    def dtype(self) -> torch.dtype:
        p = next(self.parameters(), None)
        return p.dtype if p is not None else torch.float64

    def encode_latent(self, x: torch.Tensor) -> torch.Tensor:
        """Encoder stack then ``f_down``: (B, C, L) -> (B, G*d, L_d)."""
        if x.ndim != 3 or x.shape[1] != self.config.in_channels:
            raise ShapeError(f"expected (B, {self.config.in_channels}, L), got {tuple(x.shape)}")
        return self.down(self.encoder(x))

    def decode_latent(self, zq: torch.Tensor, target_len: int) -> torch.Tensor:
        """``f_up`` then the decoder stack."""
        return self.decoder(self.up(zq, target_len))


def codec_encode(x, model: CodecModel) -> CodeGrid:
    t = torch.as_tensor(np.asarray(x)).to(model.dtype)
    with torch.no_grad():
        latent = model.encode_latent(t)
    return gfsq_encode(latent.double().numpy(), model.config.gfsq)


def codec_decode(codes: CodeGrid, model: CodecModel, target_len: int) -> np.ndarray:
    if codes.config != model.config.gfsq:
        raise ShapeError("code grid was produced by a different quantizer config")
    zq = torch.as_tensor(gfsq_decode(codes)).to(model.dtype)
    with torch.no_grad():
        out = model.decode_latent(zq, target_len)
    return out.double().numpy()
