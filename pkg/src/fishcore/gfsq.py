"""Grouped finite scalar quantization (GFSQ) and an RVQ baseline.

Every latent dimension is bounded with ``tanh``, scaled onto an odd number of
integer levels and rounded.  Channels are split into contiguous groups; the
per-dimension level indices of one group are packed into a single integer
with a mixed radix (dimension 0 least significant).  The codebook is
implicit, so decoding is an exact arithmetic inverse of the packing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, DomainError, ShapeError


@dataclass(frozen=True)
class GfsqConfig:
    groups: int
    levels: tuple[int, ...]
    hop: int = 1

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(l) for l in self.levels))
        if int(self.groups) < 1:
            raise ConfigError(f"groups must be positive, got {self.groups}")
        if int(self.hop) < 1:
            raise ConfigError(f"hop must be positive, got {self.hop}")
        if not self.levels:
            raise ConfigError("levels must not be empty")
        for l in self.levels:
            _check_levels(l)

    @property
    def dims_per_group(self) -> int:
        return len(self.levels)

    @property
    def channels(self) -> int:
        """Channel count of a latent accepted by :func:`gfsq_encode`."""
        return self.groups * self.dims_per_group

    def to_dict(self) -> dict:
        return {"groups": self.groups, "levels": list(self.levels), "hop": self.hop}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "GfsqConfig":
        try:
            return cls(groups=int(d["groups"]), levels=tuple(d["levels"]), hop=int(d.get("hop", 1)))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad quantizer config: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "GfsqConfig":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class CodeGrid:
    """Integer code indices of shape (B, G, L_d) plus the config that reads them."""

    indices: np.ndarray
    config: GfsqConfig

    def __post_init__(self):
        idx = np.asarray(self.indices)
        if idx.ndim != 3 or idx.shape[1] != self.config.groups:
            raise ShapeError(
                f"code grid must be (B, {self.config.groups}, L_d), got {idx.shape}"
            )
        if idx.size and not np.issubdtype(idx.dtype, np.integer):
            raise DataError(f"code indices must be integers, got {idx.dtype}")
        idx = idx.astype(np.int64, copy=True)
        k = codebook_size(self.config)
        if idx.size and (idx.min() < 0 or idx.max() >= k):
            raise DataError(f"code index out of range [0, {k})")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.indices.shape

    def __eq__(self, other):
        if not isinstance(other, CodeGrid):
            return NotImplemented
        return self.config == other.config and np.array_equal(self.indices, other.indices)

    __hash__ = None


def _check_levels(levels: int) -> None:
    if int(levels) != levels or levels < 3 or levels % 2 == 0:
        raise ConfigError(f"level counts must be odd and >= 3, got {levels}")


def codebook_size(config: GfsqConfig) -> int:
    return math.prod(config.levels)


def round_half_away(x):
    """Round to nearest integer, ties away from zero (numpy's ``round`` is half-to-even)."""
    # x - trunc(x) is exact; floor(|x| + 0.5) is not, since the sum can round up
    x = np.asarray(x, dtype=np.float64)
    whole = np.trunc(x)
    return whole + np.sign(x) * (np.abs(x - whole) >= 0.5)


def fsq_quantize_dim(value: float, levels: int) -> tuple[int, float]:
    """Quantize one scalar onto ``levels`` points in [-1, 1].

    Returns ``(level_index, quantized_value)``.
    """
    _check_levels(levels)
    if not math.isfinite(value):
        raise DomainError(f"cannot quantize non-finite value {value!r}")
    half = (levels - 1) // 2
    q = int(round_half_away(half * np.tanh(value)))
    return q + half, q / half


def _half_widths(config: GfsqConfig) -> np.ndarray:
    return (np.asarray(config.levels, dtype=np.int64) - 1) // 2


def _radices(config: GfsqConfig) -> np.ndarray:
    return np.concatenate([[1], np.cumprod(config.levels[:-1], dtype=np.int64)]).astype(np.int64)


def _check_latent(latent, config: GfsqConfig) -> np.ndarray:
    z = np.asarray(latent, dtype=np.float64)
    if z.ndim != 3:
        raise ShapeError(f"expected a (B, C, L) tensor, got shape {z.shape}")
    if z.shape[1] != config.channels:
        raise ShapeError(
            f"latent has {z.shape[1]} channels, quantizer expects "
            f"{config.groups} x {config.dims_per_group} = {config.channels}"
        )
    if not np.all(np.isfinite(z)):
        raise DomainError("latent contains non-finite values")
    return z


def _level_offsets(z: np.ndarray, config: GfsqConfig) -> np.ndarray:
    """Signed integer level per scalar, shape (B, G, d, L)."""
    b, _, length = z.shape
    grouped = z.reshape(b, config.groups, config.dims_per_group, length)
    half = _half_widths(config)[None, None, :, None]
    return round_half_away(half * np.tanh(grouped)).astype(np.int64)


def grid_quantize(latent, config: GfsqConfig) -> np.ndarray:
    """Snap every scalar of a (B, C, L) latent to its grid value in [-1, 1]."""
    z = _check_latent(latent, config)
    q = _level_offsets(z, config)
    half = _half_widths(config)[None, None, :, None]
    return (q / half).reshape(z.shape)


def _pack(offsets: np.ndarray, config: GfsqConfig) -> CodeGrid:
    digits = offsets + _half_widths(config)[None, None, :, None]
    radix = _radices(config)[None, None, :, None]
    return CodeGrid((digits * radix).sum(axis=2), config)


def gfsq_encode(latent, config: GfsqConfig) -> CodeGrid:
    """Quantize a (B, G*d, L) latent and pack each group's levels into one index."""
    z = _check_latent(latent, config)
    return _pack(_level_offsets(z, config), config)


def grid_to_indices(values, config: GfsqConfig) -> CodeGrid:
    """Index generation for values already on the grid; the exact inverse of :func:`gfsq_decode`.

    No ``tanh`` is applied here: re-bounding a grid value would move it to a
    lower level once a dimension has 7 or more levels.
    """
    v = _check_latent(values, config)
    b, _, length = v.shape
    half = _half_widths(config)[None, None, :, None]
    scaled = v.reshape(b, config.groups, config.dims_per_group, length) * half
    # on-grid inputs are within 1e-9 of an integer, so tie handling never matters here
    q = np.rint(scaled)
    if np.any(np.abs(scaled - q) > 1e-9) or np.any(np.abs(q) > half):
        raise DataError("values are not points of the quantization grid")
    return _pack(q.astype(np.int64), config)


def gfsq_decode(codes: CodeGrid) -> np.ndarray:
    config = codes.config
    # int32 division is about twice as fast and suffices for most codebooks
    dtype = np.int32 if codebook_size(config) <= 2**31 else np.int64
    k = codes.indices[:, :, None, :].astype(dtype)
    levels = np.asarray(config.levels, dtype=dtype)[None, None, :, None]
    digits = (k // _radices(config).astype(dtype)[None, None, :, None]) % levels
    half = _half_widths(config)[None, None, :, None]
    values = (digits - half) / half
    b, g, d, length = values.shape
    return values.reshape(b, g * d, length)


def utilization(codes: CodeGrid) -> np.ndarray:
    """Fraction of each group's codebook that appears at least once."""
    if codes.indices.size == 0:
        raise DomainError("utilization of an empty code grid is undefined")
    k = codebook_size(codes.config)
    return np.array(
        [np.unique(codes.indices[:, g, :]).size / k for g in range(codes.config.groups)]
    )


def code_histogram(codes: CodeGrid) -> np.ndarray:
    """Index counts per group, shape (G, codebook_size)."""
    k = codebook_size(codes.config)
    return np.stack(
        [np.bincount(codes.indices[:, g, :].ravel(), minlength=k) for g in range(codes.config.groups)]
    )


def code_entropy(codes: CodeGrid) -> np.ndarray:
    """Empirical entropy in bits of each group's index distribution."""
    if codes.indices.size == 0:
        raise DomainError("entropy of an empty code grid is undefined")
    hist = code_histogram(codes).astype(np.float64)
    p = hist / hist.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log2(p), 0.0)
    return terms.sum(axis=1) + 0.0


# --- residual vector quantization (ablation baseline) -------------------------


@dataclass(frozen=True)
class RvqConfig:
    codebooks: np.ndarray = field(repr=False)

    def __post_init__(self):
        cb = np.asarray(self.codebooks, dtype=np.float64)
        if cb.ndim != 3 or cb.shape[0] < 1 or cb.shape[1] < 1 or cb.shape[2] < 1:
            raise ConfigError(f"codebooks must be (stages, codewords, dim), got {cb.shape}")
        if not np.all(np.isfinite(cb)):
            raise ConfigError("codebook entries must be finite")
        cb.setflags(write=False)
        object.__setattr__(self, "codebooks", cb)

    @property
    def stages(self) -> int:
        return self.codebooks.shape[0]

    @property
    def codewords_per_stage(self) -> int:
        return self.codebooks.shape[1]

    @property
    def dim(self) -> int:
        return self.codebooks.shape[2]

    @classmethod
    def random(cls, stages: int, codewords: int, dim: int, seed: int = 0, scale: float = 1.0):
        """Gaussian codebooks shrinking by half per stage.

        Codeword 0 of every stage is the zero vector, so adding a stage can
        never increase any vector's reconstruction error.
        """
        rng = np.random.default_rng(seed)
        decay = 0.5 ** np.arange(stages)[:, None, None]
        books = scale * decay * rng.standard_normal((stages, codewords, dim))
        books[:, 0, :] = 0.0
        return cls(books)


def _check_vectors(vectors, config: RvqConfig) -> np.ndarray:
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim == 1 and config.dim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] != config.dim:
        raise ShapeError(f"expected (N, {config.dim}) vectors, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError("vectors contain non-finite values")
    return x


def rvq_encode(vectors, config: RvqConfig) -> np.ndarray:
    """Greedy residual quantization; returns (N, stages) indices.

    Ties go to the lowest codeword index (``argmin`` returns the first minimum).
    """
    residual = _check_vectors(vectors, config).copy()
    out = np.empty((residual.shape[0], config.stages), dtype=np.int64)
    for s, book in enumerate(config.codebooks):
        dist = ((residual[:, None, :] - book[None, :, :]) ** 2).sum(axis=-1)
        out[:, s] = np.argmin(dist, axis=1)
        residual -= book[out[:, s]]
    return out


def rvq_decode(indices, config: RvqConfig, stages: int | None = None) -> np.ndarray:
    """Sum the selected codewords of the first ``stages`` stages (default: all)."""
    idx = np.asarray(indices)
    if idx.ndim != 2 or idx.shape[1] != config.stages:
        raise ShapeError(f"expected (N, {config.stages}) indices, got {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= config.codewords_per_stage):
        raise DataError("codeword index out of range")
    n = config.stages if stages is None else stages
    if not 0 <= n <= config.stages:
        raise DomainError(f"stages must be in [0, {config.stages}], got {n}")
    out = np.zeros((idx.shape[0], config.dim))
    for s in range(n):
        out += config.codebooks[s][idx[:, s]]
    return out

