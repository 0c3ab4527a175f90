"""Dual-AR generator: a slow transformer over text/semantic tokens and a fast
transformer over the codebook positions of each frame.

Text and semantic tokens share one embedding table; semantic id ``s`` is
stored at row ``text_vocab + s``.  For every frame the slow stack emits a
semantic token from its last position, then the fast stack runs over
``[h_last; emb(c_1); ...; emb(c_g)]`` to emit the ``G`` codebook indices one
at a time.  Both stacks are pre-norm, causal, rotary-position transformers
with an optional per-layer key/value cache.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass
from typing import Iterator, NamedTuple

import numpy as np
import torch
from torch import nn

from .errors import CapacityError, ConfigError, DataError, DomainError


@dataclass(frozen=True)
class DualArConfig:
    model_dim: int = 32
    slow_layers: int = 2
    fast_layers: int = 1
    heads: int = 2
    text_vocab: int = 32
    semantic_vocab: int = 16
    num_codebooks: int = 2
    codebook_vocab: int = 9
    max_seq: int = 256
    bos_id: int | None = None
    eos_id: int | None = None
    mlp_ratio: int = 2
    rope_base: float = 10000.0
    norm_eps: float = 1e-5
    frames_per_second: float = 21.5

    def __post_init__(self):
        # BOS/EOS default to the top two semantic ids
        if self.bos_id is None:
            object.__setattr__(self, "bos_id", self.semantic_vocab - 2)
        if self.eos_id is None:
            object.__setattr__(self, "eos_id", self.semantic_vocab - 1)
        for name in ("model_dim", "slow_layers", "fast_layers", "heads", "text_vocab",
                     "num_codebooks", "codebook_vocab", "max_seq"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.semantic_vocab < 3:
            raise ConfigError("semantic_vocab must hold at least one token plus BOS and EOS")
        if self.model_dim % self.heads:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.head_dim % 2:
            raise ConfigError(f"rotary embedding needs an even head_dim, got {self.head_dim}")
        if not (0 <= self.eos_id < self.semantic_vocab and 0 <= self.bos_id < self.semantic_vocab):
            raise ConfigError("BOS/EOS ids must lie inside the semantic vocabulary")
        if self.frames_per_second <= 0:
            raise ConfigError("frames_per_second must be positive")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "DualArConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad model config: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "DualArConfig":
        return cls.from_dict(json.loads(text))


class SlowOutput(NamedTuple):
    hidden: torch.Tensor  # (T, D)
    token_logits: torch.Tensor  # (T, V_s)


class FrameCodes(NamedTuple):
    semantic: int
    codes: tuple[int, ...]


# --- KV cache -----------------------------------------------------------------


@dataclass
class StackCache:
    """Key/value buffers (heads, capacity, head_dim) per layer and a fill cursor."""

    keys: list[torch.Tensor]
    values: list[torch.Tensor]
    cursor: int = 0

    @property
    def capacity(self) -> int:
        return self.keys[0].shape[1]

    def reset(self):
        self.cursor = 0


@dataclass
class KvCache:
    slow: StackCache
    fast: StackCache

    @classmethod
    def new(cls, config: DualArConfig, dtype=torch.float32) -> "KvCache":
        def stack(layers, capacity):
            shape = (config.heads, capacity, config.head_dim)
            return StackCache(
                [torch.zeros(shape, dtype=dtype) for _ in range(layers)],
                [torch.zeros(shape, dtype=dtype) for _ in range(layers)],
            )

        return cls(stack(config.slow_layers, config.max_seq), stack(config.fast_layers, config.num_codebooks + 1))


# --- transformer pieces -------------------------------------------------------


def rotary(x: torch.Tensor, positions: torch.Tensor, base: float) -> torch.Tensor:
    """Rotate (heads, T, head_dim) features by their absolute positions."""
    half = x.shape[-1] // 2
    freqs = base ** (-torch.arange(half, dtype=x.dtype) / half)
    angles = positions.to(x.dtype)[:, None] * freqs[None, :]
    cos, sin = torch.cos(angles), torch.sin(angles)
    x1, x2 = x[..., :half], x[..., half:]
    return torch.cat([x1 * cos - x2 * sin, x1 * sin + x2 * cos], dim=-1)


def attention_probs(q: torch.Tensor, k: torch.Tensor, start: int) -> torch.Tensor:
    """Causal softmax weights for queries at absolute positions ``start..``.

    q is (heads, T_q, hd), k is (heads, T_k, hd) covering positions ``0..T_k-1``.
    """
    t_q, t_k = q.shape[1], k.shape[1]
    scores = q @ k.transpose(1, 2) / math.sqrt(q.shape[-1])
    qpos = torch.arange(start, start + t_q)[:, None]
    kpos = torch.arange(t_k)[None, :]
    scores = scores.masked_fill(kpos > qpos, float("-inf"))
    return torch.softmax(scores, dim=-1)


class Attention(nn.Module):
    def __init__(self, config: DualArConfig):
        super().__init__()
        self.heads = config.heads
        self.head_dim = config.head_dim
        self.rope_base = config.rope_base
        self.qkv = nn.Linear(config.model_dim, 3 * config.model_dim, bias=False)
        self.out = nn.Linear(config.model_dim, config.model_dim, bias=False)

    def forward(self, x, start: int, cache: StackCache | None = None, layer: int = 0):
        t = x.shape[0]
        q, k, v = self.qkv(x).view(t, 3, self.heads, self.head_dim).permute(1, 2, 0, 3)
        pos = torch.arange(start, start + t)
        q = rotary(q, pos, self.rope_base)
        k = rotary(k, pos, self.rope_base)
        if cache is not None:
            cache.keys[layer][:, start : start + t] = k
            cache.values[layer][:, start : start + t] = v
            k = cache.keys[layer][:, : start + t]
            v = cache.values[layer][:, : start + t]
        probs = attention_probs(q, k, start)
        y = (probs @ v).transpose(0, 1).reshape(t, -1)
        return self.out(y)


class Block(nn.Module):
    def __init__(self, config: DualArConfig):
        super().__init__()
        d = config.model_dim
        self.attn_norm = nn.LayerNorm(d, eps=config.norm_eps)
        self.attn = Attention(config)
        self.mlp_norm = nn.LayerNorm(d, eps=config.norm_eps)
        self.mlp = nn.Sequential(nn.Linear(d, config.mlp_ratio * d), nn.SiLU(), nn.Linear(config.mlp_ratio * d, d))

    def forward(self, x, start, cache=None, layer=0):
        x = x + self.attn(self.attn_norm(x), start, cache, layer)
        return x + self.mlp(self.mlp_norm(x))


class Stack(nn.Module):
    def __init__(self, config: DualArConfig, layers: int):
        super().__init__()
        self.blocks = nn.ModuleList(Block(config) for _ in range(layers))

    def forward(self, x, start: int = 0, cache: StackCache | None = None):
        if cache is not None:
            if start != cache.cursor:
                raise CapacityError(f"cache cursor at {cache.cursor}, asked to write at {start}")
            if start + x.shape[0] > cache.capacity:
                raise CapacityError(
                    f"KV cache holds {cache.capacity} positions, need {start + x.shape[0]}"
                )
        for i, block in enumerate(self.blocks):
            x = block(x, start, cache, i)
        if cache is not None:
            cache.cursor = start + x.shape[0]
        return x


class DualAR(nn.Module):
    def __init__(self, config: DualArConfig):
        super().__init__()
        self.config = config
        d = config.model_dim
        self.embed = nn.Embedding(config.text_vocab + config.semantic_vocab, d)
        self.slow = Stack(config, config.slow_layers)
        self.slow_norm = nn.LayerNorm(d, eps=config.norm_eps)
        self.token_head = nn.Linear(d, config.semantic_vocab)
        self.codebook_embed = nn.Embedding(config.num_codebooks * config.codebook_vocab, d)
        self.fast_in = nn.Linear(d, d)
        self.fast = Stack(config, config.fast_layers)
        self.fast_norm = nn.LayerNorm(d, eps=config.norm_eps)
        self.codebook_head = nn.Linear(d, config.codebook_vocab)

    @property
    def dtype(self):
        return self.embed.weight.dtype


def slow_forward(model: DualAR, tokens, cache: KvCache | None = None) -> SlowOutput:
    """Run the slow stack.

    Without a cache the whole sequence is processed.  With a cache only the
    positions past ``cache.slow.cursor`` are computed, and the returned rows
    cover just that suffix.
    """
    cfg = model.config
    ids = torch.as_tensor(np.asarray(tokens, dtype=np.int64))
    if ids.ndim != 1 or ids.numel() < 1:
        raise DomainError("slow_forward needs a non-empty 1-D token sequence")
    if ids.min() < 0 or ids.max() >= cfg.text_vocab + cfg.semantic_vocab:
        raise DataError(f"token id out of range [0, {cfg.text_vocab + cfg.semantic_vocab})")
    start = 0
    if cache is not None:
        start = cache.slow.cursor
        if start >= ids.numel():
            raise DomainError(f"cache already covers {start} positions of a {ids.numel()}-token input")
        ids = ids[start:]
    h = model.slow(model.embed(ids), start, cache.slow if cache is not None else None)
    return SlowOutput(h, model.token_head(model.slow_norm(h)))


def fast_forward(model: DualAR, frame_hidden, prefix, cache: KvCache | None = None) -> torch.Tensor:
    """Codebook logits (K,) for position ``len(prefix)`` of the current frame.

    With a cache, positions already held in ``cache.fast`` are reused; call
    ``cache.fast.reset()`` at the start of every frame.
    """
    cfg = model.config
    g = len(prefix)
    if g >= cfg.num_codebooks:
        raise DomainError(f"prefix of {g} codes leaves nothing to predict (G={cfg.num_codebooks})")
    prefix = torch.as_tensor(np.asarray(prefix, dtype=np.int64).reshape(-1))
    if g and (prefix.min() < 0 or prefix.max() >= cfg.codebook_vocab):
        raise DataError(f"codebook index out of range [0, {cfg.codebook_vocab})")
    offsets = torch.arange(g) * cfg.codebook_vocab
    emb = model.fast_in(model.codebook_embed(prefix + offsets))
    seq = torch.cat([torch.as_tensor(frame_hidden).reshape(1, -1).to(model.dtype), emb], dim=0)
    start = 0
    if cache is not None:
        start = cache.fast.cursor
        if start > g:
            raise DomainError(f"fast cache holds {start} positions but the frame has only {g + 1}")
        seq = seq[start:]
    h = model.fast(seq, start, cache.fast if cache is not None else None)
    return model.codebook_head(model.fast_norm(h[-1]))


# --- sampling -----------------------------------------------------------------


@dataclass(frozen=True)
class SamplerSpec:
    mode: str = "greedy"
    k: int = 1
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("greedy", "top_k"):
            raise ConfigError(f"unknown sampler mode {self.mode!r}")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.mode == "top_k" and not self.temperature > 0:
            raise ConfigError("temperature must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerSpec":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad sampler spec: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)


def sample(logits, spec: SamplerSpec, rng: np.random.Generator | None = None) -> int:
    """Pick one index.  Ties always resolve to the lowest index."""
    if isinstance(logits, torch.Tensor):
        logits = logits.detach().double().numpy()
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    if np.isnan(z).any() or np.isposinf(z).any():
        raise DomainError("logits contain NaN or +inf")
    if np.isneginf(z).all():
        raise DomainError("every logit is -inf")
    if spec.mode == "greedy" or spec.k == 1:
        return int(np.argmax(z))
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    top = np.argsort(-z, kind="stable")[: spec.k]
    scaled = z[top] / spec.temperature
    p = np.exp(scaled - scaled.max())
    p /= p.sum()
    return int(top[rng.choice(len(top), p=p)])


# --- streaming generation -----------------------------------------------------


class GenerationStream:
    """Iterator over generated :class:`FrameCodes`.

    Each frame is handed to the consumer as soon as its last codebook index is
    sampled.  After exhaustion ``truncated`` tells whether ``max_frames`` was
    hit before EOS.
    """

    def __init__(self, frames: Iterator[FrameCodes]):
        self._frames = frames
        self.truncated = False
        self.count = 0

    def __iter__(self):
        return self

    def __next__(self) -> FrameCodes:
        try:
            frame = next(self._frames)
        except StopIteration as stop:
            self.truncated = bool(stop.value)
            raise StopIteration from None
        self.count += 1
        return frame


def _log(events, name, frame):
    if events is not None:
        events.append((name, frame, time.perf_counter_ns()))


def _generate(model, seq, sampler, max_frames, use_cache, events):
    cfg = model.config
    rng = np.random.default_rng(sampler.seed)
    cache = KvCache.new(cfg, model.dtype) if use_cache else None
    with torch.no_grad():
        out = slow_forward(model, seq, cache)
        for frame in range(max_frames):
            _log(events, "frame_start", frame)
            semantic = sample(out.token_logits[-1], sampler, rng)
            if semantic == cfg.eos_id:
                _log(events, "eos", frame)
                return False
            hidden = out.hidden[-1]
            codes: list[int] = []
            if cache is not None:
                cache.fast.reset()
            for _ in range(cfg.num_codebooks):
                codes.append(sample(fast_forward(model, hidden, codes, cache), sampler, rng))
            _log(events, "frame_done", frame)
            yield FrameCodes(semantic, tuple(codes))
            if frame + 1 < max_frames:
                seq.append(cfg.text_vocab + semantic)
                out = slow_forward(model, seq, cache)
    return True


def generate(
    model: DualAR,
    text,
    sampler: SamplerSpec = SamplerSpec(),
    max_frames: int = 64,
    *,
    use_cache: bool = True,
    events: list | None = None,
) -> GenerationStream:
    """Stream frames for ``text`` (integer ids below ``text_vocab``).

    ``use_cache=False`` recomputes every prefix from scratch; it exists as the
    reference path for cache-equivalence checks.  If ``events`` is a list,
    ``(name, frame, perf_counter_ns)`` tuples are appended as work happens.
    """
    cfg = model.config
    if max_frames < 1:
        raise DomainError("max_frames must be >= 1")
    seq = [int(t) for t in np.asarray(text).reshape(-1)]
    if not seq:
        raise DomainError("text must contain at least one token")
    if max(seq) >= cfg.text_vocab or min(seq) < 0:
        raise DataError(f"text token out of range [0, {cfg.text_vocab})")
    seq.append(cfg.text_vocab + cfg.bos_id)
    return GenerationStream(_generate(model, seq, sampler, max_frames, use_cache, events))


def init_model(config: DualArConfig, seed: int = 0, dtype=torch.float32) -> DualAR:
    torch.manual_seed(seed)
    return DualAR(config).to(dtype).eval()


def force_eos(model: DualAR, margin: float = 1e4) -> DualAR:
    """Bias the token head so that EOS always wins; used for empty-stream checks."""
    with torch.no_grad():
        model.token_head.bias[model.config.eos_id] += margin
    return model
