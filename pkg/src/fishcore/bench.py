"""Real-time factor and first-packet latency measurement for streaming generation."""

from __future__ import annotations

import hashlib
import json
import statistics
import time
from dataclasses import asdict, dataclass

from .dualar import DualAR, SamplerSpec, generate
from .errors import DomainError


@dataclass(frozen=True)
class BenchReport:
    rtf: float
    first_packet_ms: float
    total_ms: float
    ms_per_frame: float
    frames: int
    repeats: int
    fingerprint: str

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RunTiming:
    first_packet_ms: float
    total_ms: float
    frames: int


def time_run(model: DualAR, text, sampler: SamplerSpec, max_frames: int) -> RunTiming:
    """Wall-clock one streaming generation; the clock starts before the prompt is encoded."""
    start = time.perf_counter()
    first = None
    frames = 0
    for _ in generate(model, text, sampler, max_frames):
        if first is None:
            first = time.perf_counter()
        frames += 1
    end = time.perf_counter()
    first = end if first is None else first
    return RunTiming((first - start) * 1e3, (end - start) * 1e3, frames)


def fingerprint(model: DualAR, text, sampler: SamplerSpec, max_frames: int) -> str:
    h = hashlib.sha256()
    h.update(model.config.to_json().encode())
    h.update(json.dumps([list(map(int, text)), sampler.to_dict(), max_frames]).encode())
    for name, t in model.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().float().numpy().tobytes())
    return h.hexdigest()[:16]


def run_bench(model: DualAR, text, sampler: SamplerSpec = SamplerSpec(), repeats: int = 5, max_frames: int = 64) -> BenchReport:
    """Median first-packet latency and per-frame time over ``repeats`` sequential runs.

    ``rtf`` is audio seconds produced per wall second, using the model's
    ``frames_per_second``; ``rtf = 5.0`` reads as "1:5".
    """
    if repeats < 3:
        raise DomainError("repeats must be >= 3")
    runs = [time_run(model, text, sampler, max_frames) for _ in range(repeats)]
    frames = {r.frames for r in runs}
    if len(frames) != 1:
        raise RuntimeError(f"runs produced different frame counts {sorted(frames)}")
    n = frames.pop()
    if n < 1:
        raise RuntimeError("generation produced no frames to time")
    total_ms = statistics.median(r.total_ms for r in runs)
    audio_s = n / model.config.frames_per_second
    return BenchReport(
        rtf=audio_s / (total_ms / 1e3),
        first_packet_ms=statistics.median(r.first_packet_ms for r in runs),
        total_ms=total_ms,
        ms_per_frame=statistics.median(r.total_ms / r.frames for r in runs),
        frames=n,
        repeats=repeats,
        fingerprint=fingerprint(model, text, sampler, max_frames),
    )
