"""Command line interface.

Every command prints one JSON document on stdout; diagnostics go to stderr.

Exit codes:
    0  success
    1  invalid arguments or configuration
    2  input file missing
    3  shape mismatch between input and config
    4  model file unreadable or generation failed
    5  malformed code stream
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import bitstream
from .bench import run_bench
from .dualar import DualArConfig, SamplerSpec, force_eos, generate, init_model
from .errors import ConfigError, FishcoreError, FormatError, ShapeError
from .firefly import CodecConfig, CodecModel, codec_decode, codec_encode
from .gfsq import GfsqConfig, code_entropy, code_histogram, utilization
from .train import TrainConfig, synth_dataset, train_codec, write_curve

log = logging.getLogger("fishcore")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_SHAPE, EXIT_MODEL, EXIT_FORMAT = 0, 1, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise CliError(f"no such file: {path}", EXIT_MISSING) from None


def _read_json(path_or_text: str) -> dict:
    """Parse inline JSON, or read it from a file."""
    text = path_or_text.strip()
    if not text.startswith("{"):
        text = _read_bytes(path_or_text).decode()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"invalid JSON in {path_or_text}: {exc}", EXIT_CONFIG) from None


def sidecar(path) -> Path:
    return Path(str(path) + ".json")


def read_frames(path) -> np.ndarray:
    """Raw little-endian float32 data with a ``<path>.json`` sidecar holding ``{"shape": [...]}``."""
    meta = _read_json(str(sidecar(path))) if sidecar(path).exists() else None
    raw = _read_bytes(path)
    if meta is None:
        raise CliError(f"missing shape sidecar {sidecar(path)}", EXIT_MISSING)
    shape = tuple(int(s) for s in meta["shape"])
    if len(raw) != 4 * int(np.prod(shape)):
        raise CliError(f"{path} holds {len(raw) // 4} floats, sidecar shape {shape} needs {np.prod(shape)}", EXIT_SHAPE)
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


def write_frames(path, data: np.ndarray) -> None:
    Path(path).write_bytes(np.ascontiguousarray(data, dtype="<f4").tobytes())
    sidecar(path).write_text(json.dumps({"shape": list(data.shape)}))


def save_module(path, kind: str, config, module) -> None:
    Path(path).write_bytes(bitstream.save_model(bitstream.module_weights(module)))
    sidecar(path).write_text(json.dumps({"kind": kind, "config": config.to_dict()}, indent=2))


def load_module(path, kind: str):
    raw = _read_bytes(path)
    if not sidecar(path).exists():
        raise CliError(f"missing model sidecar {sidecar(path)}", EXIT_MISSING)
    meta = _read_json(str(sidecar(path)))
    try:
        if meta.get("kind") != kind:
            raise FormatError(f"{path} holds a {meta.get('kind')!r} model, expected {kind!r}")
        if kind == "codec":
            model = CodecModel(CodecConfig.from_dict(meta["config"]))
        else:
            model = init_model(DualArConfig.from_dict(meta["config"]))
        bitstream.load_into(model, bitstream.load_model(raw))
    except (FishcoreError, KeyError) as exc:
        raise CliError(f"cannot load model {path}: {exc}", EXIT_MODEL) from None
    return model.eval()


def _parse_tokens(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise CliError(f"text tokens must be integers, got {text!r}", EXIT_CONFIG) from None


# --- commands -----------------------------------------------------------------


def cmd_synth_data(args):
    data = synth_dataset(args.num, args.length, args.tones, args.seed)
    write_frames(args.out, data)
    return {"path": str(args.out), "shape": list(data.shape)}


def cmd_train(args):
    data = read_frames(args.data)
    if data.ndim != 3:
        raise CliError(f"training data must be (N, C, L), got {data.shape}", EXIT_SHAPE)
    arch = _read_json(args.config) if args.config else {
        "in_channels": data.shape[1], "gfsq": {"groups": 2, "levels": [3, 3], "hop": 4},
    }
    codec_cfg = CodecConfig.from_dict(arch)
    if codec_cfg.in_channels != data.shape[1]:
        raise CliError(f"model expects {codec_cfg.in_channels} channels, data has {data.shape[1]}", EXIT_SHAPE)
    overrides = _read_json(args.train_config) if args.train_config else {}
    overrides.setdefault("seed", args.seed)
    train_cfg = TrainConfig.toy(**overrides)
    torch.manual_seed(train_cfg.seed)
    model = CodecModel(codec_cfg)
    result = train_codec(data, model, train_cfg, steps=args.steps)
    save_module(args.out, "codec", codec_cfg, result.model)
    if args.curve:
        write_curve(result.curve, args.curve)
    return {
        "model": str(args.out),
        "steps": result.curve[-1]["step"] + 1 if result.curve else 0,
        "initial_mse": result.initial_mse,
        "final_mse": result.final_mse,
        "utilization": result.utilization,
    }


def _codec_for(args) -> CodecModel:
    if args.model:
        return load_module(args.model, "codec")
    gfsq = GfsqConfig.from_dict(_read_json(args.config))
    return CodecModel(CodecConfig(in_channels=gfsq.channels, gfsq=gfsq, blocks=0, sampling="reference"))


def cmd_encode(args):
    x = read_frames(args.input)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[0] != 1:
        raise CliError(f"expected one (C, L) signal, got shape {x.shape}", EXIT_SHAPE)
    if args.model is None and args.config is None:
        raise CliError("encode needs --config or --model", EXIT_CONFIG)
    model = _codec_for(args)
    if x.shape[1] != model.config.in_channels:
        raise CliError(f"input has {x.shape[1]} channels, model expects {model.config.in_channels}", EXIT_SHAPE)
    codes = codec_encode(x, model)
    data = bitstream.pack_codes(codes, x.shape[-1])
    Path(args.output).write_bytes(data)
    return {
        "frames": codes.shape[-1],
        "bytes": len(data),
        "compression_ratio": bitstream.compression_ratio(x.shape[1], x.shape[-1], codes),
    }


def _read_stream(path):
    try:
        return bitstream.unpack_codes(_read_bytes(path))
    except FishcoreError as exc:
        raise CliError(f"bad code stream {path}: {exc}", EXIT_FORMAT) from None


def cmd_decode(args):
    codes, original_len = _read_stream(args.input)
    if args.model:
        model = load_module(args.model, "codec")
        if model.config.gfsq != codes.config:
            raise CliError("code stream and model use different quantizer configs", EXIT_SHAPE)
    else:
        g = codes.config
        model = CodecModel(CodecConfig(in_channels=g.channels, gfsq=g, blocks=0, sampling="reference"))
    out = codec_decode(codes, model, original_len)[0]
    write_frames(args.output, out)
    return {"shape": list(out.shape), "frames": codes.shape[-1], "original_len": original_len}


def cmd_init_model(args):
    cfg = DualArConfig.from_dict(_read_json(args.config)) if args.config else DualArConfig()
    model = init_model(cfg, seed=args.seed)
    if args.force_eos:
        force_eos(model)
    save_module(args.out, "dualar", cfg, model)
    return {"model": str(args.out), "parameters": sum(p.numel() for p in model.parameters())}


def _sampler(args) -> SamplerSpec:
    spec = _read_json(args.sampler) if args.sampler else {}
    spec.setdefault("seed", args.seed)
    return SamplerSpec.from_dict(spec)


def cmd_generate(args):
    model = load_module(args.model, "dualar")
    sampler = _sampler(args)
    text = _parse_tokens(args.text)
    start = time.perf_counter()
    frames = 0
    try:
        stream = generate(model, text, sampler, args.max_frames)
        with open(args.output, "w") as fh:
            for frame in stream:
                rec = {"frame": frames, "semantic": frame.semantic, "codes": list(frame.codes)}
                if args.trace:
                    rec["t_ms"] = (time.perf_counter() - start) * 1e3
                fh.write(json.dumps(rec) + "\n")
                fh.flush()
                frames += 1
    except FishcoreError as exc:
        raise CliError(f"generation failed: {exc}", EXIT_MODEL) from None
    return {"frames": frames, "truncated": stream.truncated, "output": str(args.output)}


def cmd_stats(args):
    codes, original_len = _read_stream(args.input)
    hist = code_histogram(codes)
    return {
        "groups": codes.config.groups,
        "codebook_size": int(hist.shape[1]),
        "frames": codes.shape[-1],
        "original_len": original_len,
        "utilization": utilization(codes).tolist(),
        "entropy_bits": code_entropy(codes).tolist(),
        "histogram": {
            "distinct": [int((h > 0).sum()) for h in hist],
            "max_count": [int(h.max()) for h in hist],
            "most_common": [int(h.argmax()) for h in hist],
        },
    }


def cmd_bench(args):
    if args.repeats < 3:
        raise CliError("--repeats must be >= 3", EXIT_CONFIG)
    model = load_module(args.model, "dualar")
    try:
        report = run_bench(model, _parse_tokens(args.text), _sampler(args), args.repeats, args.max_frames)
    except (FishcoreError, RuntimeError) as exc:
        raise CliError(f"benchmark failed: {exc}", EXIT_MODEL) from None
    return report.to_dict()


# --- parser -------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors, which here means "input file missing"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--json", action="store_true", help="accepted for scripts; output is always JSON")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="fishcore", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", parents=[common], help="write a multi-sine dataset")
    p.add_argument("--num", type=int, default=64)
    p.add_argument("--length", type=int, default=256)
    p.add_argument("--tones", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", parents=[common], help="train a toy codec")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="codec architecture JSON (file or inline)")
    p.add_argument("--train-config", help="TrainConfig overrides JSON (file or inline)")
    p.add_argument("--steps", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--curve", help="write the loss curve as CSV")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("encode", cmd_encode, "raw frames -> .ffc"), ("decode", cmd_decode, ".ffc -> raw frames")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("input")
        if name == "encode":
            p.add_argument("--config", help="quantizer JSON {groups, levels, hop}")
        p.add_argument("output")
        p.add_argument("--model", help="trained codec .ffm (default: identity codec)")
        p.set_defaults(func=func)

    p = sub.add_parser("init-model", parents=[common], help="write a randomly initialised Dual-AR model")
    p.add_argument("--config", help="DualArConfig JSON (file or inline)")
    p.add_argument("--force-eos", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_model)

    for name, func in (("generate", cmd_generate), ("bench", cmd_bench)):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("model")
        p.add_argument("--text", required=True, help="comma or space separated token ids")
        p.add_argument("--sampler", help="SamplerSpec JSON (file or inline)")
        p.add_argument("--max-frames", type=int, default=64)
        if name == "generate":
            p.add_argument("--out", dest="output", required=True)
            p.add_argument("--trace", action="store_true", help="add per-frame timestamps")
        else:
            p.add_argument("--repeats", type=int, default=5)
        p.set_defaults(func=func)

    p = sub.add_parser("stats", parents=[common], help="codebook utilization of a .ffc stream")
    p.add_argument("input")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    threads = os.environ.get("FISHCORE_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    try:
        _emit(args.func(args))
    except CliError as exc:
        print(f"fishcore {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except ShapeError as exc:
        print(f"fishcore {args.command}: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except (ConfigError, FishcoreError) as exc:
        print(f"fishcore {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
