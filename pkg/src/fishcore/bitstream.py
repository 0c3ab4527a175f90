"""Binary formats: ``.ffc`` code streams and ``.ffm`` model weight files.

Code stream (all integers little-endian)::

    magic "FFC1" | version u8 = 1 | groups u8 | hop u16 | dims_per_group u8
    | levels u8 x dims_per_group | original_len u32 | frame_count u32 | payload

The payload stores ``frame_count x groups`` indices, frame-major and
group-minor, each in ``ceil(log2(codebook_size))`` bits, least significant
bit first within each byte.  Padding bits of the final byte are zero.  One
stream carries one batch item.

Model file::

    magic "FFM1" | version u8 = 1 | record_count u32
    | per record: name_len u16 | name utf-8 | dtype u8 (0 = float32)
                  | rank u8 | dims u32 x rank | payload float32 x prod(dims)
"""

from __future__ import annotations

import math
import struct
from typing import Mapping

import numpy as np

from .errors import DataError, FormatError, LengthError, ShapeError
from .gfsq import CodeGrid, GfsqConfig, codebook_size

CODE_MAGIC = b"FFC1"
MODEL_MAGIC = b"FFM1"
VERSION = 1
DTYPE_F32 = 0


def bits_per_index(config: GfsqConfig) -> int:
    return max(1, (codebook_size(config) - 1).bit_length())


def header_size(dims_per_group: int) -> int:
    return 4 + 1 + 1 + 2 + 1 + dims_per_group + 4 + 4


def payload_bits(codes: CodeGrid) -> int:
    b, g, frames = codes.shape
    return b * g * frames * bits_per_index(codes.config)


def compression_ratio(channels: int, length: int, codes: CodeGrid) -> float:
    """32-bit float input bits over payload bits."""
    return 32 * channels * length / payload_bits(codes)


def _pack_bits(values: np.ndarray, width: int) -> bytes:
    bits = (values[:, None] >> np.arange(width)) & 1
    return np.packbits(bits.astype(np.uint8).reshape(-1), bitorder="little").tobytes()


def _unpack_bits(data: bytes, count: int, width: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    if bits[count * width :].any():
        raise FormatError("non-zero padding bits after the last index")
    bits = bits[: count * width].reshape(count, width).astype(np.int64)
    return (bits << np.arange(width)).sum(axis=1)


def pack_codes(codes: CodeGrid, original_len: int) -> bytes:
    config = codes.config
    b, g, frames = codes.shape
    if b != 1:
        raise ShapeError(f"a code stream holds one batch item, got B={b}")
    if frames != -(-original_len // config.hop):
        raise ShapeError(f"{frames} frames do not match original_len {original_len} at hop {config.hop}")
    if g > 255 or config.dims_per_group > 255 or config.hop > 0xFFFF or max(config.levels) > 255:
        raise ShapeError("config does not fit the header field widths")
    if not 0 <= original_len <= 0xFFFFFFFF:
        raise ShapeError("original_len does not fit in u32")
    header = (
        CODE_MAGIC
        + struct.pack("<BBHB", VERSION, g, config.hop, config.dims_per_group)
        + bytes(config.levels)
        + struct.pack("<II", original_len, frames)
    )
    ordered = codes.indices[0].T.reshape(-1)  # frame-major, group-minor
    return header + _pack_bits(ordered, bits_per_index(config))


def unpack_codes(data: bytes) -> tuple[CodeGrid, int]:
    """Parse a code stream; returns ``(codes, original_len)``."""
    data = bytes(data)
    if data[:4] != CODE_MAGIC:
        raise FormatError("not a code stream (bad magic)")
    if len(data) < 9:
        raise LengthError("code stream header is truncated")
    version, groups, hop, dpg = struct.unpack_from("<BBHB", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported code stream version {version}")
    if len(data) < header_size(dpg):
        raise LengthError("code stream header is truncated")
    levels = tuple(data[9 : 9 + dpg])
    original_len, frames = struct.unpack_from("<II", data, 9 + dpg)
    try:
        config = GfsqConfig(groups=groups, levels=levels, hop=hop)
    except Exception as exc:
        raise FormatError(f"invalid quantizer header: {exc}") from exc
    if frames != -(-original_len // hop):
        raise FormatError(f"frame_count {frames} inconsistent with original_len {original_len}, hop {hop}")
    width = bits_per_index(config)
    count = frames * groups
    payload = data[header_size(dpg) :]
    expected = -(-count * width // 8)
    if len(payload) != expected:
        raise LengthError(f"payload is {len(payload)} bytes, header implies {expected}")
    values = _unpack_bits(payload, count, width)
    if values.size and values.max() >= codebook_size(config):
        raise DataError("unpacked index exceeds the codebook size")
    indices = values.reshape(frames, groups).T[None]
    return CodeGrid(indices, config), original_len


# --- model files --------------------------------------------------------------


def save_model(weights: Mapping[str, np.ndarray]) -> bytes:
    out = [MODEL_MAGIC, struct.pack("<BI", VERSION, len(weights))]
    for name, arr in weights.items():
        a = np.asarray(arr)
        if not np.all(np.isfinite(a)):
            raise DataError(f"weight {name!r} has non-finite values")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or a.ndim > 255:
            raise FormatError(f"weight {name!r} does not fit the record header")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack(f"<BB{a.ndim}I", DTYPE_F32, a.ndim, *a.shape))
        out.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return b"".join(out)


def load_model(data: bytes) -> dict[str, np.ndarray]:
    data = bytes(data)
    if len(data) < 9 or data[:4] != MODEL_MAGIC:
        raise FormatError("not a model file (bad magic)")
    version, count = struct.unpack_from("<BI", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported model file version {version}")
    pos = 9
    weights: dict[str, np.ndarray] = {}

    def need(n, what):
        if pos + n > len(data):
            raise LengthError(f"model file truncated in {what}")

    for i in range(count):
        need(2, f"record {i} name length")
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        need(name_len, f"record {i} name")
        try:
            name = data[pos : pos + name_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"record {i} name is not utf-8") from exc
        pos += name_len
        if name in weights:
            raise FormatError(f"duplicate weight name {name!r}")
        need(2, f"record {name!r} header")
        dtype, rank = struct.unpack_from("<BB", data, pos)
        pos += 2
        if dtype != DTYPE_F32:
            raise FormatError(f"record {name!r} has unsupported dtype tag {dtype}")
        need(4 * rank, f"record {name!r} shape")
        shape = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        nbytes = 4 * math.prod(shape)
        if pos + nbytes > len(data):
            raise LengthError(
                f"record {name!r} declares {nbytes} payload bytes, only {len(data) - pos} remain"
            )
        arr = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=pos).reshape(shape).astype(np.float32)
        pos += nbytes
        if not np.all(np.isfinite(arr)):
            raise DataError(f"record {name!r} contains non-finite values")
        weights[name] = arr
    if pos != len(data):
        raise LengthError(f"{len(data) - pos} trailing bytes after the last record")
    return weights


def module_weights(module) -> dict[str, np.ndarray]:
    """float32 arrays of a torch module's state dict."""
    return {k: v.detach().cpu().float().numpy() for k, v in module.state_dict().items()}


def load_into(module, weights: Mapping[str, np.ndarray]):
    """Copy ``weights`` into a torch module, requiring an exact key and shape match."""
    import torch

    state = module.state_dict()
    missing = set(state) - set(weights)
    extra = set(weights) - set(state)
    if missing or extra:
        raise FormatError(f"weight names mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for k, v in weights.items():
        if tuple(state[k].shape) != v.shape:
            raise FormatError(f"weight {k!r} has shape {v.shape}, model expects {tuple(state[k].shape)}")
    module.load_state_dict({k: torch.as_tensor(v).to(state[k].dtype) for k, v in weights.items()})
    return module
