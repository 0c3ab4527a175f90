import struct

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from fishcore.bitstream import (
    bits_per_index,
    compression_ratio,
    header_size,
    load_into,
    load_model,
    module_weights,
    pack_codes,
    save_model,
    unpack_codes,
)
from fishcore.errors import DataError, FishcoreError, FormatError, LengthError, ShapeError
from fishcore.gfsq import CodeGrid, GfsqConfig, codebook_size

from oracles import pack_bits_lsb


def grid(indices, groups, levels, hop=1):
    return CodeGrid(np.asarray(indices).reshape(1, groups, -1), GfsqConfig(groups, levels, hop))


class TestCodeStream:
    def test_widths(self):
        assert bits_per_index(GfsqConfig(1, [3, 5, 5])) == 7
        assert bits_per_index(GfsqConfig(1, [3])) == 2
        assert bits_per_index(GfsqConfig(1, [3, 3])) == 4
        assert header_size(2) == 19
        assert header_size(3) == 20

    def test_single_frame_size(self):
        data = pack_codes(grid([10, 74], 2, [3, 5, 5]), original_len=1)
        assert len(data) == header_size(3) + 2

    def test_header_layout(self):
        data = pack_codes(grid([0, 1, 2, 3, 4, 5], 2, [3, 5], hop=4), original_len=10)
        assert data[:4] == b"FFC1"
        assert struct.unpack("<BBHB", data[4:9]) == (1, 2, 4, 2)
        assert tuple(data[9:11]) == (3, 5)
        assert struct.unpack("<II", data[11:19]) == (10, 3)

    def test_payload_matches_oracle(self):
        rng = np.random.default_rng(0)
        idx = rng.integers(0, 75, size=(1, 3, 11))
        data = pack_codes(CodeGrid(idx, GfsqConfig(3, [3, 5, 5])), 11)
        # frame-major, group-minor
        order = idx[0].T.reshape(-1).tolist()
        assert data[20:] == pack_bits_lsb(order, 7)

    def test_round_trip(self):
        codes = grid(np.arange(24) % 9, 3, [3, 3], hop=2)
        out, length = unpack_codes(pack_codes(codes, 15))
        assert out == codes
        assert length == 15

    @settings(max_examples=100)
    @given(st.lists(st.sampled_from([3, 5, 7, 9]), min_size=1, max_size=3), st.integers(1, 4), st.integers(1, 5),
           st.integers(1, 40), st.data())
    def test_round_trip_property(self, levels, groups, hop, length, data):
        cfg = GfsqConfig(groups, levels, hop)
        frames = -(-length // hop)
        idx = data.draw(st.lists(st.integers(0, codebook_size(cfg) - 1), min_size=groups * frames, max_size=groups * frames))
        codes = CodeGrid(np.array(idx).reshape(1, groups, frames), cfg)
        out, n = unpack_codes(pack_codes(codes, length))
        assert out == codes and n == length

    def test_compression_ratio(self):
        codes = grid(np.zeros(2 * 25, dtype=int), 2, [3, 3], hop=4)
        assert compression_ratio(1, 100, codes) == pytest.approx(32 * 100 / (50 * 4))

    def test_batch_rejected(self):
        codes = CodeGrid(np.zeros((2, 1, 3), dtype=int), GfsqConfig(1, [3]))
        with pytest.raises(ShapeError):
            pack_codes(codes, 3)

    def test_frame_count_mismatch(self):
        with pytest.raises(ShapeError):
            pack_codes(grid([0, 0, 0], 1, [3], hop=2), original_len=3)

    def test_bad_magic(self):
        data = bytearray(pack_codes(grid([1, 2], 1, [3]), 2))
        data[0] = ord("X")
        with pytest.raises(FormatError):
            unpack_codes(bytes(data))

    def test_bad_version(self):
        data = bytearray(pack_codes(grid([1, 2], 1, [3]), 2))
        data[4] = 2
        with pytest.raises(FormatError):
            unpack_codes(bytes(data))

    def test_truncated_payload(self):
        data = pack_codes(grid(np.arange(8) % 9, 1, [3, 3]), 8)
        with pytest.raises(LengthError):
            unpack_codes(data[:-1])

    def test_trailing_payload(self):
        data = pack_codes(grid([1, 2], 1, [3]), 2)
        with pytest.raises(LengthError):
            unpack_codes(data + b"\x00")

    def test_truncated_header(self):
        with pytest.raises(LengthError):
            unpack_codes(b"FFC1\x01\x01")

    def test_out_of_range_index(self):
        # K = 5 uses 3 bits, so 7 is representable but invalid
        header = b"FFC1" + struct.pack("<BBHB", 1, 1, 1, 1) + bytes([5]) + struct.pack("<II", 1, 1)
        with pytest.raises(DataError):
            unpack_codes(header + bytes([7]))

    def test_nonzero_padding(self):
        data = bytearray(pack_codes(grid([1], 1, [3]), 1))
        data[-1] |= 0x80
        with pytest.raises(FormatError):
            unpack_codes(bytes(data))

    def test_even_level_in_header(self):
        header = b"FFC1" + struct.pack("<BBHB", 1, 1, 1, 1) + bytes([4]) + struct.pack("<II", 1, 1)
        with pytest.raises(FormatError):
            unpack_codes(header + b"\x00")

    def test_fuzz_never_crashes(self):
        rng = np.random.default_rng(1234)
        base = pack_codes(CodeGrid(rng.integers(0, 75, (1, 2, 13)), GfsqConfig(2, [3, 5, 5], hop=3)), 38)
        outcomes = {"ok": 0, "rejected": 0}
        for _ in range(1000):
            data = bytearray(base)
            op = rng.integers(3)
            if op == 0:
                for pos in rng.integers(0, len(data), rng.integers(1, 4)):
                    data[pos] = rng.integers(256)
            elif op == 1:
                data = data[: rng.integers(0, len(data))]
            else:
                data += bytes(rng.integers(0, 256, rng.integers(1, 5)).tolist())
            try:
                codes, length = unpack_codes(bytes(data))
            except FishcoreError:
                outcomes["rejected"] += 1
                continue
            outcomes["ok"] += 1
            assert codes.indices.max(initial=0) < codebook_size(codes.config)
            assert codes.shape[2] == -(-length // codes.config.hop)
        assert outcomes["rejected"] > 0


class TestModelFile:
    def weights(self):
        rng = np.random.default_rng(0)
        return {
            "enc.w": rng.normal(size=(3, 4)).astype(np.float32),
            "enc.b": rng.normal(size=(3,)).astype(np.float32),
            "scalar": np.array(1.5, dtype=np.float32),
        }

    def test_round_trip_bytes(self):
        data = save_model(self.weights())
        loaded = load_model(data)
        assert list(loaded) == ["enc.w", "enc.b", "scalar"]
        for k, v in self.weights().items():
            assert np.array_equal(loaded[k], v)
        assert save_model(loaded) == data

    def test_empty(self):
        data = save_model({})
        assert data == b"FFM1\x01" + struct.pack("<I", 0)
        assert load_model(data) == {}

    def test_truncated_record_is_named(self):
        data = save_model(self.weights())
        with pytest.raises(LengthError, match="scalar"):
            load_model(data[:-2])

    def test_trailing_bytes(self):
        with pytest.raises(LengthError):
            load_model(save_model(self.weights()) + b"\x00")

    def test_duplicate_names(self):
        rec = save_model({"a": np.zeros(1, np.float32)})[9:]
        data = b"FFM1\x01" + struct.pack("<I", 2) + rec + rec
        with pytest.raises(FormatError):
            load_model(data)

    def test_nan_rejected(self):
        with pytest.raises(DataError):
            save_model({"a": np.array([np.nan], np.float32)})
        data = bytearray(save_model({"a": np.zeros(1, np.float32)}))
        data[-4:] = struct.pack("<f", float("nan"))
        with pytest.raises(DataError):
            load_model(bytes(data))

    def test_bad_magic(self):
        with pytest.raises(FormatError):
            load_model(b"NOPE\x01\x00\x00\x00\x00")

    def test_module_round_trip(self):
        torch.manual_seed(0)
        a = torch.nn.Linear(3, 2)
        b = torch.nn.Linear(3, 2)
        load_into(b, load_model(save_model(module_weights(a))))
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_module_shape_mismatch(self):
        with pytest.raises(FormatError, match="weight"):
            load_into(torch.nn.Linear(3, 2), module_weights(torch.nn.Linear(4, 2)))
