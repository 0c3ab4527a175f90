"""
Code streams on disk
====================

Pack a code grid into the compact binary stream format and read it back.
"""

import numpy as np

from fishcore import CodeGrid, GfsqConfig
from fishcore.bitstream import bits_per_index, compression_ratio, header_size, pack_codes, unpack_codes

cfg = GfsqConfig(groups=2, levels=[3, 5, 5], hop=4)
length = 1000
frames = -(-length // cfg.hop)

rng = np.random.default_rng(0)
codes = CodeGrid(rng.integers(0, 75, size=(1, cfg.groups, frames)), cfg)

data = pack_codes(codes, original_len=length)
print("bits per index:", bits_per_index(cfg))
print("header bytes:", header_size(cfg.dims_per_group), " total bytes:", len(data))
print("compression vs float32 samples:", round(compression_ratio(1, length, codes), 1))

back, n = unpack_codes(data)
print("round trip exact:", back == codes and n == length)

# damaged streams are rejected with a specific error
for label, bad in [("bad magic", b"X" + data[1:]), ("truncated", data[:-3])]:
    try:
        unpack_codes(bad)
    except ValueError as exc:
        print(f"{label}: {type(exc).__name__}: {exc}")
