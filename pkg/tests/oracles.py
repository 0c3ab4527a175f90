"""Slow, loop-based reference implementations used as test oracles.

Nothing here imports the code under test's numeric paths; each function is
written from the definition, one scalar at a time.
"""

import math
from decimal import ROUND_HALF_UP, Decimal


def fsq_scalar(value, levels):
    """(level_index, grid_value) for one scalar, via the math module."""
    half = (levels - 1) // 2
    y = half * math.tanh(value)
    # decimal's HALF_UP rounds ties away from zero, on the exact binary value
    q = int(Decimal(y).quantize(Decimal(1), rounding=ROUND_HALF_UP))
    return q + half, q / half


def pack_index(digits, levels):
    k, radix = 0, 1
    for d, l in zip(digits, levels):
        k += d * radix
        radix *= l
    return k


def unpack_index(k, levels):
    digits = []
    for l in levels:
        digits.append(k % l)
        k //= l
    return digits


def conv1d_same(signal, kernel, dilation=1):
    """Zero-padded 'same' correlation of one channel."""
    n, k = len(signal), len(kernel)
    pad = dilation * (k - 1) // 2
    out = []
    for i in range(n):
        acc = 0.0
        for j in range(k):
            src = i - pad + j * dilation
            if 0 <= src < n:
                acc += kernel[j] * signal[src]
        out.append(acc)
    return out


def dws_conv_naive(x, depthwise, pointwise, bias, dilation=1):
    """x: list of channels (lists).  Returns list of output channels."""
    mid = [conv1d_same(ch, depthwise[c], dilation) for c, ch in enumerate(x)]
    length = len(x[0])
    return [
        [bias[o] + sum(pointwise[o][c] * mid[c][t] for c in range(len(mid))) for t in range(length)]
        for o in range(len(pointwise))
    ]


def cosine_warmup(step, lr_max, warmup, total, final_ratio):
    lr_min = final_ratio * lr_max
    if step < warmup:
        return lr_max * step / warmup
    frac = (step - warmup) / (total - warmup)
    return lr_min + 0.5 * (lr_max - lr_min) * (1 + math.cos(math.pi * frac))


def adamw_scalar(w, grads, lr, b1=0.9, b2=0.98, eps=1e-8, wd=0.01):
    """Run AdamW on a single scalar over a sequence of gradients."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * wd * w
        w = w - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return w


def pack_bits_lsb(values, width):
    bits = []
    for v in values:
        bits.extend((v >> i) & 1 for i in range(width))
    while len(bits) % 8:
        bits.append(0)
    return bytes(sum(bits[i + j] << j for j in range(8)) for i in range(0, len(bits), 8))
