"""
Training a toy codec
====================

Fit a small depthwise-separable codec on multi-sine signals, with the
quantizer in the loop through a straight-through estimator.
"""

import numpy as np
import torch

from fishcore import GfsqConfig
from fishcore.firefly import CodecConfig, CodecModel, codec_decode, codec_encode
from fishcore.train import TrainConfig, lr_at, synth_dataset, train_codec

data = synth_dataset(num_signals=32, length=128, num_tones=3, seed=0)
print("dataset:", data.shape, "peak", np.abs(data).max())

torch.manual_seed(0)
cfg = CodecConfig(in_channels=1, gfsq=GfsqConfig(2, [3, 3], hop=4), hidden_channels=16, blocks=1)
model = CodecModel(cfg)

# warmup then cosine decay; a short run uses a short schedule
train_cfg = TrainConfig.toy(total_steps=400, warmup_steps=40, log_every=100)
print("lr at steps 0, 40, 399:", [round(lr_at(s, train_cfg), 6) for s in (0, 40, 399)])

result = train_codec(data, model, train_cfg)
for row in result.curve:
    print("step {step:4d}  lr {lr:.5f}  loss {loss:.4f}  utilization {utilization:.2f}".format(**row))
print(f"mse {result.initial_mse:.4f} -> {result.final_mse:.4f}, utilization {result.utilization}")

# one signal through the trained codec: 128 samples become 32 frames of 2 codes
with torch.no_grad():
    codes = codec_encode(data[:1], model)
    recon = codec_decode(codes, model, target_len=128)
print("codes:", codes.shape, "reconstruction error:", float(((recon - data[:1]) ** 2).mean()))
