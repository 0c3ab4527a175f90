"""
Grouped scalar quantization
===========================

Encode a random latent with GFSQ, decode it, and look at codebook usage.
"""

import numpy as np

from fishcore import GfsqConfig, code_entropy, codebook_size, gfsq_decode, gfsq_encode, utilization

# two groups, each with two dimensions of three levels: 9 codes per group
cfg = GfsqConfig(groups=2, levels=[3, 3], hop=1)
print("codebook size per group:", codebook_size(cfg))

rng = np.random.default_rng(0)
latent = rng.normal(size=(1, cfg.channels, 5000))

codes = gfsq_encode(latent, cfg)
print("code grid shape:", codes.shape)
print("first frame indices:", codes.indices[0, :, 0])

# decoding gives the bounded grid values, never outside [-1, 1]
values = gfsq_decode(codes)
print("distinct grid values:", np.unique(values))

# a Gaussian latent reaches every code; entropy is close to log2(9) = 3.17 bits
print("utilization per group:", utilization(codes))
print("entropy per group (bits):", np.round(code_entropy(codes), 3))

# a latent stuck near zero collapses onto the centre code
narrow = gfsq_encode(0.05 * latent, cfg)
print("utilization of a narrow latent:", utilization(narrow))
