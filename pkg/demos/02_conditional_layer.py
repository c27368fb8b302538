"""A conditional layer consumes 2n frames; a stack of m layers leaves k frames to pool.

Run:  python demos/02_conditional_layer.py
"""
import numpy as np

from mclnn import build_params, config_from_dict, segment_width
from mclnn.network import clnn_layer_forward, forward_batch, global_mean_pool

cfg = config_from_dict({"classes": [f"class{i}" for i in range(10)]})
q = segment_width(cfg.order, len(cfg.layers), cfg.extra_frames)
print(f"order n={cfg.order}, layers m={len(cfg.layers)}, extra frames k={cfg.extra_frames} -> segment q={q}")

params = build_params(cfg, np.random.default_rng(0))
x = np.random.default_rng(1).normal(size=(q, cfg.feature_length)).astype(np.float32)
for i, layer in enumerate(params.clnn_layers):
    y = clnn_layer_forward(x, layer)
    print(f"layer {i + 1}: {x.shape} -> {y.shape}  ({layer.order * 2 + 1} weight matrices of {layer.weights.shape[1:]})")
    x = y
print("pooled vector:", global_mean_pool(x).shape)

probs = forward_batch(params, np.random.default_rng(2).normal(size=(4, q, 120)).astype(np.float32))
print("class probabilities for 4 random segments (rows sum to 1):")
print(np.round(probs, 3))
