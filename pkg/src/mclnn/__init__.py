"""Masked conditional neural networks (MCLNN) for spectrogram classification."""
from .config import ModelConfig, build_params, config_from_dict, load_config
from .datasets import cross_validate, evaluate, extract_segments, fold_split, parse_manifest, vote
from .features import FeatureClip, decode_wav, fit_standardizer, apply_standardizer, log_mel_delta
from .masks import MaskSpec, apply_mask, build_mask, mask_to_text
from .network import (
    ConditionalLayerParams,
    ModelParams,
    clnn_layer_forward,
    init_params,
    load_model,
    model_forward,
    model_gradients,
    parameter_count,
    save_model,
    segment_width,
    window_width,
)
from .optim import AdamState, adam_step, cross_entropy, train

__version__ = "0.1.0"
