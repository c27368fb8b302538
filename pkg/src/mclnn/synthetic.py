"""Synthetic band-energy clips for smoke tests and demos.

Each class raises the level of one block of log-mel bins on top of unit
Gaussian noise, so a clip's class can be read off its band energies.
"""
from __future__ import annotations

import numpy as np

from .features import N_FEATURES, FeatureClip

DEFAULT_BANDS = {"a": (5, 15), "b": (40, 50)}


def band_energy_clips(n_clips: int, n_frames: int, rng, bands=None, level: float = 1.5,
                      n_features: int = N_FEATURES, fold: int = 0, prefix: str = "clip") -> list[FeatureClip]:
    """Balanced clips whose class bins (inclusive ranges) sit ``level`` above the noise."""
    bands = bands or DEFAULT_BANDS
    rng = np.random.default_rng(rng)
    labels = sorted(bands)
    clips = []
    for i in range(n_clips):
        label = labels[i % len(labels)]
        lo, hi = bands[label]
        frames = rng.normal(size=(n_frames, n_features))
        frames[:, lo:hi + 1] += level
        clips.append(FeatureClip(frames, f"{prefix}{i:03d}", label, fold))
    return clips


def band_oracle(clip: FeatureClip, bands=None) -> str:
    """Class whose band has the highest mean energy."""
    bands = bands or DEFAULT_BANDS
    return max(sorted(bands), key=lambda c: clip.frames[:, bands[c][0]:bands[c][1] + 1].mean())
