"""Filterbank-like binary masks for masked conditional layers.

A mask is an ``l x e`` matrix of zeros and ones. Its ones are laid out
along the flattened (column-major) index space in bands of ``bandwidth``
consecutive positions, one band every ``l + bandwidth - overlap``
positions. Read column by column, each hidden unit therefore sees a
contiguous run of input features, and successive units see runs that are
shifted by ``bandwidth - overlap`` features.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["MaskSpec", "build_mask", "apply_mask", "mask_to_text", "band_step"]


@dataclass(frozen=True)
class MaskSpec:
    """Band layout of a mask.

    Parameters
    ----------
    bandwidth
        Number of consecutive feature bins in one band. Must be >= 1.
    overlap
        Number of bins shared by two successive bands. Negative values
        leave a gap of ``-overlap`` bins between them. Must be < bandwidth.
    """

    bandwidth: int
    overlap: int

    def __post_init__(self):
        if int(self.bandwidth) != self.bandwidth or int(self.overlap) != self.overlap:
            raise ValueError("bandwidth and overlap must be integers")
        if self.bandwidth < 1:
            raise ValueError(f"bandwidth must be >= 1, got {self.bandwidth}")
        if self.overlap >= self.bandwidth:
            raise ValueError(
                f"overlap ({self.overlap}) must be smaller than bandwidth ({self.bandwidth})"
            )


def band_step(l: int, spec: MaskSpec) -> int:
    """Distance in flat-index space between the starts of two bands."""
    return l + (spec.bandwidth - spec.overlap)


def build_mask(l: int, e: int, spec: MaskSpec) -> np.ndarray:
    """Build the ``l x e`` binary mask for a layer.

    The returned array has dtype float64 so it can multiply weights
    directly. Flat index ``lx`` maps to ``(lx % l, lx // l)``.
    """
    if l < 1 or e < 1:
        raise ValueError(f"mask dimensions must be positive, got l={l}, e={e}")
    if spec.bandwidth > l:
        raise ValueError(f"bandwidth ({spec.bandwidth}) exceeds feature length l={l}")
    size = l * e
    step = band_step(l, spec)
    n_bands = math.ceil(size / step)
    starts = np.arange(n_bands, dtype=np.int64) * step
    lx = (starts[:, None] + np.arange(spec.bandwidth, dtype=np.int64)[None, :]).ravel()
    # the band count is a ceiling, so the last band can spill past the matrix
    lx = lx[lx < size]
    flat = np.zeros(size)
    flat[lx] = 1.0
    return flat.reshape((l, e), order="F")


def apply_mask(weights: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Elementwise product of a weight matrix (or stack of them) and a mask.

    ``weights`` may carry leading axes, e.g. the ``(2n+1, l, e)`` tensor of
    a conditional layer; the same mask gates every matrix.
    """
    weights = np.asarray(weights)
    mask = np.asarray(mask)
    if weights.shape[-2:] != mask.shape:
        raise ValueError(f"weights shape {weights.shape} does not match mask shape {mask.shape}")
    return weights * mask


def mask_to_text(mask: np.ndarray) -> str:
    """Render a mask as lines of ``0``/``1`` characters, one per row."""
    return "\n".join("".join("1" if v else "0" for v in row) for row in np.asarray(mask)) + "\n"
