"""Audio ingestion and log-mel + delta features.

The pipeline turns a 16-bit PCM WAV file into a ``(T, 120)`` matrix:
mono at 22050 Hz, a 1024-point Hann STFT with hop 512 (centered,
reflect-padded), 60 HTK-mel triangular filters from 0 Hz to Nyquist, 10*log10
compression, and a 9-frame regression delta appended column-wise.
"""
from __future__ import annotations

import io
import json
import math
import struct
import wave
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import firwin, get_window, resample_poly

__all__ = [
    "SAMPLE_RATE",
    "N_FFT",
    "HOP_LENGTH",
    "N_MELS",
    "N_FEATURES",
    "WavError",
    "AudioClip",
    "FeatureClip",
    "Standardizer",
    "decode_wav",
    "resample",
    "power_spectrogram",
    "hz_to_mel",
    "mel_to_hz",
    "mel_filterbank",
    "mel_center_frequencies",
    "delta",
    "log_mel_delta",
    "fit_standardizer",
    "apply_standardizer",
    "write_feature_clip",
    "read_feature_clip",
    "FEATURE_MAGIC",
]

SAMPLE_RATE = 22050
N_FFT = 1024
HOP_LENGTH = 512
N_MELS = 60
N_FEATURES = 2 * N_MELS
DELTA_WIDTH = 9
LOG_FLOOR = 1e-10
STD_FLOOR = 1e-8
FEATURE_MAGIC = b"MCLFEAT1"


class WavError(ValueError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    source: str = ""


@dataclass
class FeatureClip:
    frames: np.ndarray  # (T, 120)
    clip_id: str = ""
    label: str = ""
    fold: int = 0


@dataclass
class Standardizer:
    means: np.ndarray
    stds: np.ndarray


def decode_wav(data: bytes, source: str = "", target_rate: int = SAMPLE_RATE) -> AudioClip:
    """Decode 16-bit PCM WAV bytes to a mono clip at ``target_rate``.

    Stereo is averaged, samples are scaled by 1/32768.
    """
    try:
        with wave.open(io.BytesIO(data), "rb") as w:
            channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError, struct.error) as exc:
        raise WavError(f"{source or 'wav'}: {exc}") from exc
    if width != 2:
        raise WavError(f"{source or 'wav'}: only 16-bit PCM is supported, got {8 * width}-bit")
    if channels not in (1, 2):
        raise WavError(f"{source or 'wav'}: unsupported channel count {channels}")
    pcm = np.frombuffer(raw, dtype="<i2")
    if pcm.size == 0:
        raise WavError(f"{source or 'wav'}: no audio samples")
    samples = pcm.reshape(-1, channels).astype(np.float64).mean(axis=1) / 32768.0
    if rate != target_rate:
        samples = np.clip(resample(samples, rate, target_rate), -1.0, 1.0)
    return AudioClip(samples, target_rate, source)


def resample(x: np.ndarray, orig_rate: int, target_rate: int) -> np.ndarray:
    """Band-limited polyphase resampling with a Kaiser (beta 8.6) windowed sinc."""
    g = math.gcd(int(orig_rate), int(target_rate))
    up, down = target_rate // g, orig_rate // g
    if up == down:
        return np.array(x, dtype=np.float64)
    taps = firwin(64 * max(up, down) + 1, 1.0 / max(up, down), window=("kaiser", 8.6))
    return resample_poly(np.asarray(x, dtype=np.float64), up, down, window=taps)


def power_spectrogram(samples: np.ndarray, n_fft: int = N_FFT, hop: int = HOP_LENGTH) -> np.ndarray:
    """Centered Hann STFT power, shape ``(1 + len(samples) // hop, n_fft // 2 + 1)``."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise ValueError("cannot analyse an empty signal")
    padded = np.pad(samples, n_fft // 2, mode="reflect")
    frames = sliding_window_view(padded, n_fft)[::hop]
    spectrum = np.fft.rfft(frames * get_window("hann", n_fft), axis=1)
    return spectrum.real ** 2 + spectrum.imag ** 2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _mel_edges(sr: int, n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))


def mel_center_frequencies(sr: int = SAMPLE_RATE, n_mels: int = N_MELS, fmin: float = 0.0, fmax: float | None = None):
    return _mel_edges(sr, n_mels, fmin, sr / 2 if fmax is None else fmax)[1:-1]


def mel_filterbank(sr: int = SAMPLE_RATE, n_fft: int = N_FFT, n_mels: int = N_MELS,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular filters with unit peak, shape ``(n_mels, n_fft // 2 + 1)``."""
    edges = _mel_edges(sr, n_mels, fmin, sr / 2 if fmax is None else fmax)
    freqs = np.arange(n_fft // 2 + 1) * sr / n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def delta(x: np.ndarray, width: int = DELTA_WIDTH) -> np.ndarray:
    """Regression delta along axis 0 with edge frames replicated."""
    if width < 3 or width % 2 == 0:
        raise ValueError(f"delta width must be odd and >= 3, got {width}")
    half = width // 2
    padded = np.pad(np.asarray(x, dtype=np.float64), [(half, half)] + [(0, 0)] * (x.ndim - 1), mode="edge")
    T = x.shape[0]
    out = np.zeros(x.shape, dtype=np.float64)
    for n in range(1, half + 1):
        out += n * (padded[half + n:half + n + T] - padded[half - n:half - n + T])
    return out / (2 * sum(n * n for n in range(1, half + 1)))


_FILTERBANK = None


def log_mel_delta(clip: AudioClip, clip_id: str = "", label: str = "", fold: int = 0) -> FeatureClip:
    """60 log-mel bins followed by their 60 deltas, one row per STFT frame."""
    global _FILTERBANK
    if clip.sample_rate != SAMPLE_RATE:
        raise ValueError(f"expected {SAMPLE_RATE} Hz audio, got {clip.sample_rate}")
    if _FILTERBANK is None:
        _FILTERBANK = mel_filterbank()
    power = power_spectrogram(clip.samples)
    logmel = 10.0 * np.log10(np.maximum(power @ _FILTERBANK.T, LOG_FLOOR))
    frames = np.concatenate([logmel, delta(logmel)], axis=1)
    return FeatureClip(frames, clip_id or clip.source, label, fold)


def fit_standardizer(clips: Sequence[FeatureClip]) -> Standardizer:
    """Per-column mean and population std over every frame of ``clips``."""
    if not clips:
        raise ValueError("cannot fit a standardizer on no clips")
    frames = np.concatenate([np.asarray(c.frames, dtype=np.float64) for c in clips])
    return Standardizer(frames.mean(axis=0), np.maximum(frames.std(axis=0), STD_FLOOR))


def apply_standardizer(clip: FeatureClip, s: Standardizer) -> FeatureClip:
    return replace(clip, frames=(np.asarray(clip.frames, dtype=np.float64) - s.means) / s.stds)


def write_feature_clip(path, clip: FeatureClip) -> None:
    """MCLFEAT1 cache file: magic, uint32 header length, JSON header, float32 frames."""
    frames = np.ascontiguousarray(clip.frames, dtype="<f4")
    header = json.dumps({
        "clip_id": clip.clip_id,
        "frames": int(frames.shape[0]),
        "features": int(frames.shape[1]),
        "label": clip.label,
        "fold": int(clip.fold),
    }, separators=(",", ":")).encode("utf-8")
    Path(path).write_bytes(FEATURE_MAGIC + struct.pack("<I", len(header)) + header + frames.tobytes())


def read_feature_clip(path) -> FeatureClip:
    data = Path(path).read_bytes()
    if not data.startswith(FEATURE_MAGIC):
        raise ValueError(f"{path}: not an MCLFEAT1 feature file")
    pos = len(FEATURE_MAGIC)
    (hlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    shape = (header["frames"], header["features"])
    if len(data) - pos != 4 * shape[0] * shape[1]:
        raise ValueError(f"{path}: frame data does not match header shape {shape}")
    frames = np.frombuffer(data, dtype="<f4", offset=pos).reshape(shape).astype(np.float64)
    return FeatureClip(frames, header["clip_id"], header["label"], header["fold"])
