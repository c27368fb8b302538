"""From a WAV file to standardized log-mel + delta frames.

Run:  python demos/03_feature_pipeline.py
"""
import io
import wave

import numpy as np

from mclnn.features import apply_standardizer, decode_wav, fit_standardizer, log_mel_delta, mel_center_frequencies

# Build a 4 second, 44.1 kHz WAV in memory: a 1 kHz tone that fades in over noise.
rate = 44100
t = np.arange(4 * rate) / rate
signal = 0.4 * np.minimum(t / 2, 1) * np.sin(2 * np.pi * 1000 * t) + 0.02 * np.random.default_rng(0).normal(size=t.size)
buf = io.BytesIO()
with wave.open(buf, "wb") as w:
    w.setnchannels(1)
    w.setsampwidth(2)
    w.setframerate(rate)
    w.writeframes(np.round(signal * 32767).astype("<i2").tobytes())

clip = decode_wav(buf.getvalue())  # resampled to 22050 Hz
features = log_mel_delta(clip, clip_id="tone", label="tone")
print(f"{clip.samples.size} samples at {clip.sample_rate} Hz -> frames {features.frames.shape}")

logmel, deltas = features.frames[:, :60], features.frames[:, 60:]
band = int(np.argmax(logmel.mean(axis=0)))
print(f"loudest mel band: {band} (centre {mel_center_frequencies()[band]:.0f} Hz)")
print(f"delta in that band while fading in: {deltas[20:80, band].mean():+.2f} dB/frame, "
      f"once steady: {deltas[100:160, band].mean():+.2f} dB/frame")

std = fit_standardizer([features])
z = apply_standardizer(features, std).frames
print(f"after standardizing: mean {z.mean():+.1e}, std {z.std():.3f}")
