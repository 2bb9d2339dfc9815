"""WAV decoding to 16 kHz mono float32 in [-1, 1]."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

TARGET_SAMPLE_RATE = 16_000

_PCM_SCALE = {np.dtype(np.int16): 32768.0, np.dtype(np.int32): 2147483648.0,
              np.dtype(np.uint8): 128.0}


class AudioDecodeError(RuntimeError):
    pass


def load_audio(path: str | Path) -> np.ndarray:
    """Decode a WAV file and return 16 kHz mono float32 samples."""
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:
        raise AudioDecodeError(f"cannot decode {path}: {exc}") from exc
    if data.size == 0:
        raise AudioDecodeError(f"empty audio: {path}")

    if data.dtype in _PCM_SCALE:
        offset = 128.0 if data.dtype == np.uint8 else 0.0
        samples = (data.astype(np.float64) - offset) / _PCM_SCALE[data.dtype]
    else:
        samples = data.astype(np.float64)
    if samples.ndim == 2:
        samples = samples.mean(axis=1)

    if rate != TARGET_SAMPLE_RATE:
        g = math.gcd(int(rate), TARGET_SAMPLE_RATE)
        samples = resample_poly(samples, TARGET_SAMPLE_RATE // g, int(rate) // g)
    return samples.astype(np.float32)
