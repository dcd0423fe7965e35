"""WAV reading and writing.

Mixtures are written as float32 (headroom above 0 dBFS is legal there);
16-bit PCM is accepted on read and scaled to [-1, 1).  Mono signals are
1-D arrays; multichannel signals are (channels, samples).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a WAV file to float64, shape (L,) for mono or (M, L) otherwise."""
    fs, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        wave = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        wave = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        wave = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample format {data.dtype} in {path}")
    if wave.ndim == 2:  # stored (samples, channels)
        wave = wave.T
    return wave, int(fs)


def write_wav(path, wave, sample_rate: int):
    """Write float32 WAV; accepts (L,) mono or (M, L) multichannel."""
    arr = np.asarray(wave, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr.T  # scipy expects (samples, channels)
    elif arr.ndim != 1:
        raise ValueError(f"expected 1-D or 2-D waveform, got shape {arr.shape}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), sample_rate, arr)
