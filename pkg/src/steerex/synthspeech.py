"""Synthetic speech-like utterances for demos and self-contained tests.

Not a speech synthesizer: the utterances are glottal-pulse trains with
drifting pitch shaped by slowly moving formant resonators, interleaved
with fricative-like noise bursts and pauses.  The point is to produce
deterministic mono signals with speech-like spectro-temporal structure
(harmonics, formants, syllabic rhythm) so simulation and training code
paths can run without shipping a speech corpus.

Run as a script to materialize a corpus directory:
    python3 -m steerex.synthspeech OUT_DIR --count 40 --duration 4.0
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from steerex.audio_io import write_wav

DEFAULT_SAMPLE_RATE = 16000

# Formant frequency ranges (Hz), loosely vowel-like.
_FORMANT_RANGES = ((300.0, 900.0), (900.0, 2400.0), (2400.0, 3400.0))
_FORMANT_BANDWIDTHS = (80.0, 120.0, 180.0)


def _resonator(freq: float, bandwidth: float, fs: int):
    # two-pole resonator at the formant frequency
    r = np.exp(-np.pi * bandwidth / fs)
    theta = 2.0 * np.pi * freq / fs
    a = np.array([1.0, -2.0 * r * np.cos(theta), r * r])
    return np.array([1.0 - r]), a


def _voiced_segment(rng: np.random.Generator, n: int, fs: int) -> np.ndarray:
    # glottal pulse train with a drifting fundamental
    f0 = rng.uniform(85.0, 255.0)
    drift = rng.uniform(-0.3, 0.3)
    t = np.arange(n) / fs
    inst_f0 = f0 * (1.0 + drift * t / max(t[-1], 1e-6))
    phase = 2.0 * np.pi * np.cumsum(inst_f0) / fs
    pulses = np.zeros(n)
    wrapped = np.mod(phase, 2.0 * np.pi)
    pulses[1:] = (np.diff(wrapped) < 0).astype(np.float64)  # one pulse per cycle
    excitation = pulses + 0.01 * rng.standard_normal(n)
    out = excitation
    for (lo, hi), bw in zip(_FORMANT_RANGES, _FORMANT_BANDWIDTHS):
        b, a = _resonator(rng.uniform(lo, hi), bw, fs)
        out = lfilter(b, a, out)
    return out


def _fricative_segment(rng: np.random.Generator, n: int, fs: int) -> np.ndarray:
    noise = rng.standard_normal(n)
    b, a = _resonator(rng.uniform(3000.0, 6000.0), 1500.0, fs)
    return lfilter(b, a, noise)


def synth_utterance(
    seed: int, duration_s: float, sample_rate: int = DEFAULT_SAMPLE_RATE
) -> np.ndarray:
    """Deterministic speech-like mono waveform, peak-normalized to 0.5."""
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(np.random.PCG64(seed))
    total = int(round(duration_s * sample_rate))
    out = np.zeros(total)
    pos = 0
    while pos < total:
        kind = rng.uniform()
        if kind < 0.6:  # voiced syllable nucleus
            seg_len = int(rng.uniform(0.12, 0.35) * sample_rate)
            seg = _voiced_segment(rng, max(seg_len, 64), sample_rate)
            level = 1.0
        elif kind < 0.85:  # fricative burst
            seg_len = int(rng.uniform(0.05, 0.15) * sample_rate)
            seg = _fricative_segment(rng, max(seg_len, 64), sample_rate)
            level = 0.25
        else:  # pause
            seg_len = int(rng.uniform(0.05, 0.2) * sample_rate)
            seg = np.zeros(max(seg_len, 64))
            level = 0.0
        rms = float(np.sqrt((seg**2).mean()))
        if rms > 0:
            seg = seg * (level / rms)
        # syllabic amplitude envelope with soft edges
        n = seg.size
        edge = max(int(0.01 * sample_rate), 1)
        env = np.ones(n)
        ramp = np.linspace(0.0, 1.0, min(edge, n))
        env[: ramp.size] = ramp
        env[n - ramp.size :] = ramp[::-1]
        seg = seg * env * rng.uniform(0.5, 1.0)
        take = min(n, total - pos)
        out[pos : pos + take] = seg[:take]
        pos += take
    peak = np.abs(out).max()
    if peak > 0:
        out *= 0.5 / peak
    return out


def build_corpus(
    out_dir,
    count: int,
    duration_s: float = 4.0,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    seed: int = 0,
) -> list[Path]:
    """Write `count` synthetic utterances into out_dir; returns their paths."""
    if count <= 0:
        raise ValueError("count must be positive")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        wave = synth_utterance(seed + i, duration_s, sample_rate)
        path = out / f"utt_{i:05d}.wav"
        write_wav(path, wave, sample_rate)
        paths.append(path)
    return paths


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="generate a synthetic speech-like corpus")
    parser.add_argument("out_dir")
    parser.add_argument("--count", type=int, default=40)
    parser.add_argument("--duration", type=float, default=4.0)
    parser.add_argument("--sample-rate", type=int, default=DEFAULT_SAMPLE_RATE)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    paths = build_corpus(args.out_dir, args.count, args.duration, args.sample_rate, args.seed)
    print(f"wrote {len(paths)} utterances to {args.out_dir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
