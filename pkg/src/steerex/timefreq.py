"""STFT analysis/synthesis and spectral feature assembly.

Framing convention: center-padded (half a window of zeros on each side),
so a signal of length L yields T = 1 + floor(L / hop) frames and the
inverse transform returns (T - 1) * hop samples unless `length` says
otherwise.  Center padding keeps every real sample under full window
coverage, which makes synthesis of *modified* spectrograms stable: the
overlap-add envelope is bounded away from zero over the whole signal,
not just away from the edges.  Plain edge-to-edge framing passes
round-trip tests but amplifies any spectral modification near the
boundaries by the inverse of a vanishing window envelope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from steerex.errors import ConfigError

# Floor applied to magnitudes before log and phase division.
MAGNITUDE_FLOOR = 1e-8


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis parameterization.

    Defaults match the extraction network frontend; the discriminative
    feature provider uses the same window with hop 256.
    """

    fft_length: int = 512
    window_length: int = 512
    hop_length: int = 160
    window: str = "hann"

    def __post_init__(self):
        if self.window_length > self.fft_length:
            raise ConfigError(
                f"window_length {self.window_length} exceeds fft_length {self.fft_length}"
            )
        if not (0 < self.hop_length <= self.window_length // 2):
            raise ConfigError(
                f"hop_length {self.hop_length} must be in (0, window_length // 2]; "
                "overlap-add synthesis needs at least half-window overlap"
            )
        if self.window != "hann":
            raise ConfigError(f"unsupported window kind: {self.window!r}")

    @property
    def freq_bins(self) -> int:
        return self.fft_length // 2 + 1

    def frame_count(self, num_samples: int) -> int:
        if num_samples < self.window_length:
            raise ValueError(
                f"signal of {num_samples} samples is shorter than the "
                f"{self.window_length}-sample analysis window"
            )
        return 1 + num_samples // self.hop_length

    def synthesis_length(self, num_frames: int) -> int:
        return (num_frames - 1) * self.hop_length


def _analysis_window(cfg: StftConfig, dtype: torch.dtype, device) -> torch.Tensor:
    # periodic Hann; satisfies the nonzero-envelope condition at both hops
    return torch.hann_window(
        cfg.window_length, periodic=True, dtype=dtype, device=device
    )


@dataclass
class ComplexSpectrogram:
    """Complex STFT grid, shape (..., F, T), with its framing config."""

    values: torch.Tensor
    config: StftConfig

    def __post_init__(self):
        if self.values.shape[-2] != self.config.freq_bins:
            raise ValueError(
                f"spectrogram has {self.values.shape[-2]} bins, config implies "
                f"{self.config.freq_bins}"
            )


@dataclass
class MagPhaseFeatures:
    """Real feature grid of shape (..., 3M, F, T).

    Channel order is fixed: log-magnitudes for all M input channels,
    then cos-phase (Re/|.|) for all M, then sin-phase (Im/|.|) for all M.
    """

    values: torch.Tensor
    config: StftConfig = field(default_factory=StftConfig)

    @property
    def mic_count(self) -> int:
        return self.values.shape[-3] // 3


@dataclass
class GeneratorOutput:
    """Estimated spectral features, shape (..., 3, F, T): [mag, real, imag]."""

    values: torch.Tensor
    config: StftConfig = field(default_factory=StftConfig)


def stft(wave: torch.Tensor, cfg: StftConfig) -> ComplexSpectrogram:
    """Short-time Fourier transform of a real signal, shape (..., L) -> (..., F, T)."""
    if wave.shape[-1] < cfg.window_length:
        raise ValueError(
            f"signal of {wave.shape[-1]} samples is shorter than the "
            f"{cfg.window_length}-sample analysis window"
        )
    win = _analysis_window(cfg, wave.dtype, wave.device)
    lead = wave.shape[:-1]
    flat = wave.reshape(-1, wave.shape[-1])
    spec = torch.stft(
        flat,
        n_fft=cfg.fft_length,
        hop_length=cfg.hop_length,
        win_length=cfg.window_length,
        window=win,
        center=True,
        pad_mode="constant",
        normalized=False,
        onesided=True,
        return_complex=True,
    )  # (B, F, T)
    return ComplexSpectrogram(spec.reshape(*lead, *spec.shape[-2:]), cfg)


def istft(
    spec: ComplexSpectrogram | torch.Tensor,
    cfg: StftConfig | None = None,
    length: int | None = None,
) -> torch.Tensor:
    """Weighted overlap-add inverse STFT.

    Accepts a ComplexSpectrogram (config taken from it) or a raw complex
    tensor of shape (..., F, T) together with `cfg`.  Returns
    (T - 1) * hop samples unless `length` trims or zero-pads.
    """
    if isinstance(spec, ComplexSpectrogram):
        values = spec.values
        cfg = spec.config if cfg is None else cfg
    else:
        values = spec
        if cfg is None:
            raise ValueError("istft of a raw tensor requires a config")
    if values.shape[-2] != cfg.freq_bins:
        raise ValueError(
            f"spectrogram has {values.shape[-2]} bins, config implies {cfg.freq_bins}"
        )

    real_dtype = values.real.dtype
    win = _analysis_window(cfg, real_dtype, values.device)
    lead = values.shape[:-2]
    flat = values.reshape(-1, *values.shape[-2:])
    wave = torch.istft(
        flat,
        n_fft=cfg.fft_length,
        hop_length=cfg.hop_length,
        win_length=cfg.window_length,
        window=win,
        center=True,
        normalized=False,
        onesided=True,
        length=length,
    )
    return wave.reshape(*lead, wave.shape[-1])


def assemble_input(wave: torch.Tensor, cfg: StftConfig) -> MagPhaseFeatures:
    """Build the (..., 3M, F, T) network input from an (..., M, L) signal.

    Magnitudes are floored at MAGNITUDE_FLOOR before the log and the phase
    division; bins whose magnitude falls below the floor get the degenerate
    phase (cos, sin) = (1, 0).
    """
    spec = stft(wave, cfg).values  # (..., M, F, T)
    mag = spec.abs()
    floored = torch.clamp(mag, min=MAGNITUDE_FLOOR)
    degenerate = mag < MAGNITUDE_FLOOR
    log_mag = torch.log(floored)
    cos_phase = torch.where(degenerate, torch.ones_like(mag), spec.real / floored)
    sin_phase = torch.where(degenerate, torch.zeros_like(mag), spec.imag / floored)
    values = torch.cat([log_mag, cos_phase, sin_phase], dim=-3)
    return MagPhaseFeatures(values, cfg)


def synthesize_output(
    out: GeneratorOutput | torch.Tensor,
    cfg: StftConfig | None = None,
    length: int | None = None,
) -> torch.Tensor:
    """Synthesize a waveform from predicted [mag, real, imag] channels.

    The magnitude channel passes through a softplus, so raw predictions are
    unconstrained; the real/imag channels carry the (unnormalized) phase.
    """
    if isinstance(out, GeneratorOutput):
        values = out.values
        cfg = out.config if cfg is None else cfg
    else:
        values = out
        if cfg is None:
            raise ValueError("synthesize_output of a raw tensor requires a config")
    if values.shape[-3] != 3:
        raise ValueError(f"expected 3 output channels, got {values.shape[-3]}")
    mag = torch.nn.functional.softplus(values[..., 0, :, :])
    spec = mag * torch.complex(values[..., 1, :, :], values[..., 2, :, :])
    return istft(spec, cfg, length=length)


def mel_filterbank(
    num_bands: int,
    num_bins: int,
    sample_rate: int,
    fmin: float = 0.0,
    fmax: float | None = None,
) -> torch.Tensor:
    """Triangular mel filterbank matrix of shape (num_bands, num_bins)."""
    if num_bands > num_bins:
        raise ConfigError(
            f"{num_bands} mel bands cannot be built from {num_bins} frequency bins"
        )
    if fmax is None:
        fmax = sample_rate / 2.0

    def to_mel(f):
        return 2595.0 * math.log10(1.0 + f / 700.0)

    mel_pts = torch.linspace(
        to_mel(fmin), to_mel(fmax), num_bands + 2, dtype=torch.float64
    )
    hz_pts = 700.0 * (10.0 ** (mel_pts / 2595.0) - 1.0)
    bin_freqs = torch.linspace(0, sample_rate / 2.0, num_bins, dtype=torch.float64)

    lower = hz_pts[:-2].unsqueeze(1)
    center = hz_pts[1:-1].unsqueeze(1)
    upper = hz_pts[2:].unsqueeze(1)
    up = (bin_freqs - lower) / torch.clamp(center - lower, min=1e-12)
    down = (upper - bin_freqs) / torch.clamp(upper - center, min=1e-12)
    fb = torch.clamp(torch.minimum(up, down), min=0.0)
    return fb


@dataclass(frozen=True)
class SpectralScale:
    """One resolution of the multi-resolution reconstruction loss."""

    stft: StftConfig
    mel_bands: int


def default_loss_scales(sample_rate: int = 16000) -> list[SpectralScale]:
    """Conventional ladder: FFT 128..2048, hop = FFT/4, mel bands 10..160."""
    del sample_rate  # bands are fixed per scale; rate only matters at filterbank build
    scales = []
    for fft, mels in [(128, 10), (256, 20), (512, 40), (1024, 80), (2048, 160)]:
        scales.append(
            SpectralScale(
                StftConfig(fft_length=fft, window_length=fft, hop_length=fft // 4),
                mels,
            )
        )
    return scales


def multires_spectra(
    wave: torch.Tensor,
    scales: list[SpectralScale],
    sample_rate: int = 16000,
) -> list[tuple[torch.Tensor, torch.Tensor]]:
    """Magnitude and mel spectrogram per scale for a (..., L) signal.

    Returns [(magnitude (..., F, T), mel (..., B, T)), ...] in scale order.
    """
    if not scales:
        raise ConfigError("multires_spectra requires at least one scale")
    out = []
    for scale in scales:
        mag = stft(wave, scale.stft).values.abs()
        fb = mel_filterbank(
            scale.mel_bands, scale.stft.freq_bins, sample_rate
        ).to(dtype=mag.dtype, device=mag.device)
        mel = fb @ mag
        out.append((mag, mel))
    return out
