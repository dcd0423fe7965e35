"""Multi-scale STFT discriminator bank.

Each scale applies a 2D convolutional stack to the complex STFT of a
single-channel waveform (real and imaginary parts as two input channels)
at its own resolution.  Every scale yields an unbounded per-frame score
sequence for the hinge losses and one feature grid per layer for the
feature-matching loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn
from torch.nn.utils.parametrizations import weight_norm

from .errors import ConfigError
from .timefreq import StftConfig, stft

LEAKY_SLOPE = 0.2


def _default_scales() -> tuple[StftConfig, ...]:
    return tuple(
        StftConfig(fft_length=n, window_length=n, hop_length=n // 4)
        for n in (512, 1024, 2048)
    )


@dataclass(frozen=True)
class DiscConfig:
    """Scale ladder and conv stack of the discriminator bank."""

    scales: tuple[StftConfig, ...] = field(default_factory=_default_scales)
    channels: tuple[int, ...] = (8, 16, 32, 32)

    def __post_init__(self):
        if len(self.scales) < 1:
            raise ConfigError("at least one discriminator scale is required")
        ffts = [s.fft_length for s in self.scales]
        if len(set(ffts)) != len(ffts):
            raise ConfigError(f"duplicate FFT lengths in scale ladder: {ffts}")
        if not self.channels or any(c < 1 for c in self.channels):
            raise ConfigError(f"invalid channel schedule {self.channels}")

    @property
    def num_scales(self) -> int:
        return len(self.scales)

    @property
    def num_layers(self) -> int:
        return len(self.channels) + 1  # conv stack plus the score head


@dataclass
class DiscOutputs:
    """Per-scale score sequences (B, N_k) and per-layer feature grids."""

    scores: tuple[torch.Tensor, ...]
    features: tuple[tuple[torch.Tensor, ...], ...]

    def __post_init__(self):
        if len(self.scores) != len(self.features):
            raise ValueError(
                f"{len(self.scores)} score grids but {len(self.features)} "
                "feature stacks"
            )
        depths = {len(stack) for stack in self.features}
        if len(depths) > 1:
            raise ValueError(f"inconsistent layer counts across scales: {depths}")

    @property
    def num_scales(self) -> int:
        return len(self.scores)


class _ScaleDiscriminator(nn.Module):
    """Conv stack on one STFT resolution; frequency-only downsampling."""

    def __init__(self, stft_config: StftConfig, channels: tuple[int, ...]):
        super().__init__()
        self.stft_config = stft_config
        convs = []
        prev = 2
        for ch in channels:
            convs.append(weight_norm(nn.Conv2d(prev, ch, 3, stride=(2, 1), padding=1)))
            prev = ch
        self.convs = nn.ModuleList(convs)
        self.head = weight_norm(nn.Conv2d(prev, 1, 3, padding=1))
        self.act = nn.LeakyReLU(LEAKY_SLOPE)

    def forward(self, wave: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        spec = stft(wave, self.stft_config).values
        x = torch.stack([spec.real, spec.imag], dim=1)
        feats = []
        for conv in self.convs:
            x = self.act(conv(x))
            feats.append(x)
        score_map = self.head(x)  # (B, 1, F', N)
        feats.append(score_map)
        return score_map.mean(dim=(1, 2)), feats


class MultiScaleDiscriminator(nn.Module):
    """Bank of per-resolution discriminators over a single-channel wave."""

    def __init__(self, config: DiscConfig | None = None):
        super().__init__()
        self.config = config if config is not None else DiscConfig()
        self.bank = nn.ModuleList(
            _ScaleDiscriminator(scale, self.config.channels)
            for scale in self.config.scales
        )

    def forward(self, wave: torch.Tensor) -> DiscOutputs:
        """(B, L) or (L,) waveform -> scores and features, always batched."""
        if wave.dim() == 1:
            wave = wave.unsqueeze(0)
        if wave.dim() != 2:
            raise ValueError(f"expected (B, L) or (L,) waveform, got {tuple(wave.shape)}")
        longest = max(s.window_length for s in self.config.scales)
        if wave.shape[-1] < longest:
            raise ValueError(
                f"waveform of {wave.shape[-1]} samples is shorter than the "
                f"largest analysis window ({longest})"
            )
        scores, features = [], []
        for scale in self.bank:
            score, feats = scale(wave)
            scores.append(score)
            features.append(tuple(feats))
        return DiscOutputs(tuple(scores), tuple(features))
