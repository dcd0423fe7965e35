"""Discriminative spatial-filter feature provider.

Stage 1 trains a small direction-steered mask estimator on the
discriminative STFT grid (FFT 512, window 512, hop 256): multichannel
log-magnitude/phase features and an embedded direction code feed a 1x1
conv mixer, a bidirectional LSTM running along the frequency axis, and
a sigmoid mask head.  The features tapped after the frequency LSTM are
the conditioning input of the feature-conditioned generator modes; the
provider is frozen (no parameter updates, no gradient flow) once
stage 2 starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .conditioning import CondFeatures
from .errors import ConfigError
from .timefreq import StftConfig, assemble_input, stft


def _default_provider_stft() -> StftConfig:
    return StftConfig(fft_length=512, window_length=512, hop_length=256)


@dataclass(frozen=True)
class ProviderConfig:
    """Shape and size contract of the toy spatial filter."""

    stft: StftConfig = field(default_factory=_default_provider_stft)
    mic_count: int = 3
    direction_count: int = 72
    embed_dim: int = 16
    hidden_channels: int = 32
    lstm_hidden: int = 24
    sample_rate: int = 16000

    def __post_init__(self):
        for name in (
            "mic_count",
            "direction_count",
            "embed_dim",
            "hidden_channels",
            "lstm_hidden",
            "sample_rate",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def cond_channels(self) -> int:
        return 2 * self.lstm_hidden  # bidirectional tap

    @property
    def cond_bins(self) -> int:
        return self.stft.freq_bins


class ToySpatialFilter(nn.Module):
    """Direction-steered mask estimator with a declared feature tap point."""

    provider_id = "toy_spatial_filter"
    tap_point = "after_frequency_lstm"

    def __init__(self, config: ProviderConfig | None = None):
        super().__init__()
        self.config = config if config is not None else ProviderConfig()
        cfg = self.config
        self.embed = nn.Linear(cfg.direction_count, cfg.embed_dim)
        self.mix = nn.Conv2d(3 * cfg.mic_count + cfg.embed_dim, cfg.hidden_channels, 1)
        self.act = nn.ELU()
        self.freq_lstm = nn.LSTM(
            cfg.hidden_channels,
            cfg.lstm_hidden,
            batch_first=True,
            bidirectional=True,
        )
        self.mask_head = nn.Conv2d(cfg.cond_channels, 1, 1)

    def _direction_code(self, doa_index, batch: int, dtype, device) -> torch.Tensor:
        if doa_index is None:
            raise ConfigError("the spatial filter requires a target direction index")
        idx = torch.as_tensor(doa_index, dtype=torch.long, device=device)
        if idx.dim() == 0:
            idx = idx.expand(batch)
        if idx.shape != (batch,):
            raise ValueError(
                f"direction indices of shape {tuple(idx.shape)} do not match "
                f"batch size {batch}"
            )
        if ((idx < 0) | (idx >= self.config.direction_count)).any():
            raise ConfigError(
                f"direction index out of range [0, {self.config.direction_count})"
            )
        return nn.functional.one_hot(idx, self.config.direction_count).to(dtype)

    def features(self, wave: torch.Tensor, doa_index) -> torch.Tensor:
        """(B, M, L) or (M, L) mixture -> tap features (B, 2H, F, T')."""
        if wave.dim() == 2:
            wave = wave.unsqueeze(0)
        if wave.dim() != 3 or wave.shape[1] != self.config.mic_count:
            raise ValueError(
                f"expected (B, {self.config.mic_count}, L) mixture, got "
                f"{tuple(wave.shape)}"
            )
        code = self._direction_code(doa_index, wave.shape[0], wave.dtype, wave.device)
        feats = assemble_input(wave, self.config.stft).values
        b, _, f, t = feats.shape
        grid = self.embed(code).reshape(b, -1, 1, 1).expand(-1, -1, f, t)
        x = self.act(self.mix(torch.cat([feats, grid], dim=1)))
        # run the recurrence along frequency, independently per frame
        seq = x.permute(0, 3, 2, 1).reshape(b * t, f, -1)
        out, _ = self.freq_lstm(seq)
        return out.reshape(b, t, f, -1).permute(0, 3, 2, 1)

    def forward(self, wave: torch.Tensor, doa_index) -> torch.Tensor:
        """(B, M, L) mixture -> bounded mask (B, F, T') in [0, 1]."""
        tap = self.features(wave, doa_index)
        return torch.sigmoid(self.mask_head(tap)).squeeze(1)

    def freeze(self) -> "ToySpatialFilter":
        self.eval()
        self.requires_grad_(False)
        return self

    @property
    def is_frozen(self) -> bool:
        return not any(p.requires_grad for p in self.parameters())


def extract_features(
    provider: ToySpatialFilter,
    wave: torch.Tensor,
    doa_index,
    sample_rate: int = 16000,
) -> CondFeatures:
    """Frozen-provider feature extraction; never builds a gradient graph."""
    if sample_rate != provider.config.sample_rate:
        raise ValueError(
            f"provider expects {provider.config.sample_rate} Hz input, got {sample_rate}"
        )
    with torch.no_grad():
        tap = provider.features(wave, doa_index)
    return CondFeatures(tap, provider.provider_id, provider.tap_point)


def mask_objective(
    provider: ToySpatialFilter,
    mixture: torch.Tensor,
    target_ref: torch.Tensor,
    doa_index,
) -> torch.Tensor:
    """l1 signal approximation: | mask * |X_ref| - |target| | averaged."""
    if mixture.dim() == 2:
        mixture = mixture.unsqueeze(0)
    if target_ref.dim() == 1:
        target_ref = target_ref.unsqueeze(0)
    if mixture.shape[-1] != target_ref.shape[-1]:
        raise ValueError(
            f"mixture length {mixture.shape[-1]} does not match target "
            f"{target_ref.shape[-1]}"
        )
    mask = provider(mixture, doa_index)
    ref_mag = stft(mixture[:, 0], provider.config.stft).values.abs()
    target_mag = stft(target_ref, provider.config.stft).values.abs()
    return (mask * ref_mag - target_mag).abs().mean()
