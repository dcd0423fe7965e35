"""Direction-conditioned U-Net generator for target speaker extraction.

The generator consumes multichannel STFT features (log-magnitude and
phase, shape (B, 3M, F, T)), downsamples along frequency only, fuses the
target direction and optional spatial-filter features into every encoder
block, processes the latent sequence with a FiLM-conditioned LSTM stack,
and mirrors the encoder with transposed convolutions whose skip
connections are FiLM-modulated by the direction embedding.  The output
head predicts [magnitude, real, imag] grids that `synthesize_output`
turns back into a waveform of the original length.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn
from torch.nn.utils.parametrizations import weight_norm

from .conditioning import (
    CondAlignment,
    CondFeatures,
    ConditioningMode,
    DoaProjection,
    MaskFusion,
    film,
    spatial_attention,
)
from .errors import ConfigError
from .timefreq import StftConfig, assemble_input, synthesize_output


@dataclass(frozen=True)
class GeneratorConfig:
    """Shape contract for the generator.

    The frequency chain implied by `freq_strides` (size-3 kernels, unit
    padding) is computed eagerly so impossible encoder/decoder mirrors
    are rejected at construction, not at first forward.
    """

    mic_count: int = 3
    stft: StftConfig = field(default_factory=StftConfig)
    block_channels: tuple[int, ...] = (16, 32, 64, 64)
    freq_strides: tuple[int, ...] = (2, 2, 2, 2)
    latent_channels: int = 64
    lstm_layers: int = 2
    mode: ConditioningMode = ConditioningMode.X_PHI
    direction_count: int = 72
    cond_channels: int = 48
    cond_bins: int = 257

    def __post_init__(self):
        if self.mic_count < 1:
            raise ConfigError(f"mic_count must be positive, got {self.mic_count}")
        if not self.block_channels:
            raise ConfigError("at least one encoder block is required")
        if len(self.block_channels) != len(self.freq_strides):
            raise ConfigError(
                f"{len(self.block_channels)} channel counts but "
                f"{len(self.freq_strides)} stride entries"
            )
        if any(c < 1 for c in self.block_channels):
            raise ConfigError(f"non-positive channel count in {self.block_channels}")
        if any(s < 1 for s in self.freq_strides):
            raise ConfigError(f"non-positive stride in {self.freq_strides}")
        if self.latent_channels < 1:
            raise ConfigError(f"latent_channels must be positive, got {self.latent_channels}")
        if self.lstm_layers < 1:
            raise ConfigError(f"lstm_layers must be positive, got {self.lstm_layers}")
        if self.direction_count < 1:
            raise ConfigError(f"direction_count must be positive, got {self.direction_count}")
        if self.mode.uses_cond_features:
            if self.cond_channels < 1 or self.cond_bins < 2:
                raise ConfigError(
                    f"invalid spatial-filter feature shape "
                    f"({self.cond_channels}, {self.cond_bins})"
                )
        self.freq_chain  # noqa: B018 -- validates the encoder/decoder mirror

    @property
    def num_blocks(self) -> int:
        return len(self.block_channels)

    @property
    def freq_chain(self) -> tuple[int, ...]:
        """Frequency bin counts (F_0, ..., F_R) along the encoder."""
        bins = [self.stft.freq_bins]
        for depth, stride in enumerate(self.freq_strides):
            nxt = (bins[-1] - 1) // stride + 1
            if nxt < 2:
                raise ConfigError(
                    f"block {depth + 1} would reduce {bins[-1]} frequency bins "
                    f"to {nxt}; shorten the block stack"
                )
            bins.append(nxt)
        return tuple(bins)

    @property
    def output_paddings(self) -> tuple[int, ...]:
        """Per-block transposed-conv output padding restoring the chain."""
        chain = self.freq_chain
        pads = []
        for depth, stride in enumerate(self.freq_strides):
            pad = chain[depth] - ((chain[depth + 1] - 1) * stride + 1)
            if not 0 <= pad < stride:
                raise ConfigError(
                    f"block {depth + 1} cannot invert {chain[depth + 1]} bins "
                    f"back to {chain[depth]} with stride {stride}"
                )
            pads.append(pad)
        return tuple(pads)


@dataclass
class EncoderTrace:
    """Per-block fused features, bounded masks, and the latent sequence."""

    skips: tuple[torch.Tensor, ...]
    masks: tuple[torch.Tensor, ...]
    latent: torch.Tensor


class _EncoderBlock(nn.Module):
    """Downsampling conv followed by direction/feature fusion."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        stride: int,
        freq_bins: int,
        cfg: GeneratorConfig,
    ):
        super().__init__()
        self.conv = weight_norm(
            nn.Conv2d(in_channels, out_channels, 3, stride=(stride, 1), padding=1)
        )
        self.act = nn.ELU()
        self.proj = nn.Conv2d(out_channels, out_channels, 1)
        self.doa = (
            DoaProjection(cfg.direction_count, out_channels, freq_bins)
            if cfg.mode.uses_phi
            else None
        )
        self.align = (
            CondAlignment(cfg.cond_channels, cfg.cond_bins, out_channels, freq_bins)
            if cfg.mode.uses_cond_features
            else None
        )
        self.fusion = MaskFusion(out_channels)
        self.mode = cfg.mode

    def forward(
        self,
        x: torch.Tensor,
        code: torch.Tensor | None,
        cond_values: torch.Tensor | None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        feats = self.act(self.conv(x))
        frames = feats.shape[-1]
        doa_grid = self.doa(code, frames) if self.doa is not None else None
        cond_grid = self.align(cond_values, frames) if self.align is not None else None
        attended = spatial_attention(self.proj(feats), doa_grid, cond_grid, self.mode)
        return self.fusion(feats, attended)


class _DecoderBlock(nn.Module):
    """Direction-FiLMed skip fusion followed by transposed-conv upsampling."""

    def __init__(
        self,
        channels: int,
        out_channels: int,
        stride: int,
        output_padding: int,
        freq_bins: int,
        cfg: GeneratorConfig,
    ):
        super().__init__()
        self.doa = (
            DoaProjection(cfg.direction_count, channels, freq_bins)
            if cfg.mode.uses_phi
            else None
        )
        # zero-initialized heads make the skip FiLM an exact identity at init
        self.gamma_conv = nn.Conv2d(2 * channels, channels, 3, padding=1)
        self.beta_conv = nn.Conv2d(2 * channels, channels, 3, padding=1)
        nn.init.zeros_(self.gamma_conv.weight)
        nn.init.zeros_(self.gamma_conv.bias)
        nn.init.zeros_(self.beta_conv.weight)
        nn.init.zeros_(self.beta_conv.bias)
        self.up = weight_norm(
            nn.ConvTranspose2d(
                channels,
                out_channels,
                3,
                stride=(stride, 1),
                padding=1,
                output_padding=(output_padding, 0),
            )
        )
        self.act = nn.ELU()

    def forward(
        self, x: torch.Tensor, skip: torch.Tensor, code: torch.Tensor | None
    ) -> torch.Tensor:
        if self.doa is not None:
            doa_grid = self.doa(code, skip.shape[-1])
        else:
            doa_grid = torch.zeros_like(skip)
        stacked = torch.cat([doa_grid, skip], dim=1)
        x = film(x, self.gamma_conv(stacked), self.beta_conv(stacked))
        return self.act(self.up(x))


class Generator(nn.Module):
    """Waveform-to-waveform extractor conditioned on a target direction."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        chain = config.freq_chain
        pads = config.output_paddings
        channels = config.block_channels

        blocks = []
        prev = 3 * config.mic_count
        for depth in range(config.num_blocks):
            blocks.append(
                _EncoderBlock(
                    prev, channels[depth], config.freq_strides[depth], chain[depth + 1], config
                )
            )
            prev = channels[depth]
        self.encoder_blocks = nn.ModuleList(blocks)

        deep = channels[-1] * chain[-1]
        self.to_latent = weight_norm(nn.Conv1d(deep, config.latent_channels, 1))
        self.from_latent = weight_norm(nn.Conv1d(config.latent_channels, deep, 1))

        if config.mode.uses_phi:
            self.gamma_head = nn.Linear(config.direction_count, config.latent_channels)
            self.beta_head = nn.Linear(config.direction_count, config.latent_channels)
        else:
            self.gamma_head = None
            self.beta_head = None
        self.lstm = nn.LSTM(
            config.latent_channels,
            config.latent_channels,
            num_layers=config.lstm_layers,
            batch_first=True,
        )
        # zero-initialized residual projection: the LSTM path is an exact
        # identity at init and grows into the signal during training
        self.lstm_proj = nn.Linear(config.latent_channels, config.latent_channels)
        nn.init.zeros_(self.lstm_proj.weight)
        nn.init.zeros_(self.lstm_proj.bias)

        decoders = []
        for depth in reversed(range(config.num_blocks)):
            out_ch = channels[depth - 1] if depth > 0 else channels[0]
            decoders.append(
                _DecoderBlock(
                    channels[depth],
                    out_ch,
                    config.freq_strides[depth],
                    pads[depth],
                    chain[depth + 1],
                    config,
                )
            )
        self.decoder_blocks = nn.ModuleList(decoders)
        self.head = weight_norm(nn.Conv2d(channels[0], 3, 3, padding=1))

    # ------------------------------------------------------------------ ops

    def encode(
        self,
        features: torch.Tensor,
        code: torch.Tensor | None = None,
        cond_values: torch.Tensor | None = None,
    ) -> EncoderTrace:
        """(B, 3M, F, T) features -> per-block skips, masks, and latent."""
        expected = 3 * self.config.mic_count
        if features.dim() != 4 or features.shape[1] != expected:
            raise ValueError(
                f"expected features of shape (B, {expected}, F, T), got "
                f"{tuple(features.shape)}"
            )
        x = features
        skips, masks = [], []
        for block in self.encoder_blocks:
            x, mask = block(x, code, cond_values)
            skips.append(x)
            masks.append(mask)
        b, c, f, t = x.shape
        latent = self.to_latent(x.reshape(b, c * f, t))
        return EncoderTrace(tuple(skips), tuple(masks), latent)

    def bottleneck(self, latent: torch.Tensor, code: torch.Tensor | None = None) -> torch.Tensor:
        """Direction FiLM (scale via ReLU, shift via tanh), then LSTM residual."""
        x = latent
        if self.gamma_head is not None:
            if code is None:
                raise ConfigError(
                    f"mode {self.config.mode.value} requires a direction code"
                )
            gamma = torch.relu(self.gamma_head(code)).unsqueeze(-1)
            beta = torch.tanh(self.beta_head(code)).unsqueeze(-1)
            x = film(x, gamma, beta)
        out, _ = self.lstm(x.transpose(1, 2))
        return x + self.lstm_proj(out).transpose(1, 2)

    def decode(
        self,
        latent: torch.Tensor,
        trace: EncoderTrace,
        code: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Latent plus skips -> (B, 3, F, T) output feature grids."""
        chain = self.config.freq_chain
        b, _, t = latent.shape
        x = self.from_latent(latent).reshape(
            b, self.config.block_channels[-1], chain[-1], t
        )
        for block, skip in zip(self.decoder_blocks, reversed(trace.skips)):
            x = block(x, skip, code)
        return self.head(x)

    # -------------------------------------------------------------- forward

    def forward(
        self,
        wave: torch.Tensor,
        doa_index=None,
        cond: CondFeatures | torch.Tensor | None = None,
    ) -> torch.Tensor:
        """(B, M, L) or (M, L) mixture -> same-length extracted waveform.

        The signal is zero-padded by one analysis window on both sides so
        every original sample lies in the fully-overlapped interior of the
        overlap-add; the padding is trimmed after synthesis.
        """
        batched = wave.dim() == 3
        if wave.dim() not in (2, 3):
            raise ValueError(f"expected (B, M, L) or (M, L) input, got {tuple(wave.shape)}")
        x = wave if batched else wave.unsqueeze(0)
        if x.shape[1] != self.config.mic_count:
            raise ValueError(
                f"expected {self.config.mic_count} input channels, got {x.shape[1]}"
            )
        batch, _, length = x.shape
        code = self._direction_code(doa_index, batch, x.dtype, x.device)
        cond_values = self._cond_values(cond, batch)

        win = self.config.stft.window_length
        padded = nn.functional.pad(x, (win, win))
        feats = assemble_input(padded, self.config.stft)
        trace = self.encode(feats.values, code, cond_values)
        latent = self.bottleneck(trace.latent, code)
        grids = self.decode(latent, trace, code)
        out = synthesize_output(grids, self.config.stft)[..., win : win + length]
        return out if batched else out.squeeze(0)

    # -------------------------------------------------------------- helpers

    def _direction_code(
        self, doa_index, batch: int, dtype: torch.dtype, device
    ) -> torch.Tensor | None:
        if not self.config.mode.uses_phi:
            return None  # direction input is ignored entirely in this mode
        if doa_index is None:
            raise ConfigError(
                f"mode {self.config.mode.value} requires a target direction index"
            )
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

    def _cond_values(self, cond, batch: int) -> torch.Tensor | None:
        if not self.config.mode.uses_cond_features:
            return None  # spatial-filter features are ignored in this mode
        if cond is None:
            raise ConfigError(
                f"mode {self.config.mode.value} requires spatial-filter features"
            )
        values = cond.values if isinstance(cond, CondFeatures) else cond
        if values.dim() == 3:
            values = values.unsqueeze(0)
        if values.dim() != 4:
            raise ValueError(
                f"expected features of shape (B, C', F', T'), got {tuple(values.shape)}"
            )
        if values.shape[1] != self.config.cond_channels or (
            values.shape[2] != self.config.cond_bins
        ):
            raise ConfigError(
                f"spatial-filter features have shape {tuple(values.shape[1:3])}, "
                f"config expects ({self.config.cond_channels}, {self.config.cond_bins})"
            )
        if values.shape[0] == 1 and batch > 1:
            values = values.expand(batch, -1, -1, -1)
        elif values.shape[0] != batch:
            raise ValueError(
                f"feature batch {values.shape[0]} does not match input batch {batch}"
            )
        return values
