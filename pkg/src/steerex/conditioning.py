"""Direction conditioning primitives.

Everything the extraction network uses to inject the target direction:
one-hot encoding of the quantized direction of arrival, per-block linear
projections of that code, alignment of externally provided spatial
features to an encoder block's grid, multiplicative spatial attention, a
bounded fusion mask, and the feature-wise affine modulation used in the
bottleneck and decoder.

Grids are (batch, channels, freq, time) throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import torch
from torch import nn

from steerex.errors import ConfigError


class ConditioningMode(Enum):
    """Which conditions drive the spatial attention queries."""

    X_PHI = "x_phi"  # direction code only
    X_DL = "x_dl"  # spatial-filter features only
    X_PHI_DL = "x_phi_dl"  # both

    @property
    def uses_phi(self) -> bool:
        return self in (ConditioningMode.X_PHI, ConditioningMode.X_PHI_DL)

    @property
    def uses_cond_features(self) -> bool:
        return self in (ConditioningMode.X_DL, ConditioningMode.X_PHI_DL)


@dataclass
class DoAOneHot:
    """One-hot direction code p over D = 360/resolution grid points."""

    vector: torch.Tensor  # (D,) or (B, D)
    resolution_deg: int

    def __post_init__(self):
        d = self.vector.shape[-1]
        if 360 % self.resolution_deg != 0 or 360 // self.resolution_deg != d:
            raise ConfigError(
                f"vector length {d} inconsistent with resolution {self.resolution_deg}"
            )
        ones = (self.vector == 1).sum(dim=-1)
        zeros = (self.vector == 0).sum(dim=-1)
        if not (torch.all(ones == 1) and torch.all(zeros == d - 1)):
            raise ValueError("vector is not one-hot")

    @property
    def direction_count(self) -> int:
        return self.vector.shape[-1]


@dataclass
class CondFeatures:
    """Features tapped from a spatial-filter network, shape (B, C', F', T')."""

    values: torch.Tensor
    provider_id: str = ""
    tap_point: str = ""

    def __post_init__(self):
        if self.values.dim() != 4:
            raise ValueError(f"expected a 4-D grid, got shape {tuple(self.values.shape)}")
        if not torch.all(torch.isfinite(self.values)):
            raise ValueError("conditioning features contain non-finite values")


@dataclass
class FilmParams:
    """Scale and shift grids for feature-wise affine modulation."""

    gamma: torch.Tensor
    beta: torch.Tensor


def encode_doa(index: int, direction_count: int, dtype=torch.float32) -> torch.Tensor:
    """Standard basis vector e_index of length D."""
    if not 0 <= index < direction_count:
        raise ValueError(f"direction index {index} outside [0, {direction_count})")
    vec = torch.zeros(direction_count, dtype=dtype)
    vec[index] = 1.0
    return vec


class DoaProjection(nn.Module):
    """Linear projection of the direction code onto one block's grid.

    The projected code is constant over time: the (C, F) map is repeated
    across all T frames.
    """

    def __init__(self, direction_count: int, channels: int, freq_bins: int):
        super().__init__()
        self.direction_count = direction_count
        self.channels = channels
        self.freq_bins = freq_bins
        self.linear = nn.Linear(direction_count, channels * freq_bins, bias=False)

    def forward(self, code: torch.Tensor, num_frames: int) -> torch.Tensor:
        if code.shape[-1] != self.direction_count:
            raise ConfigError(
                f"direction code has {code.shape[-1]} entries, expected "
                f"{self.direction_count}"
            )
        batched = code.dim() == 2
        flat = self.linear(code if batched else code.unsqueeze(0))
        grid = flat.reshape(-1, self.channels, self.freq_bins, 1)
        grid = grid.expand(-1, -1, -1, num_frames)
        return grid if batched else grid.squeeze(0).unsqueeze(0)


class CondAlignment(nn.Module):
    """Aligns provider features (C', F', T') to a block grid (C, F, T).

    Time first: linear interpolation to T frames.  Then a strided
    convolution over frequency maps (C', F') to (C, F); the stride is
    derived from the bin counts and must reproduce F exactly.
    """

    def __init__(self, in_channels: int, in_bins: int, out_channels: int, out_bins: int):
        super().__init__()
        if out_bins < 2 or in_bins < out_bins:
            raise ConfigError(f"cannot map {in_bins} bins down to {out_bins}")
        stride = (in_bins - 1) // (out_bins - 1)
        if stride < 1 or (in_bins + 2 - 3) // stride + 1 != out_bins:
            raise ConfigError(
                f"no integer stride maps {in_bins} frequency bins to {out_bins} "
                "with a size-3 kernel and unit padding"
            )
        self.conv = nn.Conv2d(
            in_channels,
            out_channels,
            kernel_size=(3, 1),
            stride=(stride, 1),
            padding=(1, 0),
        )

    def forward(self, features: torch.Tensor, num_frames: int) -> torch.Tensor:
        b, c, f, t = features.shape
        if t != num_frames:
            flat = features.reshape(b, c * f, t)
            flat = nn.functional.interpolate(
                flat, size=num_frames, mode="linear", align_corners=True
            )
            features = flat.reshape(b, c, f, num_frames)
        return self.conv(features)


def spatial_attention(
    encoder_proj: torch.Tensor,
    doa_grid: torch.Tensor | None,
    cond_grid: torch.Tensor | None,
    mode: ConditioningMode,
) -> torch.Tensor:
    """Multiplicative attention over channels.

    The query is the sum of whichever condition grids the mode uses
    (absent terms act as zero grids); attention weights are
    softmax(query * E' / sqrt(C)) over the channel axis, applied back
    onto E' elementwise.
    """
    if mode.uses_phi and doa_grid is None:
        raise ConfigError(f"mode {mode.value} requires the direction grid")
    if mode.uses_cond_features and cond_grid is None:
        raise ConfigError(f"mode {mode.value} requires spatial-filter features")

    query = torch.zeros_like(encoder_proj)
    if mode.uses_phi:
        query = query + doa_grid
    if mode.uses_cond_features:
        query = query + cond_grid

    channels = encoder_proj.shape[1]
    logits = query * encoder_proj / math.sqrt(channels)
    return torch.softmax(logits, dim=1) * encoder_proj


class MaskFusion(nn.Module):
    """Bounded-mask fusion of attended features into the encoder stream.

    M = 2*sigmoid(conv3x3(A)) lies in [0, 2]; the fused features are
    E*M + A.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, kernel_size=3, padding=1)

    def mask(self, attended: torch.Tensor) -> torch.Tensor:
        return 2.0 * torch.sigmoid(self.conv(attended))

    def forward(
        self, encoder_feats: torch.Tensor, attended: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        if encoder_feats.shape != attended.shape:
            raise ValueError(
                f"shape mismatch: {tuple(encoder_feats.shape)} vs {tuple(attended.shape)}"
            )
        mask = self.mask(attended)
        return encoder_feats * mask + attended, mask


def film(x: torch.Tensor, gamma, beta=None) -> torch.Tensor:
    """Affine feature modulation y = x + (gamma * x + beta)."""
    if isinstance(gamma, FilmParams):
        gamma, beta = gamma.gamma, gamma.beta
    try:
        return x + (gamma * x + beta)
    except RuntimeError as exc:
        raise ValueError(
            f"scale/shift of shapes {tuple(gamma.shape)}/{tuple(beta.shape)} do not "
            f"broadcast to {tuple(x.shape)}"
        ) from exc
