"""Training objectives.

Reconstruction pairs a time-domain l1 term with multi-resolution
spectral distances (l1 + normalized Frobenius on log-magnitude and mel
spectra).  The time term is reported relative to the reference level:
the spectral distances are magnitude-only, so waveform alignment is the
sole part of the objective that constrains phase, and an absolute l1 on
physically attenuated signals (millivolt scale after propagation decay)
would vanish next to the scale-free spectral terms.  The adversarial
pair uses the hinge formulation averaged per frame and per scale;
feature matching compares every discriminator layer between target and
estimate.  The total generator loss is the weighted sum of the parts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import torch

from .discriminator import DiscOutputs
from .errors import ConfigError, TrainingFault
from .timefreq import SpectralScale, default_loss_scales, multires_spectra

LOG_MAG_FLOOR = 1e-5
# Floor on the reference level used to normalize the time-domain term, so
# silent reference crops penalize output energy at a bounded rate instead
# of dividing by zero.
REF_LEVEL_FLOOR = 1e-3


@dataclass(frozen=True)
class LossWeights:
    """Weights of the generator objective terms.

    ``time_l1`` scales the relative time-domain term inside the
    reconstruction loss; ``adversarial`` and ``feature_match`` scale the
    GAN terms added on top of it.
    """

    adversarial: float = 1.0
    feature_match: float = 2.0
    time_l1: float = 10.0

    def __post_init__(self):
        for name in ("adversarial", "feature_match", "time_l1"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"weight {name} must be finite and >= 0, got {value}")


@dataclass
class LossReport:
    """Named scalar losses for one training step."""

    time_l1: float = 0.0
    spectral: float = 0.0
    reconstruction: float = 0.0
    adversarial: float = 0.0
    feature_match: float = 0.0
    generator_total: float = 0.0
    discriminator_total: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


def _rms(x: torch.Tensor) -> torch.Tensor:
    # Frobenius distance normalized by sqrt(element count)
    return x.square().mean().sqrt()


def recon_loss(
    estimate: torch.Tensor,
    reference: torch.Tensor,
    scales: list[SpectralScale] | None = None,
    sample_rate: int = 16000,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Relative time-domain l1 and summed multi-resolution spectral distances.

    The time term is ``mean|e - t| / max(mean|t|, REF_LEVEL_FLOOR)``: 0 for
    exact recovery, about 1 for silence, above 1 for a level-matched estimate
    with wrong phase — which is what makes it the phase-anchoring term next
    to the magnitude-only spectral distances.
    """
    if estimate.shape != reference.shape:
        raise ValueError(
            f"estimate shape {tuple(estimate.shape)} does not match reference "
            f"{tuple(reference.shape)}"
        )
    if scales is None:
        scales = default_loss_scales(sample_rate)
    ref_level = reference.abs().mean().detach().clamp_min(REF_LEVEL_FLOOR)
    time_l1 = (estimate - reference).abs().mean() / ref_level

    spectral = torch.zeros((), dtype=estimate.dtype, device=estimate.device)
    est_spectra = multires_spectra(estimate, scales, sample_rate)
    ref_spectra = multires_spectra(reference, scales, sample_rate)
    for (est_mag, est_mel), (ref_mag, ref_mel) in zip(est_spectra, ref_spectra):
        dlog = torch.log(est_mag + LOG_MAG_FLOOR) - torch.log(ref_mag + LOG_MAG_FLOOR)
        dmel = est_mel - ref_mel
        spectral = spectral + dlog.abs().mean() + _rms(dlog)
        spectral = spectral + dmel.abs().mean() + _rms(dmel)
    return time_l1, spectral


def _hinge(margin_minus_scores: tuple[torch.Tensor, ...]) -> torch.Tensor:
    total = torch.zeros((), dtype=margin_minus_scores[0].dtype)
    for grid in margin_minus_scores:
        total = total + torch.relu(grid).mean()
    return total / len(margin_minus_scores)


def adv_gen_loss(fake: DiscOutputs) -> torch.Tensor:
    """(1/K) sum_k mean_n [1 - D_k,n(estimate)]_+ ."""
    if fake.num_scales < 1:
        raise ValueError("discriminator outputs are empty")
    return _hinge(tuple(1.0 - s for s in fake.scores))


def disc_loss(real: DiscOutputs, fake: DiscOutputs) -> torch.Tensor:
    """Hinge real term plus hinge fake term, each scale/frame averaged."""
    if real.num_scales != fake.num_scales:
        raise ValueError(
            f"real has {real.num_scales} scales, fake has {fake.num_scales}"
        )
    real_term = _hinge(tuple(1.0 - s for s in real.scores))
    fake_term = _hinge(tuple(1.0 + s for s in fake.scores))
    return real_term + fake_term


def feat_match_loss(real: DiscOutputs, fake: DiscOutputs) -> torch.Tensor:
    """(1/(K*L)) sum over scales and layers of mean |real - fake| features."""
    if real.num_scales != fake.num_scales:
        raise ValueError(
            f"real has {real.num_scales} scales, fake has {fake.num_scales}"
        )
    total = None
    count = 0
    for real_stack, fake_stack in zip(real.features, fake.features):
        if len(real_stack) != len(fake_stack):
            raise ValueError(
                f"layer count mismatch: {len(real_stack)} vs {len(fake_stack)}"
            )
        for real_feat, fake_feat in zip(real_stack, fake_stack):
            if real_feat.shape != fake_feat.shape:
                raise ValueError(
                    f"feature shape mismatch: {tuple(real_feat.shape)} vs "
                    f"{tuple(fake_feat.shape)}"
                )
            term = (real_feat - fake_feat).abs().mean()
            total = term if total is None else total + term
            count += 1
    if total is None:
        raise ValueError("discriminator outputs carry no features")
    return total / count


def total_gen_loss(
    reconstruction: torch.Tensor,
    adversarial: torch.Tensor,
    feature_match: torch.Tensor,
    weights: LossWeights,
) -> torch.Tensor:
    """reconstruction + lambda_adv * adversarial + lambda_feat * feature_match."""
    for name, term in (
        ("reconstruction", reconstruction),
        ("adversarial", adversarial),
        ("feature_match", feature_match),
    ):
        if not torch.isfinite(torch.as_tensor(term)).all():
            raise TrainingFault(f"non-finite {name} loss: {term}")
    return (
        reconstruction
        + weights.adversarial * adversarial
        + weights.feature_match * feature_match
    )
