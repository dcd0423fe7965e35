"""Waveform quality metrics: scale-invariant SNR and segmental SNR.

Pure functions over 1-D float arrays; thread-safe.
"""

from __future__ import annotations

import numpy as np

# Cap applied symmetrically: +cap for exact recovery (zero residual),
# -cap when the projection vanishes (zero or orthogonal estimate).
SI_SNR_CAP_DB = 60.0

SEG_SNR_FRAME_MS = 20.0
SEG_SNR_CLAMP_DB = (-10.0, 35.0)
SEG_SNR_SILENCE_DBFS = -60.0


def _as_1d(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    return arr


def si_snr(estimate, reference, cap_db: float = SI_SNR_CAP_DB) -> float:
    """Scale-invariant SNR in dB: estimate projected onto the reference.

    The projection energy over residual energy, in dB, capped to
    [-cap_db, +cap_db] so exact recovery and degenerate estimates stay
    finite.  Invariant to positive scaling of the estimate.

    Raises ValueError on a zero reference or length mismatch.
    """
    est = _as_1d(estimate, "estimate")
    ref = _as_1d(reference, "reference")
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.size} vs {ref.size}")
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise ValueError("reference signal is identically zero")
    alpha = float(np.dot(est, ref)) / ref_energy
    target = alpha * ref
    residual = est - target
    num = float(np.dot(target, target))
    den = float(np.dot(residual, residual))
    if num == 0.0:
        return -cap_db
    if den == 0.0:
        return cap_db
    return float(np.clip(10.0 * np.log10(num / den), -cap_db, cap_db))


def seg_snr(
    estimate,
    reference,
    sample_rate: int,
    frame_ms: float = SEG_SNR_FRAME_MS,
    clamp: tuple[float, float] = SEG_SNR_CLAMP_DB,
    silence_threshold_dbfs: float = SEG_SNR_SILENCE_DBFS,
) -> float:
    """Segmental SNR in dB over non-overlapping frames.

    Per-frame SNR (reference energy over error energy, in dB) is clamped to
    `clamp` and averaged over active frames; a frame is active when its
    reference level exceeds `silence_threshold_dbfs` relative to full scale.

    Raises ValueError when lengths differ or no frame is active.
    """
    est = _as_1d(estimate, "estimate")
    ref = _as_1d(reference, "reference")
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.size} vs {ref.size}")
    frame_len = int(round(sample_rate * frame_ms / 1000.0))
    if frame_len <= 0:
        raise ValueError(f"frame of {frame_ms} ms is empty at {sample_rate} Hz")
    num_frames = ref.size // frame_len
    if num_frames == 0:
        raise ValueError(
            f"signal of {ref.size} samples is shorter than one {frame_len}-sample frame"
        )
    usable = num_frames * frame_len
    ref_f = ref[:usable].reshape(num_frames, frame_len)
    est_f = est[:usable].reshape(num_frames, frame_len)

    ref_energy = (ref_f**2).sum(axis=1)
    level_dbfs = 10.0 * np.log10(
        np.maximum(ref_energy / frame_len, np.finfo(np.float64).tiny)
    )
    active = level_dbfs > silence_threshold_dbfs
    if not active.any():
        raise ValueError("no active frames above the silence threshold")

    err_energy = ((ref_f - est_f) ** 2).sum(axis=1)
    lo, hi = clamp
    with np.errstate(divide="ignore"):
        snr = 10.0 * np.log10(
            np.where(err_energy > 0, ref_energy / np.maximum(err_energy, 1e-300), np.inf)
        )
    return float(np.mean(np.clip(snr[active], lo, hi)))


def delta_si_snr(estimate, mixture_reference, reference) -> float:
    """SI-SNR improvement of the estimate over the unprocessed mixture channel."""
    return si_snr(estimate, reference) - si_snr(mixture_reference, reference)
