"""Test-set evaluation and the spatial-selectivity steering sweep.

`evaluate` runs an extractor over a manifest split, scores every item
(SI-SNR, delta SI-SNR vs the unprocessed reference microphone, SegSNR),
and aggregates by SNR condition and by target direction.
`selectivity_sweep` steers the extractor over the full direction grid
on scenes with known target angles and records the per-steer delta
SI-SNR profile used for polar plots.
"""

from __future__ import annotations

import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError
from .manifest import load_item_audio, read_manifest
from .metrics import SEG_SNR_CLAMP_DB, SEG_SNR_FRAME_MS, SI_SNR_CAP_DB, seg_snr, si_snr
from .providers import extract_features


@dataclass(frozen=True)
class EvalConfig:
    """Metric parameters and sweep controls."""

    si_snr_cap_db: float = SI_SNR_CAP_DB
    seg_frame_ms: float = SEG_SNR_FRAME_MS
    seg_clamp_db: tuple[float, float] = SEG_SNR_CLAMP_DB
    sweep_step_deg: int = 5
    sweep_crop_seconds: float = 0.0  # 0 = full item
    max_items: int = 0  # 0 = all
    external_quality_cmd: str = ""  # optional "<cmd> {estimate} {reference}" adapter

    def __post_init__(self):
        if self.sweep_step_deg < 1 or 360 % self.sweep_step_deg != 0:
            raise ConfigError(
                f"sweep_step_deg must divide 360, got {self.sweep_step_deg}"
            )
        if self.max_items < 0:
            raise ConfigError(f"max_items must be >= 0, got {self.max_items}")
        if self.sweep_crop_seconds < 0:
            raise ConfigError(
                f"sweep_crop_seconds must be >= 0, got {self.sweep_crop_seconds}"
            )


def make_extractor(generator, provider=None, sample_rate: int = 16000):
    """Wrap a generator (and optional frozen provider) as a numpy extractor.

    The returned callable maps (mixture (M, L) array, doa_index) to the
    extracted (L,) waveform.  The provider is queried only in the
    feature-conditioned modes.
    """
    mode = generator.config.mode
    if mode.uses_cond_features and provider is None:
        raise ConfigError(f"mode {mode.value} requires a feature provider")

    def run(mixture: np.ndarray, doa_index: int) -> np.ndarray:
        wave = torch.from_numpy(np.ascontiguousarray(mixture, dtype=np.float32))
        cond = None
        if mode.uses_cond_features:
            cond = extract_features(provider, wave, doa_index, sample_rate).values
        with torch.no_grad():
            out = generator(wave, doa_index, cond)
        return out.numpy().astype(np.float64)

    return run


# ---------------------------------------------------------------- reports


@dataclass
class ItemMetrics:
    item_id: str
    snr_db: float
    doa_index: int
    doa_degrees: float
    si_snr_db: float
    delta_si_snr_db: float
    seg_snr_db: float
    external: float | None = None


@dataclass
class GroupStats:
    count: int
    si_snr_mean: float
    si_snr_std: float
    delta_mean: float
    delta_std: float
    seg_mean: float
    seg_std: float

    @classmethod
    def from_items(cls, items: list[ItemMetrics]) -> "GroupStats":
        si = np.array([i.si_snr_db for i in items], dtype=np.float64)
        de = np.array([i.delta_si_snr_db for i in items], dtype=np.float64)
        se = np.array([i.seg_snr_db for i in items], dtype=np.float64)
        return cls(
            len(items),
            float(si.mean()),
            float(si.std()),
            float(de.mean()),
            float(de.std()),
            float(se.mean()),
            float(se.std()),
        )


@dataclass
class MetricsReport:
    items: list[ItemMetrics]
    overall: GroupStats | None
    snr_groups: dict[float, GroupStats]
    doa_groups: dict[float, GroupStats]
    skipped: int = 0
    external_failures: int = 0

    def to_text(self) -> str:
        lines = []
        for item in self.items:
            extra = "" if item.external is None else f" external={item.external:.4f}"
            lines.append(
                f"item {item.item_id} snr_db={item.snr_db:+.1f} "
                f"doa_deg={item.doa_degrees:.1f} si_snr={item.si_snr_db:.4f} "
                f"delta_si_snr={item.delta_si_snr_db:.4f} "
                f"seg_snr={item.seg_snr_db:.4f}{extra}"
            )
        lines.append("")

        def block(tag: str, stats: GroupStats) -> str:
            return (
                f"aggregate {tag} count={stats.count} "
                f"si_snr={stats.si_snr_mean:.4f}+-{stats.si_snr_std:.4f} "
                f"delta_si_snr={stats.delta_mean:.4f}+-{stats.delta_std:.4f} "
                f"seg_snr={stats.seg_mean:.4f}+-{stats.seg_std:.4f}"
            )

        if self.overall is not None:
            lines.append(block("overall", self.overall))
        for snr in sorted(self.snr_groups):
            lines.append(block(f"snr_db={snr:+.1f}", self.snr_groups[snr]))
        for doa in sorted(self.doa_groups):
            lines.append(block(f"doa_deg={doa:.1f}", self.doa_groups[doa]))
        lines.append(f"skipped {self.skipped}")
        if self.external_failures:
            lines.append(f"external_failures {self.external_failures}")
        return "\n".join(lines) + "\n"


def _external_score(cmd_template: str, estimate: np.ndarray, reference: np.ndarray, fs: int):
    """Run the optional external quality command; last float on stdout wins."""
    from .audio_io import write_wav

    with tempfile.TemporaryDirectory(prefix="quality-") as tmp:
        est_path = Path(tmp) / "estimate.wav"
        ref_path = Path(tmp) / "reference.wav"
        write_wav(est_path, estimate, fs)
        write_wav(ref_path, reference, fs)
        cmd = [
            part.format(estimate=est_path, reference=ref_path)
            for part in shlex.split(cmd_template)
        ]
        proc = subprocess.run(cmd, capture_output=True, text=True, timeout=120)
        if proc.returncode != 0:
            raise RuntimeError(f"quality command failed: {proc.stderr.strip()}")
        tokens = proc.stdout.split()
        for token in reversed(tokens):
            try:
                return float(token)
            except ValueError:
                continue
        raise RuntimeError(f"no numeric score in quality output: {proc.stdout!r}")


def evaluate(
    extractor,
    manifest_path,
    cfg: EvalConfig | None = None,
    split: str = "test",
) -> MetricsReport:
    """Pure evaluation pass: same extractor + manifest -> same report."""
    cfg = cfg if cfg is not None else EvalConfig()
    manifest_path = Path(manifest_path)
    records = [r for r in read_manifest(manifest_path) if r.split == split]
    if cfg.max_items:
        records = records[: cfg.max_items]
    items: list[ItemMetrics] = []
    skipped = 0
    external_failures = 0
    for record in records:
        try:
            mixture, target_ref, fs = load_item_audio(record, manifest_path.parent)
            # Contiguous copies: BLAS reductions round differently on strided
            # views, which would break exact identity-extractor deltas.
            estimate = np.ascontiguousarray(extractor(mixture, record.doa_index), dtype=np.float64)
            reference_mix = np.ascontiguousarray(mixture[0], dtype=np.float64)
            si = si_snr(estimate, target_ref, cap_db=cfg.si_snr_cap_db)
            base = si_snr(reference_mix, target_ref, cap_db=cfg.si_snr_cap_db)
            seg = seg_snr(
                estimate,
                target_ref,
                fs,
                frame_ms=cfg.seg_frame_ms,
                clamp=cfg.seg_clamp_db,
            )
        except (FileNotFoundError, OSError, ValueError):
            skipped += 1
            continue
        external = None
        if cfg.external_quality_cmd:
            try:
                external = _external_score(cfg.external_quality_cmd, estimate, target_ref, fs)
            except Exception:
                external_failures += 1
        items.append(
            ItemMetrics(
                record.item_id,
                record.snr_db,
                record.doa_index,
                record.doa_degrees,
                si,
                si - base,
                seg,
                external,
            )
        )

    def grouped(key) -> dict:
        groups: dict = {}
        for item in items:
            groups.setdefault(key(item), []).append(item)
        return {k: GroupStats.from_items(v) for k, v in sorted(groups.items())}

    return MetricsReport(
        items=items,
        overall=GroupStats.from_items(items) if items else None,
        snr_groups=grouped(lambda i: i.snr_db),
        doa_groups=grouped(lambda i: i.doa_degrees),
        skipped=skipped,
        external_failures=external_failures,
    )


# ------------------------------------------------------------------ sweep


@dataclass
class SelectivityProfile:
    """Per-scene delta SI-SNR over the full steering grid."""

    step_deg: int
    steer_degrees: tuple[float, ...]  # covers [0, 360) exactly
    scene_ids: tuple[str, ...]
    target_degrees: tuple[float, ...]  # one per scene
    values: np.ndarray = field(repr=False)  # (num_scenes, num_steers)

    def __post_init__(self):
        want = tuple(float(a) for a in range(0, 360, self.step_deg))
        if self.steer_degrees != want:
            raise ConfigError(
                f"steering grid must cover [0, 360) in {self.step_deg}-degree steps"
            )
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.scene_ids), len(self.steer_degrees)):
            raise ValueError(
                f"profile of shape {self.values.shape} does not match "
                f"{len(self.scene_ids)} scenes x {len(self.steer_degrees)} steers"
            )

    def argmax_degrees(self, scene: int) -> float:
        return self.steer_degrees[int(np.argmax(self.values[scene]))]

    def value_at(self, scene: int, angle_deg: float) -> float:
        idx = int(round(angle_deg / self.step_deg)) % len(self.steer_degrees)
        return float(self.values[scene, idx])

    def to_table(self) -> str:
        lines = ["# scene_id\ttarget_deg\tsteer_deg\tdelta_si_snr_db"]
        for s, scene_id in enumerate(self.scene_ids):
            for j, angle in enumerate(self.steer_degrees):
                lines.append(
                    f"{scene_id}\t{self.target_degrees[s]:.1f}\t{angle:.1f}\t"
                    f"{self.values[s, j]:.4f}"
                )
        return "\n".join(lines) + "\n"


def selectivity_sweep(
    extractor,
    manifest_path,
    cfg: EvalConfig | None = None,
    split: str = "test",
    max_scenes: int = 20,
    sample_rate: int = 16000,
) -> SelectivityProfile:
    """Steer the extractor over the whole grid on each held-out scene."""
    cfg = cfg if cfg is not None else EvalConfig()
    manifest_path = Path(manifest_path)
    records = [r for r in read_manifest(manifest_path) if r.split == split]
    if max_scenes:
        records = records[:max_scenes]
    if not records:
        raise ConfigError(f"manifest {manifest_path} has no '{split}' scenes to sweep")

    steer_degrees = tuple(float(a) for a in range(0, 360, cfg.sweep_step_deg))
    scene_ids, target_degrees, rows = [], [], []
    for record in records:
        mixture, target_ref, fs = load_item_audio(record, manifest_path.parent)
        if cfg.sweep_crop_seconds > 0:
            crop = int(round(cfg.sweep_crop_seconds * fs))
            if target_ref.shape[-1] > crop:
                start = (target_ref.shape[-1] - crop) // 2
                mixture = mixture[:, start : start + crop]
                target_ref = target_ref[start : start + crop]
        base = si_snr(
            np.ascontiguousarray(mixture[0], dtype=np.float64),
            target_ref,
            cap_db=cfg.si_snr_cap_db,
        )
        row = []
        for angle in steer_degrees:
            index = int(round(angle / record.doa_resolution_deg)) % (
                360 // record.doa_resolution_deg
            )
            estimate = np.ascontiguousarray(extractor(mixture, index), dtype=np.float64)
            row.append(si_snr(estimate, target_ref, cap_db=cfg.si_snr_cap_db) - base)
        scene_ids.append(record.item_id)
        target_degrees.append(record.doa_degrees)
        rows.append(row)

    return SelectivityProfile(
        cfg.sweep_step_deg,
        steer_degrees,
        tuple(scene_ids),
        tuple(target_degrees),
        np.array(rows, dtype=np.float64),
    )
