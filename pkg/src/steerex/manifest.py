"""Dataset manifests: one JSON record per line, stable byte-for-byte.

Records store paths relative to the manifest's directory so a dataset
directory can be moved wholesale.  Serialization sorts keys and fixes
separators, making write -> read -> write byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from steerex.audio_io import read_wav, write_wav
from steerex.errors import ConfigError
from steerex.scene import MixtureItem, doa_to_index


@dataclass(frozen=True)
class ManifestRecord:
    """One dataset item: audio paths plus the scene facts needed downstream."""

    item_id: str
    mixture_path: str
    target_path: str
    snr_db: float
    doa_index: int
    doa_degrees: float
    doa_resolution_deg: int
    room_dims: tuple[float, float, float]
    t60: float
    interferer_count: int
    split: str

    def __post_init__(self):
        if doa_to_index(self.doa_degrees, self.doa_resolution_deg) != self.doa_index:
            raise ConfigError(
                f"doa_index {self.doa_index} does not match doa_degrees "
                f"{self.doa_degrees} at {self.doa_resolution_deg} degree resolution"
            )
        if len(self.room_dims) != 3:
            raise ConfigError("room_dims must have three entries")

    def to_json(self) -> str:
        data = asdict(self)
        data["room_dims"] = list(self.room_dims)
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "ManifestRecord":
        data = json.loads(line)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown manifest keys: {sorted(unknown)}")
        missing = known - set(data)
        if missing:
            raise ConfigError(f"missing manifest keys: {sorted(missing)}")
        data["room_dims"] = tuple(float(v) for v in data["room_dims"])
        return cls(**data)


def write_manifest(records, path):
    """Write records as JSON lines; parent directories are created."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_json())
            fh.write("\n")


def read_manifest(path) -> list[ManifestRecord]:
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(ManifestRecord.from_json(line))
            except (json.JSONDecodeError, TypeError) as exc:
                raise ConfigError(f"{path}:{i + 1}: malformed manifest line: {exc}") from exc
    return records


def write_item_audio(
    item: MixtureItem, out_dir, item_id: str, split: str
) -> ManifestRecord:
    """Write a mixture item's WAVs under out_dir and return its record."""
    out_dir = Path(out_dir)
    mixture_rel = f"audio/{item_id}_mix.wav"
    target_rel = f"audio/{item_id}_target.wav"
    write_wav(out_dir / mixture_rel, item.mixture, item.sample_rate)
    write_wav(out_dir / target_rel, item.target_ref, item.sample_rate)
    room = item.scene.room
    return ManifestRecord(
        item_id=item_id,
        mixture_path=mixture_rel,
        target_path=target_rel,
        snr_db=float(item.snr_db),
        doa_index=item.doa_index,
        doa_degrees=float(item.scene.target_doa),
        doa_resolution_deg=item.scene.doa_resolution_deg,
        room_dims=(room.width, room.length, room.height),
        t60=room.t60,
        interferer_count=item.scene.interferer_count,
        split=split,
    )


def load_item_audio(record: ManifestRecord, manifest_dir) -> tuple[np.ndarray, np.ndarray, int]:
    """Load (mixture (M, L), target reference (L,), sample_rate) for a record."""
    base = Path(manifest_dir)
    mixture, fs_mix = read_wav(base / record.mixture_path)
    target, fs_tgt = read_wav(base / record.target_path)
    if fs_mix != fs_tgt:
        raise ConfigError(
            f"sample-rate mismatch between {record.mixture_path} ({fs_mix}) "
            f"and {record.target_path} ({fs_tgt})"
        )
    return np.atleast_2d(mixture), target.reshape(-1), fs_mix
