"""Random acoustic scene sampling and reverberant mixture rendering.

Scenes follow a fixed geometric protocol: a small circular microphone
array placed away from the walls of a shoebox room, a target speaker on
a quantized direction-of-arrival grid, and interfering speakers in an
annulus around the array, one per angular segment, with a guaranteed
angular gap around the target and between interferers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from steerex.errors import ConfigError
from steerex.rir import RoomSpec, simulate_rir

DEFAULT_SAMPLE_RATE = 16000

# Angular gap kept clear on each side of the target, and the minimum
# pairwise separation between interferers (both in degrees).
TARGET_GAP_DEG = 10.0
MIN_SEPARATION_DEG = 10.0

# Sources closer than this to a wall make the image model degenerate.
_WALL_CLEARANCE = 0.05


@dataclass(frozen=True)
class SamplingRanges:
    """Ranges and constants for the scene sampler."""

    room_width: tuple[float, float] = (2.5, 5.0)
    room_length: tuple[float, float] = (3.0, 9.0)
    room_height: tuple[float, float] = (2.2, 3.5)
    t60: tuple[float, float] = (0.2, 0.5)
    wall_margin: float = 1.2
    array_height: float = 1.5
    mic_count: int = 3
    array_diameter: float = 0.10
    source_distance: tuple[float, float] = (0.8, 1.2)
    doa_resolution_deg: int = 5
    interferer_count: int = 5
    max_attempts: int = 100

    def __post_init__(self):
        for name in ("room_width", "room_length", "room_height", "t60", "source_distance"):
            lo, hi = getattr(self, name)
            if not (0 <= lo <= hi):
                raise ConfigError(f"{name} range ({lo}, {hi}) is not ordered and nonnegative")
        if self.mic_count < 1:
            raise ConfigError("mic_count must be at least 1")
        if self.array_diameter <= 0:
            raise ConfigError("array_diameter must be positive")
        if 360 % self.doa_resolution_deg != 0:
            raise ConfigError(
                f"doa_resolution_deg {self.doa_resolution_deg} does not divide 360"
            )
        if self.interferer_count < 0:
            raise ConfigError("interferer_count must be nonnegative")
        if self.interferer_count > 0:
            sector = (360.0 - 2 * TARGET_GAP_DEG) / self.interferer_count
            if sector < MIN_SEPARATION_DEG:
                raise ConfigError(
                    f"{self.interferer_count} interferers cannot keep "
                    f"{MIN_SEPARATION_DEG} degrees of separation"
                )
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be at least 1")

    @property
    def direction_count(self) -> int:
        return 360 // self.doa_resolution_deg


@dataclass(frozen=True)
class ArrayPose:
    """Circular microphone array: center, orientation, and layout."""

    center: tuple[float, float, float]
    rotation: float  # radians, [0, 2*pi)
    mic_count: int = 3
    diameter: float = 0.10

    def mic_positions(self) -> np.ndarray:
        """Microphone coordinates, shape (M, 3); mic m sits at the array
        orientation plus m/M of a turn."""
        radius = self.diameter / 2.0
        angles = self.rotation + 2.0 * np.pi * np.arange(self.mic_count) / self.mic_count
        out = np.tile(np.asarray(self.center, dtype=np.float64), (self.mic_count, 1))
        out[:, 0] += radius * np.cos(angles)
        out[:, 1] += radius * np.sin(angles)
        return out


@dataclass(frozen=True)
class SceneSpec:
    """One sampled scene: room, array pose, and source placement.

    All DoAs are degrees measured from the array orientation; the target
    DoA lies on the grid implied by doa_resolution_deg.
    """

    room: RoomSpec
    array: ArrayPose
    target_doa: float
    target_dist: float
    interferer_doas: tuple[float, ...]
    interferer_dists: tuple[float, ...]
    doa_resolution_deg: int = 5

    def __post_init__(self):
        if len(self.interferer_doas) != len(self.interferer_dists):
            raise ConfigError("interferer DoA and distance lists differ in length")
        if 360 % self.doa_resolution_deg != 0:
            raise ConfigError(
                f"doa_resolution_deg {self.doa_resolution_deg} does not divide 360"
            )
        if self.target_dist <= 0 or any(d <= 0 for d in self.interferer_dists):
            raise ConfigError("source distances must be positive")

    @property
    def interferer_count(self) -> int:
        return len(self.interferer_doas)

    def source_position(self, doa_deg: float, dist: float) -> np.ndarray:
        """World coordinates of a source at the given DoA and distance,
        at the array's height."""
        angle = self.array.rotation + math.radians(doa_deg)
        cx, cy, cz = self.array.center
        return np.array([cx + dist * math.cos(angle), cy + dist * math.sin(angle), cz])

    def target_position(self) -> np.ndarray:
        return self.source_position(self.target_doa, self.target_dist)

    def interferer_positions(self) -> np.ndarray:
        if not self.interferer_doas:
            return np.zeros((0, 3))
        return np.stack(
            [
                self.source_position(doa, dist)
                for doa, dist in zip(self.interferer_doas, self.interferer_dists)
            ]
        )


@dataclass
class MixtureItem:
    """Rendered multichannel mixture with its target reference signal.

    The reference is the target convolved with only the direct-path tap
    of its room response at the reference microphone (microphone 0): the
    clean signal, time-aligned to the array, with reflections and
    interference excluded.  Referencing the unaligned clean signal
    instead would make sample-aligned metrics meaningless: speech-like
    signals decorrelate within a few dozen samples, far less than the
    propagation delay.
    """

    mixture: np.ndarray  # (M, L)
    target_ref: np.ndarray  # (L,)
    snr_db: float
    doa_index: int
    scene: SceneSpec
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.mixture = np.atleast_2d(np.asarray(self.mixture, dtype=np.float64))
        self.target_ref = np.asarray(self.target_ref, dtype=np.float64).reshape(-1)
        if self.mixture.shape[1] != self.target_ref.shape[0]:
            raise ValueError(
                f"mixture length {self.mixture.shape[1]} differs from reference "
                f"length {self.target_ref.shape[0]}"
            )


def doa_to_index(phi_deg: float, resolution_deg: int) -> int:
    """Nearest grid index of an angle: round(phi/res) mod (360/res)."""
    if resolution_deg <= 0 or 360 % resolution_deg != 0:
        raise ConfigError(f"resolution {resolution_deg} does not divide 360")
    return int(round(phi_deg / resolution_deg)) % (360 // resolution_deg)


def _inside_with_clearance(pos: np.ndarray, room: RoomSpec) -> bool:
    return bool(
        np.all(pos > _WALL_CLEARANCE) and np.all(pos < room.dims - _WALL_CLEARANCE)
    )


def sample_scene(
    seed: int,
    cfg: SamplingRanges = SamplingRanges(),
    target_doa_index: int | None = None,
) -> SceneSpec:
    """Draw one scene; deterministic for a fixed seed.

    Rejection-samples geometry until every source sits strictly inside the
    room, erroring out after cfg.max_attempts failures.  When
    `target_doa_index` is given the target direction is pinned to that
    grid angle instead of drawn at random.
    """
    rng = np.random.default_rng(np.random.PCG64(seed))
    gap = TARGET_GAP_DEG
    sep = MIN_SEPARATION_DEG
    k = cfg.interferer_count
    if target_doa_index is not None and not 0 <= target_doa_index < cfg.direction_count:
        raise ConfigError(
            f"target_doa_index {target_doa_index} outside [0, {cfg.direction_count})"
        )

    for _ in range(cfg.max_attempts):
        width = rng.uniform(*cfg.room_width)
        length = rng.uniform(*cfg.room_length)
        height = rng.uniform(*cfg.room_height)
        t60 = rng.uniform(*cfg.t60)

        margin = cfg.wall_margin
        if width <= 2 * margin or length <= 2 * margin or cfg.array_height >= height:
            continue
        center = (
            float(rng.uniform(margin, width - margin)),
            float(rng.uniform(margin, length - margin)),
            cfg.array_height,
        )
        array = ArrayPose(
            center=center,
            rotation=float(rng.uniform(0.0, 2.0 * np.pi)),
            mic_count=cfg.mic_count,
            diameter=cfg.array_diameter,
        )

        if target_doa_index is None:
            target_doa = float(
                int(rng.integers(0, cfg.direction_count)) * cfg.doa_resolution_deg
            )
        else:
            target_doa = float(target_doa_index * cfg.doa_resolution_deg)
        target_dist = float(rng.uniform(*cfg.source_distance))

        doas, dists = [], []
        if k > 0:
            sector = (360.0 - 2.0 * gap) / k
            start = target_doa + gap
            for i in range(k):
                lo = start + i * sector + sep / 2.0
                hi = start + (i + 1) * sector - sep / 2.0
                doas.append(float(rng.uniform(lo, hi) % 360.0))
                dists.append(float(rng.uniform(*cfg.source_distance)))

        scene = SceneSpec(
            room=RoomSpec(width, length, height, t60),
            array=array,
            target_doa=target_doa,
            target_dist=target_dist,
            interferer_doas=tuple(doas),
            interferer_dists=tuple(dists),
            doa_resolution_deg=cfg.doa_resolution_deg,
        )

        sources = [scene.target_position(), *scene.interferer_positions()]
        if all(_inside_with_clearance(pos, scene.room) for pos in sources):
            return scene

    raise ConfigError(
        f"could not sample a feasible scene in {cfg.max_attempts} attempts; "
        "check the geometry ranges"
    )


def render_mixture(
    scene: SceneSpec,
    target_wave,
    interferer_waves,
    snr_db: float,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
) -> MixtureItem:
    """Convolve sources with their room responses and mix at an exact SNR.

    The interference sum is scaled so that, at microphone 0, the energy
    ratio of the reverberant target image to the scaled interference
    equals snr_db.  With no interferers the mixture is the plain
    convolution and snr_db is ignored.  The stored reference is the
    target convolved with only the direct-path tap at microphone 0 (see
    MixtureItem).
    """
    target = np.asarray(target_wave, dtype=np.float64).reshape(-1)
    if target.size == 0:
        raise ValueError("target waveform is empty")
    waves = [np.asarray(w, dtype=np.float64).reshape(-1) for w in interferer_waves]
    if len(waves) != scene.interferer_count:
        raise ValueError(
            f"got {len(waves)} interferer waveforms for {scene.interferer_count} interferers"
        )

    length = target.size
    mics = scene.array.mic_positions()

    def convolve_at_mics(wave: np.ndarray, source_pos: np.ndarray) -> np.ndarray:
        rir = simulate_rir(scene.room, source_pos, mics, sample_rate)
        out = np.stack(
            [fftconvolve(wave, rir.taps[m])[:length] for m in range(mics.shape[0])]
        )
        return out

    direct = simulate_rir(
        scene.room, scene.target_position(), mics[0], sample_rate, max_order=0
    )
    target_ref = fftconvolve(target, direct.taps[0])[:length]

    target_image = convolve_at_mics(target, scene.target_position())
    target_energy = float(np.dot(target_image[0], target_image[0]))

    if scene.interferer_count == 0:
        return MixtureItem(
            mixture=target_image,
            target_ref=target_ref,
            snr_db=snr_db,
            doa_index=doa_to_index(scene.target_doa, scene.doa_resolution_deg),
            scene=scene,
            sample_rate=sample_rate,
        )

    if target_energy == 0.0:
        raise ValueError("target is silent at the reference microphone; cannot set SNR")

    noise = np.zeros_like(target_image)
    for wave, pos in zip(waves, scene.interferer_positions()):
        if wave.size < length:
            wave = np.pad(wave, (0, length - wave.size))
        noise += convolve_at_mics(wave[:length], pos)
    noise_energy = float(np.dot(noise[0], noise[0]))
    if noise_energy == 0.0:
        raise ValueError("interference is silent at the reference microphone; cannot set SNR")

    scale = math.sqrt(target_energy / noise_energy * 10.0 ** (-snr_db / 10.0))
    return MixtureItem(
        mixture=target_image + scale * noise,
        target_ref=target_ref,
        snr_db=snr_db,
        doa_index=doa_to_index(scene.target_doa, scene.doa_resolution_deg),
        scene=scene,
        sample_rate=sample_rate,
    )
