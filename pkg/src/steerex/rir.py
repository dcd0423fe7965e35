"""Image-source room impulse responses for rectangular rooms.

Shoebox model: image sources live at (1-2p)*(src + 2*r*W) per axis for
parity p in {0,1} and integer order r, with amplitude beta1^|r+p| *
beta2^|r| per axis and 1/(4*pi*d) spherical spreading.  Uniform wall
reflectivity is derived from the requested reverberation time and then
calibrated against a probe render, because the raw Sabine/Eyring
inversion realizes noticeably long decays in elongated rooms (the late
tail is dominated by the slowest axial image chain).  The reflection
coefficient is negative so that images sharing a rounded tap do not pile
up coherently, which would also stretch the realized decay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

SPEED_OF_SOUND = 343.0

# Extra tail past the nominal reverberation time so the -60 dB decay point
# stays inside the rendered response.
RIR_TAIL_MARGIN_S = 0.05

# Probe-calibration loop: stop when the realized decay time is within this
# relative tolerance of the request, or after this many refinements.
_CALIBRATION_RTOL = 0.03
_CALIBRATION_ROUNDS = 3

# Probe endpoints as fractions of the room dimensions; two pairs to average
# out position dependence, asymmetric so no image pair degenerates onto the
# same delay systematically.
_PROBE_PAIRS = (
    (np.array([0.31, 0.37, 0.43]), np.array([0.67, 0.61, 0.53])),
    (np.array([0.72, 0.29, 0.58]), np.array([0.41, 0.73, 0.47])),
)


@dataclass(frozen=True)
class RoomSpec:
    """Rectangular room with a broadband reverberation time."""

    width: float
    length: float
    height: float
    t60: float

    def __post_init__(self):
        for name in ("width", "length", "height"):
            if getattr(self, name) <= 0:
                raise ValueError(f"room {name} must be positive")
        if self.t60 < 0:
            raise ValueError("t60 must be nonnegative")

    @property
    def dims(self) -> np.ndarray:
        return np.array([self.width, self.length, self.height])

    @property
    def volume(self) -> float:
        return self.width * self.length * self.height

    @property
    def surface_area(self) -> float:
        w, l, h = self.width, self.length, self.height
        return 2.0 * (w * l + w * h + l * h)


@dataclass
class Rir:
    """Per-microphone impulse responses, taps shape (M, length)."""

    taps: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.taps = np.atleast_2d(np.asarray(self.taps, dtype=np.float64))
        if not np.all(np.isfinite(self.taps)):
            raise ValueError("impulse response contains non-finite values")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def mic_count(self) -> int:
        return self.taps.shape[0]


def absorption_from_t60(room: RoomSpec, formula: str = "sabine") -> float:
    """Uniform wall energy absorption realizing the room's T60.

    Sabine inversion alpha = 0.161 V / (S * T60), clamped to 1 in small
    dead rooms; the Eyring variant alpha = 1 - exp(-0.161 V / (S * T60))
    absorbs less and realizes longer decays under this renderer.
    """
    if room.t60 == 0:
        return 1.0
    x = 0.161 * room.volume / (room.surface_area * room.t60)
    if formula == "sabine":
        return min(x, 1.0)
    if formula == "eyring":
        return 1.0 - math.exp(-x)
    raise ValueError(f"unknown absorption formula: {formula!r}")


def schroeder_decay_time(taps: np.ndarray, fs: int) -> float:
    """Decay time from Schroeder backward integration, fit on -5..-25 dB.

    Returns NaN when the response never reaches -25 dB.
    """
    taps = np.asarray(taps, dtype=np.float64).reshape(-1)
    energy = taps**2
    total = energy.sum()
    if total <= 0:
        return float("nan")
    edc = np.cumsum(energy[::-1])[::-1] / total
    edc_db = 10.0 * np.log10(np.maximum(edc, 1e-30))
    i_hi = int(np.argmax(edc_db <= -5.0))
    i_lo = int(np.argmax(edc_db <= -25.0))
    if i_lo <= i_hi:
        return float("nan")
    t = np.arange(taps.size) / fs
    slope, _ = np.polyfit(t[i_hi:i_lo], edc_db[i_hi:i_lo], 1)
    if slope >= 0:
        return float("nan")
    return float(-60.0 / slope)


def _render(
    room: RoomSpec,
    source: np.ndarray,
    mics: np.ndarray,
    fs: int,
    npts: int,
    beta: float,
    max_order: int | None,
) -> np.ndarray:
    reach = npts / fs * SPEED_OF_SOUND  # farthest audible image distance
    dims = room.dims
    if max_order is None:
        orders = np.ceil(reach / (2.0 * dims)).astype(int)
    else:
        orders = np.full(3, max_order, dtype=int)

    axes = [np.arange(-orders[i], orders[i] + 1, dtype=np.float64) for i in range(3)]
    rx, ry, rz = np.meshgrid(*axes, indexing="ij")
    lattice = np.stack([rx.ravel(), ry.ravel(), rz.ravel()], axis=1)  # (R, 3)

    center = mics.mean(axis=0)
    margin = float(np.linalg.norm(mics - center, axis=1).max()) + 2.0 * SPEED_OF_SOUND / fs

    taps = np.zeros((mics.shape[0], npts))
    shifted = source + 2.0 * lattice * dims  # (R, 3)
    bounce_r = np.abs(lattice).sum(axis=1)  # reflections independent of parity
    for px in (0, 1):
        for py in (0, 1):
            for pz in (0, 1):
                parity = np.array([px, py, pz], dtype=np.float64)
                pos = (1.0 - 2.0 * parity) * shifted
                bounces = np.abs(lattice + parity).sum(axis=1) + bounce_r
                # prune images that cannot land inside the response window
                near = np.linalg.norm(pos - center, axis=1) <= reach + margin
                pos_n, bounces_n = pos[near], bounces[near]
                amps = beta**bounces_n
                for m in range(mics.shape[0]):
                    d = np.linalg.norm(pos_n - mics[m], axis=1)
                    delay = np.rint(d / SPEED_OF_SOUND * fs).astype(np.int64)
                    ok = (delay < npts) & (d > 0)
                    taps[m] += np.bincount(
                        delay[ok],
                        weights=amps[ok] / (4.0 * math.pi * d[ok]),
                        minlength=npts,
                    )
    return taps


@lru_cache(maxsize=256)
def calibrated_reflectivity(room: RoomSpec, fs: int) -> float:
    """Wall reflection coefficient (negative) realizing the room's T60.

    Starts from the Sabine inversion and refines against probe renders
    until the measured Schroeder decay matches the request.  Deterministic
    in its inputs; cached because every source in a scene shares the room.
    """
    alpha = absorption_from_t60(room)
    if alpha >= 1.0:
        return 0.0
    beta = math.sqrt(1.0 - alpha)
    npts = int(math.ceil((room.t60 + 2 * RIR_TAIL_MARGIN_S) * fs))
    for _ in range(_CALIBRATION_ROUNDS):
        realized = []
        for src_frac, mic_frac in _PROBE_PAIRS:
            probe = _render(
                room,
                src_frac * room.dims,
                (mic_frac * room.dims)[np.newaxis, :],
                fs,
                npts,
                -beta,
                None,
            )
            est = schroeder_decay_time(probe[0], fs)
            if math.isfinite(est) and est > 0:
                realized.append(est)
        if not realized:
            break
        ratio = float(np.mean(realized)) / room.t60
        if abs(ratio - 1.0) <= _CALIBRATION_RTOL:
            break
        alpha = min(alpha * ratio, 0.999999)
        beta = math.sqrt(1.0 - alpha)
    return -beta


def _check_inside(name: str, pos: np.ndarray, room: RoomSpec):
    if pos.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {pos.shape}")
    if np.any(pos <= 0) or np.any(pos >= room.dims):
        raise ValueError(f"{name} {pos.tolist()} is not strictly inside the room")


def simulate_rir(
    room: RoomSpec,
    source_pos,
    mic_pos,
    fs: int,
    max_order: int | None = None,
    rir_seconds: float | None = None,
) -> Rir:
    """Render image-source impulse responses from one source to M microphones.

    mic_pos may be a single 3-vector or an (M, 3) array.  The response
    length covers the reverberation tail (t60 plus a margin) unless
    rir_seconds overrides it; max_order truncates the image lattice
    symmetrically when given, otherwise enough orders are used to cover
    the response length.
    """
    if fs <= 0:
        raise ValueError("fs must be positive")
    if max_order is not None and max_order < 0:
        raise ValueError("max_order must be nonnegative")
    source = np.asarray(source_pos, dtype=np.float64)
    mics = np.atleast_2d(np.asarray(mic_pos, dtype=np.float64))
    _check_inside("source", source, room)
    for i, mic in enumerate(mics):
        _check_inside(f"microphone {i}", mic, room)

    if rir_seconds is None:
        direct_s = float(np.linalg.norm(source - mics, axis=1).max()) / SPEED_OF_SOUND
        rir_seconds = direct_s + room.t60 + RIR_TAIL_MARGIN_S
    npts = max(int(math.ceil(rir_seconds * fs)), 1)

    beta = calibrated_reflectivity(room, fs)
    return Rir(_render(room, source, mics, fs, npts, beta, max_order), fs)


def direct_path_delay(source_pos, mic_pos, fs: int) -> int:
    """Nearest-sample delay of the direct path."""
    d = float(np.linalg.norm(np.asarray(source_pos, float) - np.asarray(mic_pos, float)))
    return int(round(d / SPEED_OF_SOUND * fs))
