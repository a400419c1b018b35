"""Scene sampling, image-method room impulse responses and spatialization.

Coordinates are metres in a shoebox room with one corner at the origin.
Azimuth 0 points along the room (and array) x-axis and grows
counter-clockwise; angles are carried in degrees.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from numba import njit
from scipy.optimize import brentq
from scipy.signal import fftconvolve

from .signals import SAMPLE_RATE

SPEED_OF_SOUND = 343.0
ARRAY_RADIUS = 0.0425
ARRAY_HEIGHT = 1.5
MIN_DISTANCE = 0.3
MIN_DISTANCE_GAP = 0.2
WALL_MARGIN = 0.5
ROOM_LOW = (4.0, 4.0, 3.0)
ROOM_HIGH = (6.0, 6.0, 4.0)
T60_RANGE = (0.15, 0.6)
SINC_TAPS = 81
MAX_SPEAKERS = 5


@dataclass(frozen=True)
class ArrayGeometry:
    """Microphone offsets relative to the array center, shape ``(n_mics, 3)``."""

    offsets: tuple

    @classmethod
    def circular(cls, radius: float = ARRAY_RADIUS, n_ring: int = 6) -> "ArrayGeometry":
        """Center mic (index 0) plus ``n_ring`` mics evenly spaced on a horizontal circle."""
        angles = 2 * np.pi * np.arange(n_ring) / n_ring
        ring = [(radius * np.cos(a), radius * np.sin(a), 0.0) for a in angles]
        return cls(offsets=((0.0, 0.0, 0.0), *ring))

    @property
    def n_mics(self) -> int:
        return len(self.offsets)

    def positions(self, center) -> np.ndarray:
        return np.asarray(center, dtype=float) + np.asarray(self.offsets, dtype=float)


@dataclass(frozen=True)
class Room:
    dims: tuple
    t60: float = 0.0

    @property
    def volume(self) -> float:
        return float(np.prod(self.dims))

    @property
    def surface(self) -> float:
        L, W, H = self.dims
        return 2.0 * (L * W + L * H + W * H)

    def reflection_coefficient(self) -> float:
        """Uniform wall pressure reflection coefficient that reproduces ``t60``.

        Closed-form Sabine/Eyring inversions miss the image-method decay by
        up to 40% in small absorbing rooms, so the coefficient is solved for
        numerically: the Schroeder T60 of the image-energy decay for a
        reference source 1 m from the room center must equal ``t60``.
        """
        if self.t60 <= 0:
            return 0.0
        return _calibrated_beta(tuple(float(v) for v in self.dims), float(self.t60))

    def max_order(self) -> int:
        if self.t60 <= 0:
            return 0
        return int(np.ceil(SPEED_OF_SOUND * self.t60 / min(self.dims))) + 1

    def contains(self, point, margin: float = 0.0) -> bool:
        p = np.asarray(point)
        return bool(np.all(p > margin) and np.all(p < np.asarray(self.dims) - margin))


@dataclass(frozen=True)
class SourcePlacement:
    azimuth: float  # degrees in [-180, 180)
    distance: float  # metres from the array center


@dataclass(frozen=True)
class Scenario:
    room: Room
    array_center: tuple
    sources: tuple
    azimuth_resolution: float = 5.0
    seed: int | None = None
    array: ArrayGeometry = field(default_factory=ArrayGeometry.circular)

    @property
    def n_speakers(self) -> int:
        return len(self.sources)

    @property
    def azimuths(self) -> np.ndarray:
        return np.array([s.azimuth for s in self.sources], dtype=float)

    @property
    def distances(self) -> np.ndarray:
        return np.array([s.distance for s in self.sources], dtype=float)

    def source_positions(self) -> np.ndarray:
        az = np.deg2rad(self.azimuths)
        d = self.distances
        c = np.asarray(self.array_center, dtype=float)
        return np.stack([c[0] + d * np.cos(az), c[1] + d * np.sin(az), np.full_like(d, c[2])], axis=1)

    def mic_positions(self) -> np.ndarray:
        return self.array.positions(self.array_center)

    def to_dict(self) -> dict:
        return {
            "room": {"dims": list(self.room.dims), "t60": self.room.t60},
            "array_center": list(self.array_center),
            "array_offsets": [list(o) for o in self.array.offsets],
            "sources": [asdict(s) for s in self.sources],
            "azimuth_resolution": self.azimuth_resolution,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(
            room=Room(dims=tuple(d["room"]["dims"]), t60=float(d["room"]["t60"])),
            array_center=tuple(d["array_center"]),
            sources=tuple(SourcePlacement(**s) for s in d["sources"]),
            azimuth_resolution=float(d["azimuth_resolution"]),
            seed=d.get("seed"),
            array=ArrayGeometry(offsets=tuple(tuple(o) for o in d["array_offsets"])),
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class MixtureExample:
    mixture: np.ndarray  # (n_mics, samples)
    targets: np.ndarray  # (n_speakers, samples), direct path at the reference mic
    scenario: Scenario
    utterance_ids: list = field(default_factory=list)


def azimuth_grid(resolution: float) -> np.ndarray:
    if 360.0 % resolution:
        raise ValueError(f"azimuth resolution {resolution} does not divide 360")
    return np.arange(-180.0, 180.0, resolution)


def _sample_distances(rng, n, low, high, gap):
    # uniform over {d in [low, high]^n : |d_i - d_j| >= gap} via the spacing transform
    slack = (high - low) - (n - 1) * gap
    if slack < 0:
        raise ValueError(f"cannot place {n} sources {gap} m apart within [{low}, {high}] m")
    base = np.sort(rng.uniform(0.0, slack, size=n)) + gap * np.arange(n) + low
    return base[rng.permutation(n)]


def sample_scenario(
    rng,
    n_speakers: int = 2,
    azimuth_resolution: float = 5.0,
    reverberant: bool = True,
    seed: int | None = None,
) -> Scenario:
    """Draw a random room, reverberation time and speaker layout.

    ``rng`` is a ``numpy.random.Generator`` or an integer seed. Azimuths are
    distinct points of the candidate grid; distances are at least 0.3 m and
    pairwise at least 0.2 m apart; the array sits at the horizontal room
    center at 1.5 m height.
    """
    if not 1 <= n_speakers <= MAX_SPEAKERS:
        raise ValueError(f"n_speakers must be in [1, {MAX_SPEAKERS}], got {n_speakers}")
    if azimuth_resolution not in (1, 5):
        raise ValueError("azimuth_resolution must be 5 or 1 degrees")
    if not isinstance(rng, np.random.Generator):
        seed = int(rng) if seed is None else seed
        rng = np.random.default_rng(rng)
    dims = tuple(float(v) for v in rng.uniform(ROOM_LOW, ROOM_HIGH))
    t60 = float(rng.uniform(*T60_RANGE)) if reverberant else 0.0
    grid = azimuth_grid(azimuth_resolution)
    azimuths = rng.choice(grid, size=n_speakers, replace=False)
    max_distance = min(dims[0], dims[1]) / 2.0 - WALL_MARGIN
    distances = _sample_distances(rng, n_speakers, MIN_DISTANCE, max_distance, MIN_DISTANCE_GAP)
    sources = tuple(SourcePlacement(float(a), float(d)) for a, d in zip(azimuths, distances))
    center = (dims[0] / 2.0, dims[1] / 2.0, ARRAY_HEIGHT)
    return Scenario(Room(dims, t60), center, sources, float(azimuth_resolution), seed)


def check_scenario(scenario: Scenario) -> list[str]:
    """Return the list of violated simulation constraints (empty when valid)."""
    problems = []
    L, W, H = scenario.room.dims
    if not all(lo <= v <= hi for v, lo, hi in zip(scenario.room.dims, ROOM_LOW, ROOM_HIGH)):
        problems.append(f"room dims {scenario.room.dims} out of range")
    t60 = scenario.room.t60
    if not (t60 == 0.0 or T60_RANGE[0] <= t60 <= T60_RANGE[1]):
        problems.append(f"t60 {t60} out of range")
    grid = azimuth_grid(scenario.azimuth_resolution)
    az = scenario.azimuths
    if not np.all(np.isin(az, grid)):
        problems.append("azimuth off the candidate grid")
    if len(np.unique(az)) != len(az):
        problems.append("duplicate azimuths")
    d = scenario.distances
    if np.any(d < MIN_DISTANCE):
        problems.append("source closer than 0.3 m")
    if len(d) > 1:
        gaps = np.abs(d[:, None] - d[None, :])[np.triu_indices(len(d), 1)]
        if np.any(gaps < MIN_DISTANCE_GAP - 1e-12):
            problems.append("distance gap below 0.2 m")
    if not np.allclose(scenario.array_center[:2], (L / 2, W / 2)):
        problems.append("array not at room center")
    for p in scenario.source_positions():
        if not scenario.room.contains(p):
            problems.append("source outside room")
    return problems


def _image_sources(room: Room, src, max_range: float):
    """Image positions and wall-hit counts for images closer than ``max_range``.

    The per-axis image index is bounded by ``room.max_order()`` and by the
    range, so only the lattice cells that can reach the sphere are built.
    """
    order = room.max_order()
    dims = np.asarray(room.dims, dtype=float)
    src = np.asarray(src, dtype=float)
    u = np.array([0, 1])
    positions, counts = [], []
    for axis in range(3):
        n_ax = min(order, int(np.ceil(max_range / (2 * dims[axis]))) + 1)
        n = np.arange(-n_ax, n_ax + 1)
        # coordinate (1 - 2u) s + 2nL reflects |n - u| + |n| times
        positions.append(((1 - 2 * u[:, None]) * src[axis] + 2 * n[None, :] * dims[axis]).ravel())
        counts.append((np.abs(n[None, :] - u[:, None]) + np.abs(n[None, :])).ravel())
    px, py, pz = np.meshgrid(*positions, indexing="ij", sparse=True)
    cx, cy, cz = np.meshgrid(*counts, indexing="ij", sparse=True)
    pos = np.stack(np.broadcast_arrays(px, py, pz), axis=-1).reshape(-1, 3)
    hits = (cx + cy + cz).ravel()
    return pos, hits


def rir_length(room: Room, max_distance: float, fs: int = SAMPLE_RATE) -> int:
    direct = int(np.ceil(max_distance / SPEED_OF_SOUND * fs))
    return max(int(np.ceil(room.t60 * fs)), 0) + direct + SINC_TAPS


def _image_paths(room: Room, src, mic, length: int, fs: int):
    reach = (length + SINC_TAPS // 2) / fs * SPEED_OF_SOUND
    pos, hits = _image_sources(room, src, reach)
    return _paths_to(pos, hits, room, mic, length, fs)


def _paths_to(pos, hits, room, mic, length, fs):
    dist = np.linalg.norm(pos - np.asarray(mic, dtype=float), axis=1)
    delay = dist / SPEED_OF_SOUND * fs
    keep = delay < length + SINC_TAPS // 2
    if room.t60 <= 0:
        keep &= hits == 0
    return dist[keep], delay[keep], hits[keep]


@lru_cache(maxsize=256)
def _calibrated_beta(dims: tuple, t60: float, fs: int = SAMPLE_RATE) -> float:
    center = np.array([dims[0] / 2, dims[1] / 2, ARRAY_HEIGHT])
    src = center + np.array([0.8, 0.6, 0.0])
    # longer window so truncation never caps the fitted decay
    room = Room(dims, 1.5 * t60)
    length = rir_length(room, 1.0, fs)
    dist, delay, hits = _image_paths(room, src, center, length, fs)
    idx = np.minimum(np.round(delay).astype(int), length - 1)
    spread = 1.0 / dist

    def mismatch(beta):
        # amplitudes, not energies: coincident images add coherently
        amp = np.bincount(idx, weights=spread * beta ** hits.astype(float), minlength=length)
        try:
            return _t60_from_energy(amp**2, fs) - t60
        except ValueError:
            return -t60

    # image decay is slower than Eyring's, so Eyring at the target brackets from below
    alpha = 1.0 - np.exp(-0.161 * room.volume / (room.surface * t60))
    lo = max(np.sqrt(1.0 - alpha) * 0.5, 1e-3)
    hi = np.sqrt(1.0 - alpha)
    while mismatch(hi) < 0 and hi < 0.999:
        hi = min(0.999, 1.0 - (1.0 - hi) / 2)
    if mismatch(hi) < 0:
        return 0.999
    while mismatch(lo) > 0 and lo > 1e-3:
        lo = max(lo / 2, 1e-3)
    return float(brentq(mismatch, lo, hi, xtol=1e-7))


def simulate_rir(room: Room, src, mic, fs: int = SAMPLE_RATE, length: int | None = None) -> np.ndarray:
    """Image-method impulse response from ``src`` to ``mic``.

    Every image contributes ``beta**hits / (4 pi r)`` rendered at its
    fractional delay with an 81-tap Hann-windowed sinc. A zero ``t60`` keeps
    only the direct path.
    """
    src = np.asarray(src, dtype=float)
    mic = np.asarray(mic, dtype=float)
    if not room.contains(src) or not room.contains(mic):
        raise ValueError("source and microphone must lie strictly inside the room")
    if np.linalg.norm(src - mic) < 1e-6:
        raise ValueError("source and microphone coincide")
    if length is None:
        length = rir_length(room, np.linalg.norm(src - mic), fs)
    beta = room.reflection_coefficient()
    dist, delay, hits = _image_paths(room, src, mic, length, fs)
    gain = beta ** hits.astype(float) / (4 * np.pi * dist)
    return _render_taps(delay, gain, length)


@njit(cache=True)
def _render_taps(delay, gain, length):
    half = SINC_TAPS // 2
    step = np.pi / (half + 1)
    cos_step, sin_step = np.cos(step), np.sin(step)
    h = np.zeros(length)
    for i in range(delay.shape[0]):
        d = delay[i]
        center = int(np.floor(d + 0.5))
        x = center - half - d
        # sin(pi x) flips sign each tap; window phase advances by a fixed rotation
        s_pi = np.sin(np.pi * x)
        wc, ws = np.cos(step * x), np.sin(step * x)
        g = gain[i]
        for k in range(2 * half + 1):
            idx = center - half + k
            if 0 <= idx < length:
                if abs(x) < 1e-12:
                    sinc = 1.0
                else:
                    sinc = s_pi / (np.pi * x)
                h[idx] += g * sinc * (0.5 + 0.5 * wc)
            x += 1.0
            s_pi = -s_pi
            wc, ws = wc * cos_step - ws * sin_step, ws * cos_step + wc * sin_step
    return h


def _t60_from_energy(energy, fs, fit_db=(-5.0, -25.0)) -> float:
    tail = np.cumsum(np.asarray(energy, dtype=float)[::-1])[::-1]
    edc = 10 * np.log10(tail / tail[0] + 1e-300)
    hi, lo = fit_db
    start = int(np.argmax(edc <= hi))
    stop = int(np.argmax(edc <= lo))
    if stop <= start + 1:
        raise ValueError("decay curve too short for the requested fit range")
    t = np.arange(start, stop) / fs
    slope, _ = np.polyfit(t, edc[start:stop], 1)
    return float(-60.0 / slope)


def schroeder_t60(rir, fs: int = SAMPLE_RATE, fit_db=(-5.0, -25.0)) -> float:
    """T60 extrapolated from a line fit to the Schroeder energy decay curve."""
    return _t60_from_energy(np.asarray(rir, dtype=float) ** 2, fs, fit_db)


def scenario_rirs(scenario: Scenario, fs: int = SAMPLE_RATE) -> np.ndarray:
    """Full RIRs, shape ``(n_speakers, n_mics, taps)``."""
    room = scenario.room
    srcs = scenario.source_positions()
    mics = scenario.mic_positions()
    for p in (*srcs, *mics):
        if not room.contains(p):
            raise ValueError("source and microphone must lie strictly inside the room")
    far = max(np.linalg.norm(s - m) for s in srcs for m in mics)
    length = rir_length(room, far, fs)
    beta = room.reflection_coefficient()
    reach = (length + SINC_TAPS // 2) / fs * SPEED_OF_SOUND
    out = np.empty((len(srcs), len(mics), length))
    for i, s in enumerate(srcs):
        pos, hits = _image_sources(room, s, reach)
        for j, m in enumerate(mics):
            dist, delay, h = _paths_to(pos, hits, room, m, length, fs)
            out[i, j] = _render_taps(delay, beta ** h.astype(float) / (4 * np.pi * dist), length)
    return out


def direct_rirs(scenario: Scenario, fs: int = SAMPLE_RATE) -> np.ndarray:
    """Order-0 (direct path) RIRs at the reference mic, shape ``(n_speakers, taps)``."""
    dry_room = Room(scenario.room.dims, 0.0)
    ref = scenario.mic_positions()[0]
    srcs = scenario.source_positions()
    far = max(np.linalg.norm(s - ref) for s in srcs)
    length = rir_length(dry_room, far, fs)
    return np.stack([simulate_rir(dry_room, s, ref, fs, length) for s in srcs])


def spatialize(dry, scenario: Scenario, rirs=None, utterance_ids=None) -> MixtureExample:
    """Convolve dry utterances with the scenario RIRs and sum per microphone.

    Shorter utterances are zero-padded; every output is trimmed to the
    longest dry signal. Targets are the direct-path images at mic 0.
    """
    dry = [np.asarray(x, dtype=float) for x in dry]
    if len(dry) != scenario.n_speakers:
        raise ValueError(f"{len(dry)} dry signals for {scenario.n_speakers} speakers")
    if any(x.ndim != 1 or x.size == 0 for x in dry):
        raise ValueError("dry signals must be nonempty mono arrays")
    n = max(x.size for x in dry)
    dry = np.stack([np.pad(x, (0, n - x.size)) for x in dry])
    if rirs is None:
        rirs = scenario_rirs(scenario)
    direct = direct_rirs(scenario)
    mixture = np.zeros((rirs.shape[1], n))
    for k in range(len(dry)):
        mixture += fftconvolve(dry[k][None, :], rirs[k], axes=-1)[:, :n]
    targets = np.stack([fftconvolve(dry[k], direct[k])[:n] for k in range(len(dry))])
    ids = list(utterance_ids) if utterance_ids is not None else [f"spk{k}" for k in range(len(dry))]
    return MixtureExample(mixture, targets, scenario, ids)


def geometry_truth(scenario: Scenario) -> tuple[tuple, tuple]:
    """Speaker indices sorted by azimuth on [0, 360) and by ascending distance.

    Azimuth ties go to the nearer speaker, distance ties to the smaller
    azimuth, remaining ties to the lower index.
    """
    az = np.mod(scenario.azimuths, 360.0)
    d = scenario.distances
    idx = np.arange(len(az))
    by_az = np.lexsort((idx, d, az))
    by_dist = np.lexsort((idx, az, d))
    return tuple(int(i) for i in by_az), tuple(int(i) for i in by_dist)
