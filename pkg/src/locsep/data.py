"""Dry-speech sources and dataset construction.

Licensed corpora are not assumed: any folder of 16 kHz mono WAVs works as a
dry source, and :func:`synthetic_utterance` produces speech-like signals
(voiced/unvoiced excitation through random formant filters, gated by a
syllable-rate envelope) for self-contained runs.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .acoustics import MixtureExample, sample_scenario, spatialize
from .criteria import min_azimuth_gap
from .signals import SAMPLE_RATE, read_wav


def _resonator(freq, bandwidth, fs):
    r = np.exp(-np.pi * bandwidth / fs)
    theta = 2 * np.pi * freq / fs
    return np.array([1.0, -2 * r * np.cos(theta), r * r])


def synthetic_utterance(rng, n_samples: int, fs: int = SAMPLE_RATE, rms: float = 0.05) -> np.ndarray:
    """Speech-like test signal with a random pitch, formants and syllable rhythm."""
    t = np.arange(n_samples) / fs
    f0 = rng.uniform(90, 250) * (1 + 0.05 * np.sin(2 * np.pi * rng.uniform(0.5, 2) * t))
    phase = 2 * np.pi * np.cumsum(f0) / fs
    voiced = (np.sin(phase) > 0.95).astype(float)  # narrow pulse train
    excitation = voiced + 0.3 * rng.standard_normal(n_samples)
    a = np.array([1.0])
    for lo, hi in ((300, 900), (900, 2500), (2500, 3800)):
        a = np.convolve(a, _resonator(rng.uniform(lo, hi), rng.uniform(80, 200), fs))
    x = lfilter([1.0, -0.9], a, excitation)
    rate = rng.uniform(3, 6)
    env = np.clip(np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)), 0, None) ** 0.7
    gate = np.repeat(rng.random(int(np.ceil(n_samples / 1600)) + 1) > 0.2, 1600)[:n_samples]
    env = env * (0.15 + 0.85 * gate)
    x = x * env
    return rms * x / (np.sqrt(np.mean(x**2)) + 1e-12)


class DrySource:
    """Pool of dry utterances: WAV files from ``directory`` or synthetic signals."""

    def __init__(self, directory=None, duration: float = 1.0, fs: int = SAMPLE_RATE):
        self.directory = directory
        self.duration = duration
        self.fs = fs
        self.files = sorted(Path(directory).glob("*.wav")) if directory else []
        if directory and not self.files:
            raise FileNotFoundError(f"no .wav files in {directory}")

    def draw(self, rng, n: int) -> tuple[list, list]:
        n_samples = int(round(self.duration * self.fs))
        if not self.files:
            seeds = rng.integers(0, 2**31, size=n)
            return [synthetic_utterance(np.random.default_rng(s), n_samples, self.fs) for s in seeds], [
                f"synth-{s}" for s in seeds
            ]
        picks = rng.choice(len(self.files), size=n, replace=False)
        out = []
        for i in picks:
            x = read_wav(self.files[i], self.fs)[0][:n_samples]
            out.append(x)
        return out, [self.files[i].stem for i in picks]


def make_example(
    seed: int,
    n_speakers=2,
    azimuth_resolution=5,
    reverberant=False,
    source=None,
    min_gap=None,
    max_gap=None,
    rir_provider=None,
):
    """Deterministic example for ``seed``; azimuth-gap bounds are enforced by redrawing the scene.

    ``rir_provider(scenario)`` may supply (e.g. cached) RIRs.
    """
    source = source or DrySource()
    rng = np.random.default_rng(seed)
    for _ in range(10000):
        scenario = sample_scenario(rng, n_speakers, azimuth_resolution, reverberant, seed=seed)
        if n_speakers < 2:
            break
        gap = min_azimuth_gap(scenario.azimuths)
        if (min_gap is None or gap >= min_gap) and (max_gap is None or gap <= max_gap):
            break
    else:
        raise RuntimeError(f"seed {seed}: no scene met the azimuth-gap bounds")
    dry, ids = source.draw(rng, n_speakers)
    rirs = rir_provider(scenario) if rir_provider is not None else None
    return spatialize(dry, scenario, rirs=rirs, utterance_ids=ids)


def make_dataset(count: int, seed: int = 0, **kwargs) -> list[MixtureExample]:
    """``count`` examples with per-example seeds spawned from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(count) if count else []
    return [make_example(int(s), **kwargs) for s in seeds]
