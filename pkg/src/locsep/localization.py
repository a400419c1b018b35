"""Mask-weighted GCC-PHAT azimuth estimation for a planar microphone array."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .acoustics import SPEED_OF_SOUND, ArrayGeometry
from .signals import DEFAULT_STFT, SAMPLE_RATE, StftConfig

EPS = 1e-8
FREQ_RANGE = (100.0, 7800.0)


@dataclass(frozen=True)
class SteeringTable:
    grid: np.ndarray  # candidate azimuths, degrees in [0, 360)
    pairs: tuple  # (p, q) microphone index pairs, p < q
    delays: np.ndarray  # (n_pairs, n_grid) expected TDOA in seconds


@dataclass(frozen=True)
class AzimuthEstimateSet:
    azimuths: np.ndarray  # (n_speakers,) degrees
    profiles: np.ndarray  # (n_speakers, n_grid)
    grid: np.ndarray

    @property
    def grid_step(self) -> float:
        return float(self.grid[1] - self.grid[0]) if len(self.grid) > 1 else 360.0

    def to_json(self, include_profiles: bool = False) -> list:
        out = []
        for k, az in enumerate(self.azimuths):
            rec = {"speaker": k, "azimuth_deg": float(az), "grid_step": self.grid_step}
            if include_profiles:
                rec["score_profile"] = [float(v) for v in self.profiles[k]]
            out.append(rec)
        return out


def build_steering_table(array: ArrayGeometry | None = None, grid_step: float = 1.0, c: float = SPEED_OF_SOUND):
    """Far-field TDOAs ``tau_pq(theta) = u(theta) . (pos_p - pos_q) / c`` for every mic pair.

    ``u`` points from the array toward the source, so a positive
    ``tau_pq`` means the wavefront reaches mic ``q`` after mic ``p``.
    """
    if 360.0 % grid_step:
        raise ValueError(f"grid step {grid_step} does not divide 360")
    array = array or ArrayGeometry.circular()
    pos = np.asarray(array.offsets, dtype=float)
    grid = np.arange(0.0, 360.0, grid_step)
    u = np.stack([np.cos(np.deg2rad(grid)), np.sin(np.deg2rad(grid)), np.zeros_like(grid)], axis=1)
    pairs = tuple(itertools.combinations(range(len(pos)), 2))
    baselines = np.array([pos[p] - pos[q] for p, q in pairs])
    return SteeringTable(grid, pairs, baselines @ u.T / c)


def ratio_mask(estimate, mixture_ref, eps: float = EPS) -> np.ndarray:
    """Speaker ratio mask ``|S|^2 / (|S|^2 + |Y - S|^2)`` in [0, 1]."""
    estimate = np.asarray(estimate)
    mixture_ref = np.asarray(mixture_ref)
    if estimate.shape != mixture_ref.shape:
        raise ValueError(f"shape mismatch: {estimate.shape} vs {mixture_ref.shape}")
    own = np.abs(estimate) ** 2
    rest = np.abs(mixture_ref - estimate) ** 2
    return own / (own + rest + eps)


def _band(cfg: StftConfig, freq_range, sample_rate):
    freqs = cfg.bin_frequencies(sample_rate)
    return freqs, (freqs >= freq_range[0]) & (freqs <= freq_range[1])


def gcc_phat_score(
    spectra,
    mask,
    table: SteeringTable,
    cfg: StftConfig = DEFAULT_STFT,
    sample_rate: int = SAMPLE_RATE,
    freq_range=FREQ_RANGE,
    eps: float = EPS,
) -> np.ndarray:
    """Mask-weighted GCC-PHAT score for every candidate azimuth.

    ``spectra`` is ``(n_mics, T, F)``; ``mask`` is ``(T, F)``. For each pair
    the PHAT-whitened cross-spectrum is weighted by the mask, summed over
    frames, then steered with ``exp(-j 2 pi f tau)`` and summed over the
    frequency band and all pairs.
    """
    spectra = np.asarray(spectra)
    mask = np.asarray(mask, dtype=float)
    n_mics = 1 + max(max(p) for p in table.pairs)
    if spectra.ndim != 3 or spectra.shape[0] != n_mics:
        raise ValueError(f"expected ({n_mics}, T, F) spectra, got {spectra.shape}")
    if mask.shape != spectra.shape[1:]:
        raise ValueError(f"mask shape {mask.shape} does not match spectra {spectra.shape[1:]}")
    freqs, band = _band(cfg, freq_range, sample_rate)
    if freqs.size != spectra.shape[-1]:
        raise ValueError("spectra bin count does not match the STFT config")
    p_idx = np.array([p for p, _ in table.pairs])
    q_idx = np.array([q for _, q in table.pairs])
    Y = spectra[..., band]
    cross = Y[p_idx] * np.conj(Y[q_idx])
    phat = cross / (np.abs(cross) + eps)
    weighted = np.einsum("tf,ptf->pf", mask[:, band], phat)
    steer = np.exp(-2j * np.pi * freqs[band][None, :, None] * table.delays[:, None, :])
    return np.einsum("pf,pfg->g", weighted, steer).real


def estimate_azimuths(
    estimates,
    spectra,
    table: SteeringTable,
    cfg: StftConfig = DEFAULT_STFT,
    masks=None,
    **kwargs,
) -> AzimuthEstimateSet:
    """Localize each separated speaker from its ratio mask over the mixture.

    ``estimates`` holds N reference-mic spectrograms. Pass ``masks`` to
    override the ratio masks (e.g. an all-ones mask for a single source).
    Ties resolve to the smaller azimuth.
    """
    spectra = np.asarray(spectra)
    if masks is None:
        if len(estimates) < 1:
            raise ValueError("need at least one estimate")
        masks = [ratio_mask(s, spectra[0]) for s in estimates]
    profiles = np.stack([gcc_phat_score(spectra, m, table, cfg, **kwargs) for m in masks])
    return AzimuthEstimateSet(table.grid[np.argmax(profiles, axis=1)], profiles, table.grid)


class MaskedGccPhatLocalizer(BaseEstimator):
    """Estimator wrapper around the steering table and mask-weighted scoring.

    ``fit`` builds the steering table for the array; ``predict`` takes the
    multichannel mixture spectrogram and optional separated estimates and
    returns one azimuth per estimate (one overall when no estimates are given).
    """

    def __init__(self, grid_step=1.0, array=None, freq_range=FREQ_RANGE, stft_config=DEFAULT_STFT):
        self.grid_step = grid_step
        self.array = array
        self.freq_range = freq_range
        self.stft_config = stft_config

    def fit(self, X=None, y=None):
        self.table_ = build_steering_table(self.array, self.grid_step)
        return self

    def _check_fitted(self):
        if not hasattr(self, "table_"):
            raise RuntimeError("MaskedGccPhatLocalizer is not fitted; call fit() first")

    def localize(self, spectra, estimates=None) -> AzimuthEstimateSet:
        self._check_fitted()
        spectra = np.asarray(spectra)
        masks = None if estimates is not None else [np.ones(spectra.shape[1:])]
        return estimate_azimuths(
            estimates, spectra, self.table_, self.stft_config, masks=masks, freq_range=self.freq_range
        )

    def predict(self, spectra, estimates=None) -> np.ndarray:
        return self.localize(spectra, estimates).azimuths
