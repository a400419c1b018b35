import numpy as np
import pytest
from sklearn.base import clone

from locsep.acoustics import SPEED_OF_SOUND, ArrayGeometry, Room, Scenario, SourcePlacement, spatialize
from locsep.criteria import circular_diff
from locsep.data import synthetic_utterance
from locsep.localization import (
    MaskedGccPhatLocalizer,
    build_steering_table,
    estimate_azimuths,
    gcc_phat_score,
    ratio_mask,
)
from locsep.signals import DEFAULT_STFT, stft

TABLE = build_steering_table()


def plane_wave_spectra(azimuth, T=20, seed=0):
    """Far-field spectra built directly in the frequency domain: X(t, f) exp(-j 2 pi f t_m)."""
    rng = np.random.default_rng(seed)
    F = DEFAULT_STFT.n_bins
    freqs = DEFAULT_STFT.bin_frequencies(16000)
    X = rng.standard_normal((T, F)) + 1j * rng.standard_normal((T, F))
    u = np.array([np.cos(np.deg2rad(azimuth)), np.sin(np.deg2rad(azimuth)), 0.0])
    arrival = -np.asarray(ArrayGeometry.circular().offsets) @ u / SPEED_OF_SOUND
    return X[None] * np.exp(-2j * np.pi * freqs[None, None, :] * arrival[:, None, None])


def test_steering_table_layout():
    assert TABLE.grid.shape == (360,)
    assert len(TABLE.pairs) == 21
    assert TABLE.delays.shape == (21, 360)
    # mic 1 is on the +x axis: a source at 0 degrees reaches it before the center mic
    k = TABLE.pairs.index((0, 1))
    assert TABLE.delays[k, 0] == pytest.approx(-0.0425 / SPEED_OF_SOUND)
    assert TABLE.delays[k, 90] == pytest.approx(0.0, abs=1e-15)
    assert np.max(np.abs(TABLE.delays)) <= 2 * 0.0425 / SPEED_OF_SOUND + 1e-15
    with pytest.raises(ValueError):
        build_steering_table(grid_step=7)


def test_ratio_mask_cases():
    rng = np.random.default_rng(0)
    Y = rng.standard_normal((4, 6)) + 1j * rng.standard_normal((4, 6))
    assert np.allclose(ratio_mask(Y, Y), 1.0)
    assert np.all(ratio_mask(np.zeros_like(Y), Y) == 0)
    assert np.allclose(ratio_mask(Y / 2, Y), 0.5)
    m = ratio_mask(rng.standard_normal((4, 6)) * 3 + 0j, Y)
    assert np.all((m >= 0) & (m <= 1))
    with pytest.raises(ValueError):
        ratio_mask(Y, Y[:, :2])


@pytest.mark.parametrize("azimuth", [0, 17, 45, 123, 200, 359])
def test_plane_wave_peak(azimuth):
    Y = plane_wave_spectra(azimuth)
    score = gcc_phat_score(Y, np.ones(Y.shape[1:]), TABLE)
    assert TABLE.grid[np.argmax(score)] == azimuth


def test_zero_mask_gives_zero_profile():
    Y = plane_wave_spectra(30)
    assert np.all(gcc_phat_score(Y, np.zeros(Y.shape[1:]), TABLE) == 0)


def test_phat_bound_and_scale_invariance():
    Y = plane_wave_spectra(80)
    mask = np.random.default_rng(1).random(Y.shape[1:])
    score = gcc_phat_score(Y, mask, TABLE)
    freqs = DEFAULT_STFT.bin_frequencies(16000)
    band = (freqs >= 100) & (freqs <= 7800)
    assert np.max(np.abs(score)) <= len(TABLE.pairs) * mask[:, band].sum() * (1 + 1e-9)
    # only the PHAT floor breaks exact invariance
    assert np.allclose(gcc_phat_score(1e3 * Y, mask, TABLE), score, rtol=0, atol=1e-6 * np.max(np.abs(score)))
    assert np.allclose(gcc_phat_score(Y, 5 * mask, TABLE), 5 * score, rtol=1e-12)


def test_rotation_by_array_symmetry():
    # the 6-mic ring is invariant under 60 degree rotations
    a = gcc_phat_score(plane_wave_spectra(20), np.ones((20, 257)), TABLE)
    b = gcc_phat_score(plane_wave_spectra(80), np.ones((20, 257)), TABLE)
    assert np.allclose(np.roll(a, 60), b, atol=1e-6 * np.max(np.abs(a)))


def test_shape_validation():
    Y = plane_wave_spectra(0)
    with pytest.raises(ValueError):
        gcc_phat_score(Y[:3], np.ones(Y.shape[1:]), TABLE)
    with pytest.raises(ValueError):
        gcc_phat_score(Y, np.ones((2, 2)), TABLE)


def simulated(azimuths, distances, t60=0.0, seed=0):
    rng = np.random.default_rng(seed)
    sources = tuple(SourcePlacement(float(a), float(d)) for a, d in zip(azimuths, distances))
    sc = Scenario(Room((5.0, 5.0, 3.0), t60), (2.5, 2.5, 1.5), sources)
    dry = [synthetic_utterance(rng, 8000) for _ in sources]
    return spatialize(dry, sc)


@pytest.mark.parametrize("t60", [0.0, 0.3])
def test_single_source_in_room(t60):
    ex = simulated([45], [1.0], t60)
    loc = MaskedGccPhatLocalizer().fit()
    est = loc.predict(stft(ex.mixture))
    assert circular_diff(est[0], 45) <= (2 if t60 == 0 else 10)


def test_two_speakers_with_oracle_masks():
    ex = simulated([30, 150], [1.0, 1.5])
    Y = stft(ex.mixture)
    result = estimate_azimuths(list(stft(ex.targets)), Y, TABLE)
    assert circular_diff(result.azimuths[0], 30) <= 3
    assert circular_diff(result.azimuths[1], 150) <= 3
    rec = result.to_json(include_profiles=True)
    assert rec[0]["grid_step"] == 1.0 and len(rec[1]["score_profile"]) == 360


def test_localizer_estimator_contract():
    loc = MaskedGccPhatLocalizer(grid_step=5.0)
    assert loc.get_params()["grid_step"] == 5.0
    with pytest.raises(RuntimeError):
        loc.predict(plane_wave_spectra(0))
    fitted = clone(loc).fit()
    assert fitted.predict(plane_wave_spectra(45))[0] == 45
