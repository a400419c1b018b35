import numpy as np
import pytest

from locsep.acoustics import (
    SPEED_OF_SOUND,
    ArrayGeometry,
    Room,
    Scenario,
    SourcePlacement,
    _image_sources,
    azimuth_grid,
    check_scenario,
    geometry_truth,
    sample_scenario,
    scenario_rirs,
    schroeder_t60,
    simulate_rir,
    spatialize,
)
from locsep.criteria import min_azimuth_gap

FS = 16000


def scene(azimuths, distances, dims=(5.0, 5.0, 3.0), t60=0.0):
    sources = tuple(SourcePlacement(float(a), float(d)) for a, d in zip(azimuths, distances))
    return Scenario(Room(dims, t60), (dims[0] / 2, dims[1] / 2, 1.5), sources)


def test_array_geometry():
    arr = ArrayGeometry.circular()
    off = np.asarray(arr.offsets)
    assert arr.n_mics == 7
    assert np.allclose(off[0], 0)
    assert np.allclose(np.linalg.norm(off[1:], axis=1), 0.0425)
    assert np.allclose(off[1], (0.0425, 0, 0))
    angles = np.rad2deg(np.arctan2(off[1:, 1], off[1:, 0])) % 360
    assert np.allclose(angles, np.arange(0, 360, 60))


def test_azimuth_grid():
    assert azimuth_grid(5).size == 72
    assert azimuth_grid(1)[0] == -180 and azimuth_grid(1)[-1] == 179
    with pytest.raises(ValueError):
        azimuth_grid(7)


def test_sampled_scenarios_obey_constraints():
    rng = np.random.default_rng(0)
    for i in range(500):
        sc = sample_scenario(rng, n_speakers=1 + i % 5, azimuth_resolution=(1, 5)[i % 2], reverberant=bool(i % 3))
        assert check_scenario(sc) == []


def test_sampling_is_deterministic():
    assert sample_scenario(42) == sample_scenario(42)
    assert sample_scenario(42) != sample_scenario(43)


def test_sampling_rejects_bad_arguments():
    with pytest.raises(ValueError):
        sample_scenario(0, n_speakers=6)
    with pytest.raises(ValueError):
        sample_scenario(0, azimuth_resolution=2)


def test_check_scenario_flags_violations():
    bad = scene([10, 10], [1.0, 1.1], dims=(7.0, 5.0, 3.0), t60=0.9)
    problems = " ".join(check_scenario(bad))
    for key in ("room dims", "t60", "duplicate", "distance gap"):
        assert key in problems
    assert "closer than" in " ".join(check_scenario(scene([0], [0.1])))


def test_gap_fraction_on_fine_grid():
    # two distinct draws from 360 points: P(gap < 20) = 2 * 19 / 359
    analytic = 2 * 19 / 359
    rng = np.random.default_rng(1)
    gaps = np.array([min_azimuth_gap(sample_scenario(rng, 2, 1, False).azimuths) for _ in range(4000)])
    frac = np.mean(gaps < 20)
    assert abs(frac - analytic) < 0.02
    assert gaps.min() >= 1


def test_scenario_dict_roundtrip():
    sc = sample_scenario(7, n_speakers=3)
    again = Scenario.from_dict(sc.to_dict())
    assert again == sc
    assert again.digest() == sc.digest()


def test_source_positions_follow_azimuth():
    sc = scene([0, 90, -90, -180], [1.0, 1.2, 1.5, 0.5])
    rel = sc.source_positions() - np.asarray(sc.array_center)
    assert np.allclose(rel, [[1, 0, 0], [0, 1.2, 0], [0, -1.5, 0], [-0.5, 0, 0]], atol=1e-12)


def test_first_order_images():
    room = Room((4.0, 5.0, 3.0), 0.3)
    src = np.array([1.0, 2.0, 0.5])
    pos, hits = _image_sources(room, src, max_range=100.0)
    first = {tuple(np.round(p, 9)) for p in pos[hits == 1]}
    # mirror in each of the six walls
    expected = {(-1.0, 2, 0.5), (7.0, 2, 0.5), (1, -2.0, 0.5), (1, 8.0, 0.5), (1, 2, -0.5), (1, 2, 5.5)}
    assert first == {tuple(np.round(np.asarray(e, dtype=float), 9)) for e in expected}
    assert np.sum(hits == 0) == 1
    assert np.allclose(pos[hits == 0][0], src)


@pytest.mark.parametrize("samples", [40, 77, 100])
def test_direct_path_integer_delay(samples):
    room = Room((5.0, 5.0, 3.0))
    mic = np.array([2.5, 2.5, 1.5])
    d = samples * SPEED_OF_SOUND / FS
    h = simulate_rir(room, mic + [d, 0, 0], mic)
    assert np.argmax(np.abs(h)) == samples
    assert h[samples] == pytest.approx(1 / (4 * np.pi * d), rel=1e-12)
    others = np.delete(h, samples)
    assert np.max(np.abs(others)) < 1e-12


def test_direct_path_fractional_delay():
    rng = np.random.default_rng(2)
    room = Room((5.0, 5.0, 3.0), 0.3)
    for _ in range(20):
        src = rng.uniform([0.6, 0.6, 0.6], [4.4, 4.4, 2.4])
        mic = rng.uniform([0.6, 0.6, 0.6], [4.4, 4.4, 2.4])
        d = np.linalg.norm(src - mic)
        if d < 0.3:
            continue
        h = simulate_rir(room, src, mic)
        direct = d * FS / SPEED_OF_SOUND
        first = int(np.argmax(np.abs(h[: int(direct) + 3])))
        assert abs(first - direct) <= 1


def test_inverse_distance_law():
    room = Room((6.0, 6.0, 3.0))
    mic = np.array([3.0, 3.0, 1.5])
    # whole-sample delays keep the peak equal to the path gain
    d = np.array([20, 40, 80]) * SPEED_OF_SOUND / FS
    peaks = [np.max(simulate_rir(room, mic + [x, 0, 0], mic)) for x in d]
    assert peaks[0] / peaks[1] == pytest.approx(2.0, rel=1e-9)
    assert peaks[1] / peaks[2] == pytest.approx(2.0, rel=1e-9)


@pytest.mark.parametrize("t60", [0.15, 0.3, 0.6])
def test_schroeder_t60_matches_target(t60):
    rng = np.random.default_rng(int(t60 * 100))
    for _ in range(3):
        dims = tuple(rng.uniform((4, 4, 3), (6, 6, 4)))
        sc = sample_scenario(rng, 1, 5, True)
        room = Room(dims, t60)
        mic = np.array([dims[0] / 2, dims[1] / 2, 1.5])
        az = np.deg2rad(sc.azimuths[0])
        src = mic + 1.0 * np.array([np.cos(az), np.sin(az), 0])
        est = schroeder_t60(simulate_rir(room, src, mic))
        assert abs(est - t60) <= 0.2 * t60


def test_schroeder_t60_of_exponential():
    rng = np.random.default_rng(3)
    t = np.arange(int(1.2 * FS)) / FS
    h = rng.standard_normal(t.size) * 10 ** (-3 * t / 0.5)  # -60 dB at 0.5 s
    assert schroeder_t60(h) == pytest.approx(0.5, rel=0.05)


def test_rir_shift_symmetry():
    # mirroring source and mic through the room center mirrors every image path
    room = Room((5.0, 4.5, 3.0), 0.3)
    src, mic = np.array([1.2, 1.0, 1.1]), np.array([2.9, 2.6, 1.7])
    dims = np.asarray(room.dims)
    a = simulate_rir(room, src, mic)
    b = simulate_rir(room, dims - src, dims - mic)
    assert np.allclose(a, b, atol=1e-12)
    c = simulate_rir(room, mic, src)
    assert np.allclose(a, c, atol=1e-12)


def test_anechoic_mixture_is_sum_of_targets():
    sc = scene([30, 150], [1.0, 1.4])
    rng = np.random.default_rng(4)
    dry = rng.standard_normal((2, 4000))
    ex = spatialize(dry, sc)
    assert ex.mixture.shape == (7, 4000)
    assert ex.targets.shape == (2, 4000)
    assert np.allclose(ex.mixture[0], ex.targets.sum(axis=0), atol=1e-12)


def test_spatialize_linear_and_padding():
    sc = scene([30, 150], [1.0, 1.4], t60=0.2)
    rirs = scenario_rirs(sc)
    rng = np.random.default_rng(5)
    a = rng.standard_normal((2, 3000))
    b = rng.standard_normal((2, 3000))
    mix = lambda d: spatialize(d, sc, rirs).mixture
    assert np.allclose(mix(2 * a - b), 2 * mix(a) - mix(b), atol=1e-10)
    short = spatialize([a[0], a[1, :1000]], sc, rirs)
    assert short.mixture.shape == (7, 3000)
    with pytest.raises(ValueError):
        spatialize([a[0]], sc, rirs)


def test_far_mics_see_geometric_tdoa():
    sc = scene([0], [2.0])
    ex = spatialize([np.r_[1.0, np.zeros(999)]], sc)
    peaks = np.argmax(np.abs(ex.mixture), axis=1)
    # mic 1 sits 4.25 cm closer to a source at 0 degrees than mic 4
    assert peaks[4] - peaks[1] == round(2 * 0.0425 * FS / SPEED_OF_SOUND)


@pytest.mark.parametrize(
    "azimuths,distances,by_az,by_dist",
    [
        ([90, 10], [2.0, 0.5], (1, 0), (1, 0)),
        ([-90, 45, 0], [0.5, 1.0, 1.5], (2, 1, 0), (0, 1, 2)),
        ([-10, 10], [1.0, 0.5], (1, 0), (1, 0)),
        ([180, -180], [1.0, 0.5], (1, 0), (1, 0)),
    ],
)
def test_geometry_truth(azimuths, distances, by_az, by_dist):
    assert geometry_truth(scene(azimuths, distances)) == (by_az, by_dist)
