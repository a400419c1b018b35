"""Acceptance criteria 1-10, one test each, with a PASS/FAIL line per criterion."""
import dataclasses
import itertools
import time

import numpy as np
from gradcheck import gradcheck

from locsep.acoustics import (
    SPEED_OF_SOUND,
    Room,
    SourcePlacement,
    check_scenario,
    geometry_truth,
    sample_scenario,
    schroeder_t60,
    simulate_rir,
    spatialize,
)
from locsep.criteria import Criterion, circular_diff, lbt_assign, loss_ri_mag, min_azimuth_gap, pit_assign
from locsep.data import make_example, synthetic_utterance
from locsep.harness import ExperimentConfig, evaluate, make_splits, model_separation, run_bench, select_criterion
from locsep.localization import MaskedGccPhatLocalizer, build_steering_table, estimate_azimuths
from locsep.metrics import best_permutation, estoi, si_snr
from locsep.model import dataset_loss, new_train_state, train_loop
from locsep.signals import apply_cirm, ideal_cirm, istft, stft

FS = 16000


def random_spectra(rng, n, shape=(6, 9)):
    return list(rng.standard_normal((n, *shape)) + 1j * rng.standard_normal((n, *shape)))


def test_criterion_1_dominance(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    violations = 0
    for n in (2, 3, 4, 5):
        for _ in range(1000):
            est, ref = random_spectra(rng, n), random_spectra(rng, n)
            by_az, by_dist = geometry_truth(sample_scenario(rng, n, 5, False))
            pit = pit_assign(est, ref).total_loss
            violations += pit > lbt_assign(est, ref, by_az).total_loss
            violations += pit > lbt_assign(est, ref, by_dist, criterion=Criterion.DISTANCE).total_loss
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and elapsed < 60
    verdict(1, "PIT loss <= azimuth and distance loss", ok, f"violations={violations} runtime={elapsed:.1f}s")
    assert ok


def test_criterion_2_pit_oracle(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    mismatches = 0
    worst = 0.0
    for i in range(500):
        n = 1 + i % 5
        est, ref = random_spectra(rng, n), random_spectra(rng, n)
        # naive oracle: evaluate every permutation from scratch
        best_perm, best_loss = None, np.inf
        for perm in itertools.permutations(range(n)):
            loss = sum(loss_ri_mag(est[k], ref[perm[k]]) for k in range(n)) / n
            if loss < best_loss:
                best_perm, best_loss = perm, loss
        report = pit_assign(est, ref)
        mismatches += report.assignment.pairing != best_perm
        worst = max(worst, abs(report.total_loss - best_loss) / best_loss)
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and worst <= 1e-12 and elapsed < 60
    verdict(2, "pit_assign equals N! enumeration", ok, f"mismatches={mismatches} max_rel={worst:.1e} runtime={elapsed:.1f}s")
    assert ok


def test_criterion_3_complexity(verdict):
    rng = np.random.default_rng(3)
    counters_ok = True
    for n in range(1, 9):
        est, ref = random_spectra(rng, n, (2, 3)), random_spectra(rng, n, (2, 3))
        pit = pit_assign(est, ref)
        lbt = lbt_assign(est, ref, tuple(range(n)))
        counters_ok &= pit.permutations_scanned == np.prod(range(1, n + 1)) and lbt.pairwise_evals == n
    bench = run_bench(max_n=8, reps=100)
    monotone = bench.ratio_monotone_from(3)
    ok = counters_ok and monotone
    ratios = " ".join(f"{r:.2f}" for r in bench.ratios())
    verdict(3, "N! scanned vs N evaluated, PIT/LBT time ratio rising for N>=3", ok, f"ratios N=1..8: {ratios}")
    assert ok


def test_criterion_4_gradients(verdict):
    worst = gradcheck(n_coords=100)
    ok = max(worst.values()) < 1e-4
    verdict(4, "gradients vs central differences", ok, f"worst rel err={max(worst.values()):.1e} over {len(worst)} layer types")
    assert ok


def single_source_errors(count, t60, distance=None, seed=0):
    loc = MaskedGccPhatLocalizer().fit()
    errors = []
    for i in range(count):
        rng = np.random.default_rng(seed + i)
        sc = sample_scenario(rng, 1, 1, reverberant=t60 > 0)
        src = sc.sources[0]
        sc = dataclasses.replace(sc, room=Room(sc.room.dims, t60), sources=(SourcePlacement(src.azimuth, distance or src.distance),))
        ex = spatialize([synthetic_utterance(rng, FS // 2)], sc)
        # single source: the oracle mask passes every time-frequency bin
        errors.append(circular_diff(loc.predict(stft(ex.mixture))[0], src.azimuth))
    return np.array(errors)


def test_criterion_5_localization(verdict):
    t0 = time.perf_counter()
    anechoic = np.median(single_source_errors(100, 0.0, seed=5000))
    reverberant = np.median(single_source_errors(50, 0.3, distance=1.0, seed=6000))
    elapsed = time.perf_counter() - t0
    ok = anechoic <= 5 and reverberant <= 10 and elapsed < 300
    detail = f"median err anechoic={anechoic:.1f} deg, T60 0.3 s at 1 m={reverberant:.1f} deg, runtime={elapsed:.0f}s"
    verdict(5, "masked GCC-PHAT localization", ok, detail)
    assert ok


def test_criterion_6_simulation_protocol(verdict):
    rng = np.random.default_rng(6)
    violations = 0
    for i in range(100_000):
        sc = sample_scenario(rng, 1 + i % 5, (1, 5)[i % 2], reverberant=i % 3 != 0)
        violations += bool(check_scenario(sc))
    gaps = np.array([min_azimuth_gap(sample_scenario(rng, 2, 1, False).azimuths) for _ in range(20_000)])
    fraction = float(np.mean(gaps < 20))
    ok = violations == 0 and abs(fraction - 0.12) <= 0.02
    verdict(6, "sampled scenarios obey the protocol", ok, f"violations={violations}/100000 gap<20 fraction={fraction:.3f}")
    assert ok


def test_criterion_7_rir_physics(verdict):
    rng = np.random.default_rng(7)
    worst_tap = 0.0
    t60_errors = {}
    for t60 in (0.15, 0.3, 0.6):
        errs = []
        for _ in range(5):
            sc = sample_scenario(rng, 1, 5, True)
            room = Room(sc.room.dims, t60)
            src = sc.source_positions()[0]
            mic = sc.mic_positions()[0]
            h = simulate_rir(room, src, mic)
            direct = np.linalg.norm(src - mic) * FS / SPEED_OF_SOUND
            first = int(np.argmax(np.abs(h[: int(direct) + 3])))
            worst_tap = max(worst_tap, abs(first - direct))
            errs.append(abs(schroeder_t60(h) - t60) / t60)
        t60_errors[t60] = max(errs)
    ok = worst_tap <= 1 and max(t60_errors.values()) <= 0.2
    detail = f"max tap offset={worst_tap:.2f} samples, max T60 rel err " + " ".join(
        f"{k}s:{v:.1%}" for k, v in t60_errors.items()
    )
    verdict(7, "direct tap and Schroeder T60", ok, detail)
    assert ok


def test_criterion_8_signal_core(verdict):
    rng = np.random.default_rng(8)
    x = rng.standard_normal(FS)
    stft_err = np.linalg.norm(istft(stft(x), out_len=x.size) - x) / np.linalg.norm(x)

    s, v = rng.standard_normal((2, FS))
    S, Y = stft(s), stft(s + v)
    good = (np.abs(Y) > 1e-3) & (np.abs(S) < 10 * np.abs(Y))
    rebuilt = apply_cirm(ideal_cirm(S, Y), Y)
    cirm_err = np.linalg.norm(rebuilt[good] - S[good]) / np.linalg.norm(S[good])

    ref = synthetic_utterance(rng, FS)
    est = ref + 0.1 * rng.standard_normal(FS)
    base = si_snr(est, ref)
    scale_ok = all(si_snr(a * est, ref) == base for a in (0.5, 2.0, 8.0))

    ident = estoi(ref, ref)

    perm_ok = True
    for n in (1, 2, 3):
        refs = list(rng.standard_normal((n, 4000)))
        ests = [refs[k] + 0.5 * rng.standard_normal(4000) for k in rng.permutation(n)]
        brute = max(itertools.permutations(range(n)), key=lambda p: np.mean([si_snr(ests[k], refs[p[k]]) for k in range(n)]))
        perm_ok &= tuple(best_permutation(ests, refs)) == brute

    ok = stft_err < 1e-6 and cirm_err < 1e-10 and scale_ok and abs(ident - 1) <= 1e-6 and perm_ok
    detail = (
        f"istft err={stft_err:.1e} cirm err={cirm_err:.1e} si_snr scale exact={scale_ok} "
        f"estoi(x,x)={ident:.9f} best-perm={perm_ok}"
    )
    verdict(8, "signal core", ok, detail)
    assert ok


def test_criterion_9_toy_replication(verdict):
    t0 = time.perf_counter()
    config = ExperimentConfig(n_speakers=2, train_count=200, test_count=50, reverberant=False, min_gap=60.0, seed=9)
    splits = make_splits(config)
    train, test = splits["train"], splits["test"]
    state = new_train_state(config.model, Criterion.AZIMUTH, seed=config.seed, lr=config.lr)
    initial = dataset_loss(state.model, train, Criterion.AZIMUTH)
    state = train_loop(state, train, config.steps, config.batch_size, seed=config.seed)
    final = dataset_loss(state.model, train, Criterion.AZIMUTH)

    table = build_steering_table()
    agree = 0
    for ex in test:
        _, S_hat, Y = model_separation(state.model, ex)
        az = estimate_azimuths(list(S_hat), Y, table).azimuths
        # azimuth-trained outputs are ordered by azimuth on [0, 360)
        agree += az[0] < az[1]
    agreement = agree / len(test)
    rows = evaluate(test, (state.model, Criterion.AZIMUTH), "azimuth", "fixed")
    delta = float(np.mean([r["record"].mean_delta("si_snr") for r in rows]))
    elapsed = time.perf_counter() - t0

    ratio = final / initial
    ok = ratio < 0.5 and agreement >= 0.9 and delta > 0
    detail = (
        f"loss ratio={ratio:.2f} ({initial:.4f}->{final:.4f}) order agreement={agreement:.0%} "
        f"fixed-order dSI-SNR={delta:+.1f} dB runtime={elapsed / 60:.1f} min"
    )
    verdict(9, "azimuth-trained toy model", ok, detail)
    assert ok


def test_criterion_10_dynamic_selection(verdict):
    table = build_steering_table()
    wrong = {"wide": 0, "close": 0}
    for i in range(50):
        ex = make_example(10_000 + i, azimuth_resolution=1, reverberant=True, min_gap=25)
        wrong["wide"] += select_criterion(ex, table)[0] != Criterion.AZIMUTH
        ex = make_example(20_000 + i, azimuth_resolution=1, reverberant=True, max_gap=15)
        wrong["close"] += select_criterion(ex, table)[0] != Criterion.DISTANCE
    ok = wrong["wide"] == 0 and wrong["close"] == 0
    detail = f"gap>=25: {wrong['wide']}/50 not Azimuth, gap<=15: {wrong['close']}/50 not Distance (oracle masks, reverberant)"
    verdict(10, "20 deg dynamic selection", ok, detail)
    assert ok
