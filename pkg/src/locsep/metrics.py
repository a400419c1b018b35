"""Separation metrics: SI-SNR, projection SDR, ESTOI, and per-example scoring."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_toeplitz
from scipy.signal import fftconvolve, resample_poly

from .signals import SAMPLE_RATE

DB_CLAMP = 60.0
SDR_FILTER_LEN = 512
SDR_REG = 1e-10
_TINY = 1e-300


def _clamp_db(num, den):
    if num <= 0:
        return -DB_CLAMP
    if den <= 0:
        return DB_CLAMP
    return float(np.clip(10 * np.log10(num / den), -DB_CLAMP, DB_CLAMP))


def _check_pair(est, ref):
    est = np.asarray(est, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if est.shape != ref.shape or est.ndim != 1:
        raise ValueError(f"expected equal-length 1-D signals, got {est.shape} and {ref.shape}")
    return est, ref


def si_snr(est, ref) -> float:
    """Scale-invariant SNR in dB, clamped to [-60, 60]."""
    est, ref = _check_pair(est, ref)
    est = est - est.mean()
    ref = ref - ref.mean()
    ref_energy = ref @ ref
    if ref_energy <= 0:
        raise ValueError("reference is zero after mean removal")
    target = (est @ ref) / ref_energy * ref
    noise = est - target
    return _clamp_db(target @ target, noise @ noise)


def sdr(est, ref, filter_len: int = SDR_FILTER_LEN) -> float:
    """Signal-to-distortion ratio with a least-squares FIR target projection.

    The reference, filtered by the ``filter_len``-tap filter that best
    explains ``est``, is the target component; everything else is
    distortion. The normal equations are Toeplitz with a 1e-10 ridge.
    """
    est, ref = _check_pair(est, ref)
    n = est.size
    nfft = 1 << int(np.ceil(np.log2(n + filter_len)))
    R = np.fft.rfft(ref, nfft)
    E = np.fft.rfft(est, nfft)
    autocorr = np.fft.irfft(np.abs(R) ** 2, nfft)[:filter_len]
    cross = np.fft.irfft(E * np.conj(R), nfft)[:filter_len]
    autocorr[0] += SDR_REG
    coef = solve_toeplitz(autocorr, cross)
    proj = fftconvolve(ref, coef)
    residual = np.pad(est, (0, filter_len - 1)) - proj
    return _clamp_db(proj @ proj, residual @ residual)


# ESTOI constants (10 kHz internal rate)
_FS = 10000
_FRAME = 256
_NFFT = 512
_BANDS = 15
_MIN_FREQ = 150.0
_SEGMENT = 30
_DYN_RANGE = 40.0


def _third_octave_matrix():
    freqs = np.linspace(0, _FS, _NFFT + 1)[: _NFFT // 2 + 1]
    k = np.arange(_BANDS)
    centers = 2.0 ** (k / 3.0) * _MIN_FREQ
    lo = _MIN_FREQ * 2.0 ** ((2 * k - 1) / 6.0)
    hi = _MIN_FREQ * 2.0 ** ((2 * k + 1) / 6.0)
    obm = np.zeros((_BANDS, freqs.size))
    for b in range(_BANDS):
        lo_bin = np.argmin((freqs - lo[b]) ** 2)
        hi_bin = np.argmin((freqs - hi[b]) ** 2)
        obm[b, lo_bin:hi_bin] = 1.0
    return obm, centers


def _frames(x, hop):
    win = np.hanning(_FRAME + 2)[1:-1]
    starts = range(0, x.size - _FRAME + 1, hop)
    return np.array([win * x[s : s + _FRAME] for s in starts])


def _drop_silent_frames(x, y):
    hop = _FRAME // 2
    fx, fy = _frames(x, hop), _frames(y, hop)
    energy = 20 * np.log10(np.linalg.norm(fx, axis=1) + np.finfo(float).eps)
    keep = (np.max(energy) - _DYN_RANGE - energy) < 0
    fx, fy = fx[keep], fy[keep]
    n = (len(fx) - 1) * hop + _FRAME
    xs, ys = np.zeros(n), np.zeros(n)
    for i in range(len(fx)):
        xs[i * hop : i * hop + _FRAME] += fx[i]
        ys[i * hop : i * hop + _FRAME] += fy[i]
    return xs, ys


def _band_envelopes(x, obm):
    spec = np.fft.rfft(_frames(x, _FRAME // 2), n=_NFFT, axis=1)
    return np.sqrt(obm @ (np.abs(spec) ** 2).T)


def _normalize(seg, axis):
    seg = seg - seg.mean(axis=axis, keepdims=True)
    norm = np.linalg.norm(seg, axis=axis, keepdims=True)
    return seg / np.maximum(norm, np.finfo(float).eps)


def estoi(est, ref, sample_rate: int = SAMPLE_RATE) -> float:
    """Extended short-time objective intelligibility of ``est`` against clean ``ref``.

    Both signals are resampled to 10 kHz, frames more than 40 dB below the
    loudest reference frame are dropped, and 15 one-third octave band
    envelopes are correlated over 384 ms segments after mean/norm
    normalization of bands and then of frames.
    """
    est, ref = _check_pair(est, ref)
    if sample_rate != _FS:
        g = np.gcd(int(sample_rate), _FS)
        est = resample_poly(est, _FS // g, sample_rate // g)
        ref = resample_poly(ref, _FS // g, sample_rate // g)
    ref, est = _drop_silent_frames(ref, est)
    obm, _ = _third_octave_matrix()
    X = _band_envelopes(ref, obm)
    Y = _band_envelopes(est, obm)
    n_frames = X.shape[1]
    if n_frames < _SEGMENT:
        raise ValueError(f"signal too short for ESTOI: {n_frames} active frames < {_SEGMENT}")
    scores = []
    for m in range(_SEGMENT, n_frames + 1):
        xs = _normalize(_normalize(X[:, m - _SEGMENT : m], axis=1), axis=0)
        ys = _normalize(_normalize(Y[:, m - _SEGMENT : m], axis=1), axis=0)
        scores.append(np.sum(xs * ys) / _SEGMENT)
    return float(np.mean(scores))


@dataclass
class EvalRecord:
    metrics: dict  # metric name -> list of per-speaker values (output order)
    deltas: dict  # metric name -> per-speaker improvement over the unprocessed mixture
    pairing: tuple  # pairing[n] = target scored against output n
    scoring: str

    def mean(self, name: str) -> float:
        vals = [v for v in self.metrics[name] if v is not None]
        return float(np.mean(vals)) if vals else float("nan")

    def mean_delta(self, name: str) -> float:
        vals = [v for v in self.deltas[name] if v is not None]
        return float(np.mean(vals)) if vals else float("nan")

    def to_json(self) -> dict:
        return {
            "scoring": self.scoring,
            "pairing": [p + 1 for p in self.pairing],
            "metrics": self.metrics,
            "deltas": self.deltas,
        }


def _safe_estoi(est, ref):
    try:
        return estoi(est, ref)
    except ValueError:
        return None


METRICS = {"si_snr": si_snr, "sdr": sdr, "estoi": _safe_estoi}


def best_permutation(estimates, targets, metric=si_snr) -> tuple:
    """Pairing maximizing the mean metric; ties keep the lexicographically first."""
    n = len(estimates)
    table = np.array([[metric(estimates[i], targets[k]) for k in range(n)] for i in range(n)])
    best, best_perm = -np.inf, None
    for perm in itertools.permutations(range(n)):
        score = np.mean([table[i, perm[i]] for i in range(n)])
        if score > best:
            best, best_perm = score, perm
    return best_perm


def eval_example(estimates, targets, mixture_ref, scoring: str = "fixed", metrics=("si_snr", "sdr", "estoi")) -> EvalRecord:
    """Score N estimates against N targets.

    ``scoring='fixed'`` keeps the output order (output n vs target n);
    ``'best-permutation'`` picks the pairing with the highest mean SI-SNR.
    Deltas subtract the score of the unprocessed reference mixture. ESTOI
    is ``None`` when a signal is too short for it.
    """
    if len(estimates) != len(targets):
        raise ValueError(f"{len(estimates)} estimates for {len(targets)} targets")
    if scoring == "fixed":
        pairing = tuple(range(len(targets)))
    elif scoring == "best-permutation":
        pairing = best_permutation(estimates, targets)
    else:
        raise ValueError(f"unknown scoring {scoring!r}")
    values, deltas = {}, {}
    for name in metrics:
        fn = METRICS[name]
        values[name], deltas[name] = [], []
        for n, k in enumerate(pairing):
            v = fn(estimates[n], targets[k])
            base = fn(mixture_ref, targets[k])
            values[name].append(v)
            deltas[name].append(None if v is None or base is None else v - base)
    return EvalRecord(values, deltas, pairing, scoring)
