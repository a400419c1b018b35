"""Time-frequency analysis/synthesis, complex ratio masks and WAV I/O.

Waveforms are plain float64 arrays with the sample axis last; multichannel
signals are ``(channels, samples)`` with channel 0 the reference (center)
microphone. Spectrograms are complex arrays shaped ``(..., frames, bins)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 16000

CIRM_EPS = 1e-8
CIRM_CLAMP = 10.0


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis parameters. Defaults: 32 ms window, 8 ms hop."""

    window_len: int = 512
    hop: int = 128
    fft_len: int = 512
    window: str = "sqrt_hann"

    def __post_init__(self):
        if self.window_len <= 0 or self.hop <= 0:
            raise ValueError("window_len and hop must be positive")
        if self.hop > self.window_len:
            raise ValueError(f"hop ({self.hop}) exceeds window_len ({self.window_len})")
        if self.window_len % self.hop:
            raise ValueError("hop must divide window_len")
        if self.fft_len < self.window_len:
            raise ValueError("fft_len must be >= window_len")
        if self.window not in _WINDOWS:
            raise ValueError(f"unknown window {self.window!r}")

    @property
    def n_bins(self) -> int:
        return self.fft_len // 2 + 1

    @property
    def lead(self) -> int:
        """Zeros prepended so every signal sample is covered by a full set of frames."""
        return self.window_len - self.hop

    def n_frames(self, n_samples: int) -> int:
        return -(-(n_samples + self.lead) // self.hop)

    def bin_frequencies(self, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
        return np.fft.rfftfreq(self.fft_len, d=1.0 / sample_rate)

    def analysis_window(self) -> np.ndarray:
        return _WINDOWS[self.window](self.window_len)


def _sqrt_hann(n):
    # periodic Hann: squared copies sum to a constant at hop n/4
    return np.sqrt(0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n))


def _hann(n):
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


_WINDOWS = {"sqrt_hann": _sqrt_hann, "hann": _hann}

DEFAULT_STFT = StftConfig()


def stft(x, cfg: StftConfig = DEFAULT_STFT) -> np.ndarray:
    """Short-time Fourier transform along the last axis.

    Returns a complex array of shape ``x.shape[:-1] + (frames, fft_len // 2 + 1)``.
    The signal is padded with ``window_len - hop`` leading zeros and trailing
    zeros up to an integer number of frames.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ValueError("stft of an empty signal")
    n = x.shape[-1]
    n_frames = cfg.n_frames(n)
    total = (n_frames - 1) * cfg.hop + cfg.window_len
    pad = [(0, 0)] * (x.ndim - 1) + [(cfg.lead, total - n - cfg.lead)]
    xp = np.pad(x, pad)
    frames = np.lib.stride_tricks.sliding_window_view(xp, cfg.window_len, axis=-1)[..., :: cfg.hop, :]
    return np.fft.rfft(frames * cfg.analysis_window(), n=cfg.fft_len, axis=-1)


def istft(spec, cfg: StftConfig = DEFAULT_STFT, out_len: int | None = None) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`, truncated/padded to ``out_len``."""
    spec = np.asarray(spec)
    if spec.ndim < 2 or spec.shape[-1] != cfg.n_bins:
        raise ValueError(f"expected (..., frames, {cfg.n_bins}) spectrogram, got {spec.shape}")
    n_frames = spec.shape[-2]
    win = cfg.analysis_window()
    frames = np.fft.irfft(spec, n=cfg.fft_len, axis=-1)[..., : cfg.window_len] * win
    total = (n_frames - 1) * cfg.hop + cfg.window_len
    out = np.zeros(spec.shape[:-2] + (total,))
    norm = np.zeros(total)
    for t in range(n_frames):
        sl = slice(t * cfg.hop, t * cfg.hop + cfg.window_len)
        out[..., sl] += frames[..., t, :]
        norm[sl] += win**2
    nz = norm > 1e-10
    out[..., nz] /= norm[nz]
    out = out[..., cfg.lead:]
    if out_len is None:
        out_len = cfg.hop * n_frames - cfg.lead
    if out.shape[-1] >= out_len:
        return out[..., :out_len]
    pad = [(0, 0)] * (out.ndim - 1) + [(0, out_len - out.shape[-1])]
    return np.pad(out, pad)


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def apply_cirm(mask, mixture_ref) -> np.ndarray:
    """Elementwise complex product of a mask with the reference mixture spectrogram."""
    mask = np.asarray(mask)
    mixture_ref = np.asarray(mixture_ref)
    _check_same_shape(mask, mixture_ref)
    return mask * mixture_ref


def ideal_cirm(target, mixture_ref, eps: float = CIRM_EPS, clamp: float = CIRM_CLAMP) -> np.ndarray:
    """Uncompressed complex ideal ratio mask ``S / Y`` with magnitude clamped to ``clamp``.

    The squared mixture magnitude is floored at ``eps``, so bins with
    ``|Y|**2 > eps`` are divided exactly.
    """
    target = np.asarray(target, dtype=np.complex128)
    mixture_ref = np.asarray(mixture_ref, dtype=np.complex128)
    _check_same_shape(target, mixture_ref)
    power = np.maximum(np.abs(mixture_ref) ** 2, eps)
    mask = target * np.conj(mixture_ref) / power
    mag = np.abs(mask)
    over = mag > clamp
    mask[over] *= clamp / mag[over]
    return mask


def read_wav(path, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Read a PCM16 or float32 WAV file as float64 ``(channels, samples)``.

    Raises ``ValueError`` on any other encoding or on a sample-rate mismatch;
    nothing is resampled.
    """
    rate, data = wavfile.read(path)
    if rate != sample_rate:
        raise ValueError(f"{path}: sample rate {rate} Hz, expected {sample_rate} Hz")
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        data = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    return np.ascontiguousarray(data.T) if data.ndim == 2 else data[None, :]


def write_wav(path, x, sample_rate: int = SAMPLE_RATE, subtype: str = "float32") -> None:
    """Write ``(channels, samples)`` or ``(samples,)`` audio as float32 or PCM16."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if not np.all(np.isfinite(x)):
        raise ValueError("refusing to write non-finite samples")
    if subtype == "float32":
        data = x.T.astype(np.float32)
    elif subtype == "pcm16":
        data = np.clip(np.round(x.T * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unsupported subtype {subtype!r}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, sample_rate, data)
