"""Waveform I/O, STFT and log-mel features (16 kHz mono)."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import InvalidBand, NonFiniteValue, TooShort

SAMPLE_RATE = 16000
N_FFT = 1024
HOP = 256
WIN = 1024
N_MELS = 80
FMIN = 50.0
FMAX = 8000.0
LOG_FLOOR = 1e-5
MIN_LOG = float(np.log10(LOG_FLOOR))


@dataclass
class AudioClip:
    samples: np.ndarray
    rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.rate != SAMPLE_RATE:
            raise ValueError(f"sample rate must be {SAMPLE_RATE}, got {self.rate}")
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("audio must be mono")
        if not np.all(np.isfinite(self.samples)):
            raise NonFiniteValue("audio contains NaN or infinity")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.rate


@dataclass
class MelSpectrogram:
    frames: np.ndarray
    hop: int = HOP
    win: int = WIN
    n_fft: int = N_FFT

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_centers(n_mels: int = N_MELS, fmin: float = FMIN, fmax: float = FMAX) -> np.ndarray:
    """Center frequency (Hz) of each filter."""
    pts = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    return pts[1:-1]


@lru_cache(maxsize=8)
def _filterbank(n_fft, n_mels, fmin, fmax, rate):
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    # Narrow low-frequency triangles can fall between FFT bins; rescale each
    # row so the sampled peak is exactly 1.
    fb /= fb.max(axis=1, keepdims=True)
    fb.setflags(write=False)
    return fb


def mel_filterbank(
    n_fft: int = N_FFT,
    n_mels: int = N_MELS,
    fmin: float = FMIN,
    fmax: float = FMAX,
    rate: int = SAMPLE_RATE,
) -> np.ndarray:
    if not 0 <= fmin < fmax:
        raise InvalidBand(f"need 0 <= fmin < fmax, got {fmin}, {fmax}")
    if fmax > rate / 2:
        raise InvalidBand(f"fmax {fmax} exceeds Nyquist {rate / 2}")
    bin_width = rate / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    if np.min(edges[2:] - edges[:-2]) < bin_width:
        raise InvalidBand("mel filters narrower than one FFT bin; use fewer mels or a larger n_fft")
    return _filterbank(n_fft, n_mels, float(fmin), float(fmax), rate)


def hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def stft(x: np.ndarray, n_fft: int = N_FFT, hop: int = HOP, win: int = WIN) -> np.ndarray:
    """Centered, reflect-padded STFT; returns complex [frames x (n_fft//2+1)]."""
    x = np.asarray(x, dtype=np.float64)
    pad = n_fft // 2
    mode = "reflect" if len(x) > pad else "constant"
    x = np.pad(x, pad, mode=mode)
    window = np.zeros(n_fft)
    off = (n_fft - win) // 2
    window[off : off + win] = hann(win)
    n_frames = 1 + (len(x) - n_fft) // hop
    frames = np.lib.stride_tricks.sliding_window_view(x, n_fft)[::hop][:n_frames]
    return np.fft.rfft(frames * window, axis=1)


def istft(spec: np.ndarray, hop: int = HOP, win: int = WIN, length: Optional[int] = None) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`."""
    n_frames, n_bins = spec.shape
    n_fft = 2 * (n_bins - 1)
    window = np.zeros(n_fft)
    off = (n_fft - win) // 2
    window[off : off + win] = hann(win)
    frames = np.fft.irfft(spec, n=n_fft, axis=1) * window
    total = n_fft + hop * (n_frames - 1)
    y = np.zeros(total)
    norm = np.zeros(total)
    for i in range(n_frames):
        y[i * hop : i * hop + n_fft] += frames[i]
        norm[i * hop : i * hop + n_fft] += window**2
    y /= np.where(norm > 1e-8, norm, 1.0)
    pad = n_fft // 2
    y = y[pad:]
    if length is not None:
        y = y[:length]
        if len(y) < length:
            y = np.pad(y, (0, length - len(y)))
    else:
        y = y[: hop * (n_frames - 1)]
    return y


def wav_to_mel(clip: AudioClip, fb: Optional[np.ndarray] = None) -> MelSpectrogram:
    if len(clip) < WIN:
        raise TooShort(f"clip has {len(clip)} samples, need at least {WIN}")
    fb = mel_filterbank() if fb is None else fb
    mag = np.abs(stft(clip.samples))
    mel = mag @ fb.T
    return MelSpectrogram(np.log10(np.maximum(mel, LOG_FLOOR)))


def trim_silence(samples: np.ndarray, threshold_db: float = -60.0, frame: int = 256) -> np.ndarray:
    """Drop leading/trailing frames whose RMS is below ``threshold_db`` dBFS."""
    samples = np.asarray(samples)
    n = len(samples) // frame
    if n == 0:
        return samples
    rms = np.sqrt(np.mean(samples[: n * frame].reshape(n, frame) ** 2, axis=1))
    loud = np.nonzero(20 * np.log10(np.maximum(rms, 1e-12)) > threshold_db)[0]
    if len(loud) == 0:
        return samples[:0]
    return samples[loud[0] * frame : min(len(samples), (loud[-1] + 1) * frame)]


def read_wav(path: Union[str, Path]) -> AudioClip:
    with wave.open(str(path), "rb") as w:
        if w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM")
        if w.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio")
        rate = w.getframerate()
        data = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
    return AudioClip(data.astype(np.float64) / 32768.0, rate)


def write_wav(path: Union[str, Path], samples: np.ndarray, rate: int = SAMPLE_RATE) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(pcm.tobytes())
