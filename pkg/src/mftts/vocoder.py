"""Mel inversion and Griffin-Lim phase reconstruction."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np

from .audiofeat import HOP, WIN, MelSpectrogram, istft, mel_filterbank, stft
from .errors import ConfigError


@dataclass(frozen=True)
class GriffinLimConfig:
    iterations: int = 60
    momentum: float = 0.99
    power: float = 1.2

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("griffin-lim needs at least one iteration")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")


@lru_cache(maxsize=4)
def _pinv(fb_bytes: bytes, shape: Tuple[int, int]) -> np.ndarray:
    fb = np.frombuffer(fb_bytes, dtype=np.float64).reshape(shape)
    return np.linalg.pinv(fb)


def mel_to_linear(mel, fb: Optional[np.ndarray] = None) -> np.ndarray:
    """Log10 mel frames [F x n_mels] -> non-negative magnitudes [F x n_fft/2+1]."""
    frames = mel.frames if isinstance(mel, MelSpectrogram) else np.asarray(mel)
    fb = mel_filterbank() if fb is None else np.asarray(fb, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != fb.shape[0]:
        raise ConfigError(f"mel has shape {frames.shape}, filterbank has {fb.shape[0]} bands")
    inv = _pinv(np.ascontiguousarray(fb).tobytes(), fb.shape)
    lin = (10.0 ** frames.astype(np.float64)) @ inv.T
    return np.maximum(lin, 0.0)


def spectral_convergence(y: np.ndarray, magnitude: np.ndarray) -> float:
    """``||(|STFT(y)| - M)|| / ||M||`` after fitting the best overall gain."""
    est = np.abs(stft(y))[: len(magnitude)]
    denom = float(np.sum(est * est))
    gain = float(np.sum(est * magnitude)) / denom if denom > 0 else 0.0
    return float(np.linalg.norm(gain * est - magnitude) / np.linalg.norm(magnitude))


def griffin_lim(
    magnitude: np.ndarray,
    cfg: GriffinLimConfig = GriffinLimConfig(),
    seed: Optional[int] = 0,
    history: Optional[List[float]] = None,
) -> np.ndarray:
    """Fast Griffin-Lim: alternating projections with momentum.

    ``history``, if given, receives the spectral convergence after every
    iteration (measured before peak normalization).
    """
    magnitude = np.asarray(magnitude, dtype=np.float64)
    if np.any(magnitude < 0):
        raise ValueError("magnitude must be non-negative")
    n_frames = magnitude.shape[0]
    length = HOP * (n_frames - 1)
    if not np.any(magnitude):
        return np.zeros(length)
    rng = np.random.default_rng(seed)
    angles = np.exp(2j * np.pi * rng.random(magnitude.shape))
    prev = np.zeros_like(angles)
    norm_m = np.linalg.norm(magnitude)
    y = np.zeros(length)
    for _ in range(cfg.iterations):
        y = istft(magnitude * angles, HOP, WIN, length)
        rebuilt = stft(y)[:n_frames]
        if history is not None:
            history.append(float(np.linalg.norm(np.abs(rebuilt) - magnitude) / norm_m))
        accel = rebuilt + cfg.momentum * (rebuilt - prev)
        prev = rebuilt
        angles = accel / np.maximum(np.abs(accel), 1e-12)
    y = istft(magnitude * angles, HOP, WIN, length)
    peak = np.max(np.abs(y))
    if peak > 0:
        y = y * (0.95 / peak)
    return y


def vocode(mel, cfg: GriffinLimConfig = GriffinLimConfig(), seed: Optional[int] = 0) -> np.ndarray:
    """Log-mel frames to a peak-normalized waveform."""
    lin = mel_to_linear(mel)
    return griffin_lim(lin**cfg.power, cfg, seed)
