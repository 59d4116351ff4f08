"""Log-mel spectrogram front end and WAV I/O.

32 ms Hann windows with 50% overlap at 16 kHz (512 samples, hop 256),
80 triangular HTK-mel filters over 0-8000 Hz, natural log with a 1e-10 floor.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import AudioFormatError, ClipTooShort

SAMPLE_RATE = 16000
WINDOW = 512
HOP = 256
N_FFT = 512
N_MELS = 80
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("audio clip must be a non-empty 1-D sequence")
        if np.max(np.abs(samples)) > 1.0:
            raise ValueError("audio samples must lie in [-1, 1]")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray  # (n_mels, n_frames)
    frame_len_s: float = WINDOW / SAMPLE_RATE
    frame_hop_s: float = HOP / SAMPLE_RATE

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def frame_count(num_samples: int, window_samples: int = WINDOW, hop_samples: int = HOP) -> int:
    if window_samples < 1 or hop_samples < 1:
        raise ValueError("window and hop must be at least one sample")
    if num_samples < window_samples:
        return 0
    return (num_samples - window_samples) // hop_samples + 1


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=4)
def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE,
                   f_min: float = 0.0, f_max: float = SAMPLE_RATE / 2) -> np.ndarray:
    """Triangular filters of shape (n_mels, n_fft // 2 + 1), peak weight 1."""
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    bin_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_freqs - lower) / (center - lower)
    falling = (upper - bin_freqs) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


@lru_cache(maxsize=1)
def _hann() -> np.ndarray:
    # periodic Hann
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(WINDOW) / WINDOW)


def log_mel(clip: AudioClip) -> FeatureMatrix:
    if clip.sample_rate_hz != SAMPLE_RATE:
        raise AudioFormatError(f"expected {SAMPLE_RATE} Hz audio, got {clip.sample_rate_hz}")
    n = frame_count(clip.samples.size)
    if n == 0:
        raise ClipTooShort(f"{clip.samples.size} samples is shorter than one {WINDOW}-sample window")
    frames = np.lib.stride_tricks.sliding_window_view(clip.samples, WINDOW)[::HOP][:n]
    power = np.abs(np.fft.rfft(frames * _hann(), n=N_FFT, axis=1)) ** 2
    energies = power @ mel_filterbank().T
    return FeatureMatrix(np.log(energies + LOG_FLOOR).T.copy())


def read_wav(path: str | Path) -> AudioClip:
    """Load a mono 16-bit PCM WAV at 16 kHz."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1:
                raise AudioFormatError(f"{path}: expected mono, got {w.getnchannels()} channels")
            if w.getsampwidth() != 2:
                raise AudioFormatError(f"{path}: expected 16-bit PCM, got {8 * w.getsampwidth()}-bit")
            if w.getframerate() != SAMPLE_RATE:
                raise AudioFormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {w.getframerate()}")
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise AudioFormatError(f"{path}: {exc}") from exc
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    return AudioClip(np.clip(pcm / 32767.0, -1.0, 1.0))


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    return np.round(np.clip(samples, -1.0, 1.0) * 32767.0).astype("<i2")


def write_wav(path: str | Path, clip: AudioClip) -> None:
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate_hz)
        w.writeframes(quantize_pcm16(clip.samples).tobytes())
