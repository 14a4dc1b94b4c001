"""Audio frontend: sliding windows over a waveform and log-mel spectrograms.

Defaults: 16 kHz mono, 25 ms Hann frames with a 10 ms hop, 40 mel bands
covering 0-8000 Hz on the HTK mel scale, natural-log magnitude floored at -10.
"""
from __future__ import annotations

import wave
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.signal import get_window

from .errors import ConfigMismatch, InsufficientAudio, InvalidOverlap, IOFailure


@dataclass(frozen=True)
class STFTConfig:
    sample_rate: int = 16000
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 40
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = -10.0
    n_fft: int | None = None

    @property
    def frame_len(self) -> int:
        return int(round(self.sample_rate * self.frame_ms / 1000.0))

    @property
    def frame_hop(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))

    @property
    def fft_size(self) -> int:
        if self.n_fft is not None:
            return self.n_fft
        return 1 << (self.frame_len - 1).bit_length()

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.frame_len:
            return 0
        return (n_samples - self.frame_len) // self.frame_hop + 1


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000
    start_s: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("waveform must be mono (1-D samples)")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def crop(self, start: int, length: int) -> "Waveform":
        """Sample-indexed crop; ``start_s`` stays relative to the original."""
        return Waveform(self.samples[start:start + length], self.sample_rate,
                        self.start_s + start / self.sample_rate)


@dataclass
class MelSegment:
    values: np.ndarray          # T x F
    window_start_s: float = 0.0

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_mels(self) -> int:
        return self.values.shape[1]


@dataclass
class MelSegmentSequence:
    segments: list[MelSegment]
    source_id: str = ""
    hop_s: float = field(default=0.625)

    def __post_init__(self):
        if not self.segments:
            raise InsufficientAudio("a mel segment sequence must be non-empty")

    def __len__(self):
        return len(self.segments)

    def as_array(self) -> np.ndarray:
        """Stack into ``(n_segments, T, F)``."""
        return np.stack([s.values for s in self.segments])


def _window_geometry(sample_rate: int, window_s: float, overlap: float) -> tuple[int, int]:
    if not (0.0 <= overlap < 1.0):
        raise InvalidOverlap(f"overlap must lie in [0, 1), got {overlap}")
    n_win = int(round(window_s * sample_rate))
    n_hop = int(round(window_s * (1.0 - overlap) * sample_rate))
    if n_win <= 0 or n_hop <= 0:
        raise InvalidOverlap("window and hop must span at least one sample")
    return n_win, n_hop


def window_count(n_samples: int, sample_rate: int, window_s: float = 1.25,
                 overlap: float = 0.5) -> int:
    n_win, n_hop = _window_geometry(sample_rate, window_s, overlap)
    if n_samples < n_win:
        return 0
    return (n_samples - n_win) // n_hop + 1


def segment_waveform(w: Waveform, window_s: float = 1.25, overlap: float = 0.5) -> list[Waveform]:
    """Cut ``w`` into fixed-width windows; a trailing partial window is dropped."""
    n_win, n_hop = _window_geometry(w.sample_rate, window_s, overlap)
    n = len(w.samples)
    if n < n_win:
        raise InsufficientAudio(
            f"{w.duration_s:.3f}s of audio is shorter than one {window_s}s window")
    count = (n - n_win) // n_hop + 1
    return [w.crop(k * n_hop, n_win) for k in range(count)]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_centers(stft: STFTConfig) -> np.ndarray:
    pts = np.linspace(hz_to_mel(stft.fmin), hz_to_mel(stft.fmax), stft.n_mels + 2)
    return mel_to_hz(pts[1:-1])


@lru_cache(maxsize=16)
def _filterbank(stft: STFTConfig) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(stft.fmin), hz_to_mel(stft.fmax), stft.n_mels + 2))
    freqs = np.arange(stft.fft_size // 2 + 1) * stft.sample_rate / stft.fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


def mel_filterbank(stft: STFTConfig) -> np.ndarray:
    """Triangular HTK-scale filters, shape ``(n_mels, n_fft // 2 + 1)``, peak weight 1."""
    return _filterbank(stft)


@lru_cache(maxsize=16)
def _analysis_window(frame_len: int) -> np.ndarray:
    win = get_window("hann", frame_len)
    win.setflags(write=False)
    return win


def log_mel_frames(samples: np.ndarray, stft: STFTConfig) -> np.ndarray:
    """Log-mel matrix ``(T, n_mels)`` of a raw sample array (no sample-rate check)."""
    samples = np.asarray(samples, dtype=np.float64)
    t = stft.n_frames(len(samples))
    if t == 0:
        raise InsufficientAudio("audio shorter than one STFT frame")
    frames = np.lib.stride_tricks.sliding_window_view(samples, stft.frame_len)[::stft.frame_hop][:t]
    spec = np.abs(np.fft.rfft(frames * _analysis_window(stft.frame_len), n=stft.fft_size, axis=-1))
    mel = spec @ _filterbank(stft).T
    with np.errstate(divide="ignore"):
        logmel = np.log(mel)
    return np.maximum(logmel, stft.log_floor)


def mel_spectrogram(window: Waveform, stft: STFTConfig | None = None) -> MelSegment:
    stft = stft or STFTConfig()
    if window.sample_rate != stft.sample_rate:
        raise ConfigMismatch(
            f"waveform sampled at {window.sample_rate} Hz, frontend configured for {stft.sample_rate} Hz")
    return MelSegment(log_mel_frames(window.samples, stft), window.start_s)


def mel_segments(w: Waveform, stft: STFTConfig | None = None, window_s: float = 1.25,
                 overlap: float = 0.5, source_id: str = "") -> MelSegmentSequence:
    stft = stft or STFTConfig()
    windows = segment_waveform(w, window_s, overlap)
    return MelSegmentSequence([mel_spectrogram(x, stft) for x in windows], source_id,
                              hop_s=window_s * (1.0 - overlap))


def read_wav(path: str | Path) -> Waveform:
    """Read a mono PCM-16 WAV file into a float waveform in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
                raise IOFailure(f"{path}: expected mono PCM-16 audio")
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except (OSError, wave.Error, EOFError) as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from exc
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(data, rate)


def write_wav(path: str | Path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(pcm.tobytes())
