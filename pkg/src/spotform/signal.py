"""Waveforms, STFT analysis/synthesis, energy normalization, and WAV I/O.

All audio is mono float64 internally.  The STFT uses a periodic Hann window
with 50% overlap (constant-overlap-add), one-sided spectra, and a fixed
padding convention: `window_length - hop` zeros are prepended so that frame 0
is centered near sample 0, giving exactly ``ceil(n_samples / hop)`` frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.io.wavfile
import scipy.signal

EPS = 1e-12


@dataclass(frozen=True)
class StftConfig:
    """Analysis parameters: Hann window, 32 ms frames, 16 ms hop by default."""

    window_length_ms: float = 32.0
    hop_ms: float = 16.0
    sample_rate: int = 16000
    window: str = "hann"

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.window != "hann":
            raise ValueError(f"unsupported window: {self.window!r}")
        win = self.window_length_ms * self.sample_rate / 1000.0
        hop = self.hop_ms * self.sample_rate / 1000.0
        if abs(win - round(win)) > 1e-9 or abs(hop - round(hop)) > 1e-9:
            raise ValueError("window and hop must be whole numbers of samples")
        win, hop = int(round(win)), int(round(hop))
        if win <= 0 or hop <= 0 or win % hop != 0:
            raise ValueError("hop must divide the window length")

    @property
    def window_length(self) -> int:
        return int(round(self.window_length_ms * self.sample_rate / 1000.0))

    @property
    def hop(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000.0))

    @property
    def n_bins(self) -> int:
        return self.window_length // 2 + 1


@dataclass
class Waveform:
    """A mono time-domain signal with its sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("samples must be one-dimensional (mono)")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    @property
    def energy(self) -> float:
        return float(np.sum(self.samples**2))


@dataclass
class ComplexSpectrogram:
    """One-sided STFT of one signal: complex (n_bins, n_frames) matrix."""

    values: np.ndarray
    config: StftConfig

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.ndim != 2:
            raise ValueError("spectrogram values must be a 2-D matrix")
        if self.values.shape[0] != self.config.n_bins:
            raise ValueError(
                f"expected {self.config.n_bins} bins, got {self.values.shape[0]}"
            )

    @property
    def n_bins(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def _hann_periodic(n: int) -> np.ndarray:
    # periodic (DFT-even) Hann; exact COLA at 50% overlap
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_count(n_samples: int, cfg: StftConfig) -> int:
    """Number of STFT frames produced for a signal of `n_samples` samples."""
    return int(math.ceil(n_samples / cfg.hop))


def stft(x: Waveform, cfg: StftConfig) -> ComplexSpectrogram:
    """One-sided STFT with head zero-padding of (window - hop) samples.

    Every input sample is covered by at least one frame; the frame count is
    ``ceil(len(x) / hop)``.
    """
    if len(x) == 0:
        raise ValueError("empty signal")
    if x.sample_rate != cfg.sample_rate:
        raise ValueError(
            f"waveform rate {x.sample_rate} != config rate {cfg.sample_rate}"
        )
    win_len, hop = cfg.window_length, cfg.hop
    n_frames = frame_count(len(x), cfg)
    pad_head = win_len - hop
    total = (n_frames - 1) * hop + win_len
    padded = np.zeros(total, dtype=np.float64)
    padded[pad_head : pad_head + len(x)] = x.samples
    idx = np.arange(win_len)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = padded[idx] * _hann_periodic(win_len)[None, :]
    return ComplexSpectrogram(np.fft.rfft(frames, axis=1).T, cfg)


def istft(S: ComplexSpectrogram, cfg: StftConfig, length: int) -> Waveform:
    """Weighted overlap-add synthesis, truncated or zero-padded to `length`."""
    if S.config != cfg:
        raise ValueError("spectrogram was produced with a different STFT config")
    if length < 0:
        raise ValueError("length must be nonnegative")
    win_len, hop = cfg.window_length, cfg.hop
    window = _hann_periodic(win_len)
    frames = np.fft.irfft(S.values.T, n=win_len, axis=1) * window[None, :]
    n_frames = S.n_frames
    total = (n_frames - 1) * hop + win_len
    out = np.zeros(total, dtype=np.float64)
    norm = np.zeros(total, dtype=np.float64)
    wsq = window**2
    for j in range(n_frames):
        out[j * hop : j * hop + win_len] += frames[j]
        norm[j * hop : j * hop + win_len] += wsq
    out /= np.maximum(norm, EPS)
    pad_head = win_len - hop
    y = out[pad_head : pad_head + length]
    if len(y) < length:
        y = np.pad(y, (0, length - len(y)))
    return Waveform(y, cfg.sample_rate)


def normalize_energy(sources: list[Waveform]) -> list[Waveform]:
    """Rescale each waveform to unit l2 energy."""
    out = []
    for src in sources:
        energy = src.energy
        if energy <= 0.0:
            raise ValueError("silent source")
        out.append(Waveform(src.samples / math.sqrt(energy), src.sample_rate))
    return out


def resample(x: Waveform, target_rate: int) -> Waveform:
    """Polyphase windowed-sinc resampling (~64 taps per phase, Kaiser beta=8)."""
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == x.sample_rate:
        return Waveform(x.samples.copy(), x.sample_rate)
    g = math.gcd(x.sample_rate, target_rate)
    up, down = target_rate // g, x.sample_rate // g
    # group delay rounded up to a whole number of output samples
    half = int(math.ceil(32 * up / down)) * down
    cutoff = 1.0 / max(up, down)
    taps = scipy.signal.firwin(2 * half + 1, cutoff, window=("kaiser", 8.0)) * up
    y = scipy.signal.upfirdn(taps, x.samples, up, down)
    offset = half // down
    n_out = int(math.ceil(len(x) * up / down))
    y = y[offset : offset + n_out]
    if len(y) < n_out:
        y = np.pad(y, (0, n_out - len(y)))
    return Waveform(y, target_rate)


def read_wav(path) -> Waveform:
    """Read a mono RIFF WAV (16-bit PCM or 32/64-bit float)."""
    rate, data = scipy.io.wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"multichannel WAV rejected: {path}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample format {data.dtype} in {path}")
    return Waveform(samples, int(rate))


def write_wav(path, x: Waveform, fmt: str = "float32") -> None:
    """Write a mono WAV as 32-bit float (default) or 16-bit PCM."""
    if fmt == "float32":
        scipy.io.wavfile.write(path, x.sample_rate, x.samples.astype(np.float32))
    elif fmt == "pcm16":
        clipped = np.clip(x.samples, -1.0, 32767.0 / 32768.0)
        scipy.io.wavfile.write(
            path, x.sample_rate, np.round(clipped * 32768.0).astype(np.int16)
        )
    else:
        raise ValueError(f"unsupported format: {fmt!r}")
