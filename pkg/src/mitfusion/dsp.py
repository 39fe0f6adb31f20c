"""Log-mel spectrograms and fixed-length segmentation for the audio branch.

The mel scale is the Slaney formulation: linear below 1 kHz
(``mel = 3 * f / 200``) and logarithmic above it
(``mel = 15 + ln(f / 1000) * 27 / ln(6.4)``). Each triangular filter is
area-normalized by ``2 / (f_right - f_left)``.

Framing is centred: the signal is reflect-padded by ``window // 2`` on both
sides, so an N-sample signal yields ``N // hop + 1`` frames. Frames are
weighted by a periodic Hann window before the power spectrum is taken.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import FormatError, ShapeError

SAMPLE_RATE = 44100
N_MELS = 128
HOP_LENGTH = 512
WIN_LENGTH = 1024
LOG_FLOOR = 1e-10
SEGMENT_FRAMES = 128

LOGMEL_MAGIC = b"MFLM1"


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ShapeError(f"audio must be mono 1-D, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def dft_magnitude(frame) -> np.ndarray:
    """Magnitude of the one-sided DFT of an (already windowed) real frame."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 1 or len(frame) < 2 or len(frame) % 2:
        raise ValueError(f"frame length must be even and >= 2, got {frame.shape}")
    if not np.all(np.isfinite(frame)):
        raise ValueError("frame contains non-finite values")
    return np.abs(np.fft.rfft(frame))


def hz_to_mel(freq):
    freq = np.asarray(freq, dtype=np.float64)
    linear = 3.0 * freq / 200.0
    log = 15.0 + np.log(np.maximum(freq, 1e-12) / 1000.0) * (27.0 / np.log(6.4))
    return np.where(freq >= 1000.0, log, linear)


def mel_to_hz(mels):
    mels = np.asarray(mels, dtype=np.float64)
    linear = 200.0 * mels / 3.0
    log = 1000.0 * np.exp((mels - 15.0) * (np.log(6.4) / 27.0))
    return np.where(mels >= 15.0, log, linear)


def mel_band_edges(n_mels, fmin, fmax) -> np.ndarray:
    """``n_mels + 2`` frequencies (Hz) evenly spaced on the mel scale."""
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))


def mel_center_frequencies(n_mels=N_MELS, sample_rate=SAMPLE_RATE, fmin=0.0, fmax=None) -> np.ndarray:
    fmax = sample_rate / 2 if fmax is None else fmax
    return mel_band_edges(n_mels, fmin, fmax)[1:-1]


def mel_filterbank(sample_rate=SAMPLE_RATE, n_fft=WIN_LENGTH, n_mels=N_MELS, fmin=0.0, fmax=None) -> np.ndarray:
    """Area-normalized triangular filters, shape (n_mels, n_fft // 2 + 1)."""
    fmax = sample_rate / 2 if fmax is None else fmax
    fft_freqs = np.linspace(0.0, sample_rate / 2, n_fft // 2 + 1)
    edges = mel_band_edges(n_mels, fmin, fmax)
    widths = np.diff(edges)
    ramps = edges[:, None] - fft_freqs[None, :]
    rising = -ramps[:-2] / widths[:-1, None]
    falling = ramps[2:] / widths[1:, None]
    weights = np.maximum(0.0, np.minimum(rising, falling))
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    return weights


def hann_window(length) -> np.ndarray:
    """Periodic Hann window (the DFT-even variant used for spectral analysis)."""
    n = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def power_spectrogram(samples, hop=HOP_LENGTH, window=WIN_LENGTH) -> np.ndarray:
    """|STFT|^2 with centred, reflect-padded frames; shape (frames, window // 2 + 1)."""
    samples = np.asarray(samples, dtype=np.float64)
    padded = np.pad(samples, window // 2, mode="reflect")
    frames = sliding_window_view(padded, window)[::hop]
    spec = np.fft.rfft(frames * hann_window(window), axis=1)
    return spec.real**2 + spec.imag**2


def logmel(
    audio: AudioBuffer,
    n_mels=N_MELS,
    hop=HOP_LENGTH,
    window=WIN_LENGTH,
    expected_sample_rate=SAMPLE_RATE,
    allow_any_rate=False,
) -> np.ndarray:
    """Log mel energies, shape (frames, n_mels), ``log(max(x, 1e-10))``.

    Audio is never resampled: a buffer whose rate differs from
    ``expected_sample_rate`` is rejected unless ``allow_any_rate`` is set.
    """
    if len(audio.samples) == 0:
        raise ValueError("cannot extract log-mel features from empty audio")
    if audio.sample_rate != expected_sample_rate and not allow_any_rate:
        raise ValueError(
            f"sample rate {audio.sample_rate} Hz != expected {expected_sample_rate} Hz; "
            "resample first or pass allow_any_rate=True"
        )
    power = power_spectrogram(audio.samples, hop=hop, window=window)
    fb = mel_filterbank(audio.sample_rate, window, n_mels)
    return np.log(np.maximum(power @ fb.T, LOG_FLOOR))


def segment(mel, seg_len=SEGMENT_FRAMES, pad="mean") -> np.ndarray:
    """Split (frames, n_mels) into non-overlapping chunks of ``seg_len`` frames.

    Returns an array of shape (n_segments, 1, seg_len, n_mels). A short final
    chunk is completed with copies of its own mean frame (``pad="mean"``) or
    with zeros (``pad="zero"``).
    """
    mel = np.asarray(mel, dtype=np.float64)
    if mel.ndim != 2 or mel.shape[0] < 1:
        raise ShapeError(f"expected a (frames >= 1, n_mels) matrix, got {mel.shape}")
    if pad not in ("mean", "zero"):
        raise ValueError(f"pad must be 'mean' or 'zero', got {pad!r}")
    frames, n_mels = mel.shape
    n_seg = -(-frames // seg_len)
    missing = n_seg * seg_len - frames
    if missing:
        tail = mel[(n_seg - 1) * seg_len :]
        fill = tail.mean(axis=0) if pad == "mean" else np.zeros(n_mels)
        mel = np.vstack([mel, np.tile(fill, (missing, 1))])
    return mel.reshape(n_seg, seg_len, n_mels)[:, None, :, :]


class LogMelExtractor(TransformerMixin, BaseEstimator):
    """Stateless transformer from audio buffers to lists of log-mel matrices."""

    def __init__(self, n_mels=N_MELS, hop_length=HOP_LENGTH, win_length=WIN_LENGTH, sample_rate=SAMPLE_RATE):
        self.n_mels = n_mels
        self.hop_length = hop_length
        self.win_length = win_length
        self.sample_rate = sample_rate

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        out = []
        for item in X:
            buf = item if isinstance(item, AudioBuffer) else AudioBuffer(item, self.sample_rate)
            out.append(logmel(buf, self.n_mels, self.hop_length, self.win_length, self.sample_rate))
        return out

    def __sklearn_is_fitted__(self):
        return True


# ------------------------------------------------------------------ files


def read_wav(path) -> AudioBuffer:
    """16-bit PCM WAV; multi-channel audio is averaged down to mono."""
    with wave.open(str(path), "rb") as wf:
        if wf.getsampwidth() != 2:
            raise FormatError(f"{path}: only 16-bit PCM is supported, got {8 * wf.getsampwidth()}-bit")
        channels = wf.getnchannels()
        rate = wf.getframerate()
        raw = wf.readframes(wf.getnframes())
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if channels > 1:
        data = data.reshape(-1, channels).mean(axis=1)
    return AudioBuffer(data, rate)


def write_wav(path, samples, sample_rate=SAMPLE_RATE, channels=1) -> None:
    samples = np.asarray(samples, dtype=np.float64)
    pcm = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())


def write_logmel(path, mel) -> None:
    mel = np.asarray(mel)
    if mel.ndim != 2:
        raise ShapeError(f"log-mel matrix must be 2-D, got {mel.shape}")
    header = LOGMEL_MAGIC + struct.pack("<II", *mel.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(mel, dtype="<f4").tobytes())


def read_logmel(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:5] != LOGMEL_MAGIC or len(data) < 13:
        raise FormatError(f"{path}: not an MFLM1 log-mel file")
    frames, mels = struct.unpack("<II", data[5:13])
    body = data[13:]
    if len(body) != 4 * frames * mels:
        raise FormatError(f"{path}: expected {frames}x{mels} floats, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(frames, mels).astype(np.float64)
