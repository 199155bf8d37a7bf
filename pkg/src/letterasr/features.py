"""Log-mel filterbank front end.

WAV ingestion, frame blocking with a Hamming window, triangular mel
filterbank energies on the power spectrum, per-utterance coefficient
normalization, and the zero padding that keeps the conv stack's output
aligned with the original frame count.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
N_MELS = 40
WINDOW_MS = 25.0
STRIDE_MS = 10.0

# Floor added to filterbank energies before the log; an all-zero signal
# therefore maps to log(LOG_FLOOR) in every coefficient.
LOG_FLOOR = 1e-10

# Floor applied to per-coefficient variance before normalization divides,
# so constant coefficients come out as exact zeros instead of NaN.
VARIANCE_FLOOR = 1e-5


class AudioError(ValueError):
    """Unusable audio input: wrong format, wrong rate, or too short."""


@dataclass
class Waveform:
    """Mono waveform with float samples in roughly [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise AudioError("waveform must be a non-empty 1-D sample array")
        if self.sample_rate <= 0:
            raise AudioError("sample rate must be positive")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def read_wav(path, expected_rate: int | None = SAMPLE_RATE) -> Waveform:
    """Read a RIFF/WAVE file holding mono 16-bit PCM.

    Stereo and non-16-bit files are rejected rather than converted, and the
    sample rate must match ``expected_rate`` when one is given.
    """
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise AudioError(
                f"{path}: expected mono audio, got {f.getnchannels()} channels"
            )
        if f.getsampwidth() != 2:
            raise AudioError(
                f"{path}: expected 16-bit PCM, got {8 * f.getsampwidth()}-bit"
            )
        rate = f.getframerate()
        if expected_rate is not None and rate != expected_rate:
            raise AudioError(f"{path}: expected {expected_rate} Hz audio, got {rate} Hz")
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path, waveform: Waveform) -> None:
    """Write a mono 16-bit PCM WAV file."""
    pcm = np.clip(np.round(waveform.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(waveform.sample_rate)
        f.writeframes(pcm.tobytes())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filters evaluated on the rfft bin frequencies.

    Band edges are spaced uniformly on the mel scale between 0 Hz and the
    Nyquist frequency. Returns an (n_mels, n_fft // 2 + 1) weight matrix.
    """
    bin_hz = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2))
    weights = np.zeros((n_mels, bin_hz.size))
    for k in range(n_mels):
        lo, mid, hi = edges[k], edges[k + 1], edges[k + 2]
        rising = (bin_hz - lo) / (mid - lo)
        falling = (hi - bin_hz) / (hi - mid)
        weights[k] = np.maximum(0.0, np.minimum(rising, falling))
    return weights


def frame_count(n_samples: int, window: int, stride: int) -> int:
    """Number of full analysis frames in a signal of n_samples."""
    if n_samples < window:
        return 0
    return (n_samples - window) // stride + 1


def compute_mfsc(
    waveform: Waveform,
    n_mels: int = N_MELS,
    window_ms: float = WINDOW_MS,
    stride_ms: float = STRIDE_MS,
) -> np.ndarray:
    """Log mel-filterbank energies, one row per analysis frame.

    Frames are blocked without centering (frame t covers samples
    [t * stride, t * stride + window)), windowed with a Hamming window, and
    transformed with an FFT sized to the next power of two at or above the
    window length. Filterbank energies are taken on the power spectrum and
    floored before the log.
    """
    if window_ms < stride_ms:
        raise ValueError("window must be at least as long as the stride")
    rate = waveform.sample_rate
    window = int(round(rate * window_ms / 1000.0))
    stride = int(round(rate * stride_ms / 1000.0))
    n = waveform.samples.size
    t = frame_count(n, window, stride)
    if t == 0:
        raise AudioError(
            f"audio too short: {n} samples, need at least {window} for one frame"
        )
    idx = stride * np.arange(t)[:, None] + np.arange(window)[None, :]
    frames = waveform.samples[idx] * np.hamming(window)
    n_fft = 1 << (window - 1).bit_length()
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    bank = mel_filterbank(n_mels, n_fft, rate)
    return np.log(LOG_FLOOR + power @ bank.T)


def normalize(feats: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance scale each coefficient over the utterance.

    The per-coefficient variance is floored at VARIANCE_FLOOR before the
    division, so constant coefficients normalize to zeros.
    """
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise ValueError("expected a non-empty (frames, coefficients) array")
    mean = feats.mean(axis=0)
    var = feats.var(axis=0)
    return (feats - mean) / np.sqrt(np.maximum(var, VARIANCE_FLOOR))


def pad(feats: np.ndarray, total_pad: int) -> np.ndarray:
    """Prepend and append all-zero frames.

    The front gets ceil(total_pad / 2) frames and the back floor(total_pad / 2),
    so an odd total puts the extra frame at the beginning.
    """
    if total_pad < 0:
        raise ValueError("total_pad must be non-negative")
    feats = np.asarray(feats)
    front = (total_pad + 1) // 2
    back = total_pad // 2
    return np.pad(feats, ((front, back), (0, 0)))


# Binary matrix file: u32 frame count, u32 coefficient count, then row-major
# little-endian float32 data. Used both for features and for emission dumps.

def write_feature_file(path, feats: np.ndarray) -> None:
    feats = np.asarray(feats, dtype=np.float32)
    if feats.ndim != 2:
        raise ValueError("expected a 2-D array")
    with open(path, "wb") as f:
        f.write(struct.pack("<II", feats.shape[0], feats.shape[1]))
        f.write(feats.astype("<f4").tobytes())


def read_feature_file(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(8)
        if len(header) != 8:
            raise ValueError(f"{path}: truncated feature file header")
        t, d = struct.unpack("<II", header)
        body = f.read()
    if len(body) != 4 * t * d:
        raise ValueError(
            f"{path}: expected {t * d} values for a {t}x{d} matrix, got {len(body) / 4:g}"
        )
    data = np.frombuffer(body, dtype="<f4")
    return data.reshape(t, d).astype(np.float32)


def extract_file(wav_path, out_path, expected_rate: int | None = SAMPLE_RATE) -> int:
    """Compute normalized features for one WAV file and write them out.

    Returns the number of frames written.
    """
    feats = normalize(compute_mfsc(read_wav(wav_path, expected_rate)))
    write_feature_file(out_path, feats)
    return feats.shape[0]
