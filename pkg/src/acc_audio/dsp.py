"""Onset location, fixed-length windowing and the N x N log-spectrogram."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .audio import PIPELINE_RATE, AudioClip, condition

N_FFT = 2048
HOP = 512
TOP_DB = 80.0
N_MELS = 128


@dataclass(frozen=True)
class DspConfig:
    rate: int = PIPELINE_RATE
    window_seconds: float = 10.0
    size: int = 96
    n_fft: int = N_FFT
    hop: int = HOP
    top_db: float = TOP_DB
    scale: str = "linear"
    n_mels: int = N_MELS
    onset_k: float = 1.0
    onset_min_separation: float = 0.3

    def __post_init__(self):
        if self.scale not in ("linear", "mel"):
            raise ValueError(f"spectrogram scale must be 'linear' or 'mel', got {self.scale!r}")
        if self.window_seconds <= 0:
            raise ValueError("window length must be positive")
        if self.size < 2:
            raise ValueError("spectrogram size must be at least 2")


@dataclass(frozen=True)
class OnsetEnvelope:
    values: np.ndarray
    hop: int
    rate: int


@lru_cache(maxsize=8)
def _hann(n: int) -> np.ndarray:
    # periodic Hann, the usual STFT window
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    w.setflags(write=False)
    return w


def hz_to_mel(f):
    # Slaney's auditory scale: linear below 1 kHz, logarithmic above
    f = np.asarray(f, dtype=np.float64)
    mel = f / (200.0 / 3)
    log_region = f >= 1000.0
    mel = np.where(log_region, 15.0 + np.log(np.maximum(f, 1e-12) / 1000.0) / (np.log(6.4) / 27.0), mel)
    return mel


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f = m * (200.0 / 3)
    return np.where(m >= 15.0, 1000.0 * np.exp((np.log(6.4) / 27.0) * (m - 15.0)), f)


@lru_cache(maxsize=8)
def mel_filterbank(rate: int, n_fft: int, n_mels: int) -> np.ndarray:
    """Triangular, area-normalized mel filters, shape (n_mels, n_fft // 2 + 1)."""
    fft_freqs = np.linspace(0.0, rate / 2.0, n_fft // 2 + 1)
    mel_pts = np.linspace(hz_to_mel(0.0), hz_to_mel(rate / 2.0), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fdiff = np.diff(hz_pts)
    ramps = hz_pts[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (hz_pts[2:] - hz_pts[:-2]))[:, None]
    weights.setflags(write=False)
    return weights


def _frames(x: np.ndarray, starts: np.ndarray, n_fft: int) -> np.ndarray:
    """Gather frames x[s:s+n_fft] for each start, zero outside the signal."""
    lo = min(0, int(starts.min()))
    hi = max(len(x), int(starts.max()) + n_fft)
    padded = np.zeros(hi - lo)
    padded[-lo : -lo + len(x)] = x
    idx = (starts - lo)[:, None] + np.arange(n_fft)[None, :]
    return padded[idx]


def stft_magnitude(x: np.ndarray, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Centered, zero-padded STFT magnitude, shape (n_fft // 2 + 1, 1 + len // hop)."""
    x = np.asarray(x, dtype=np.float64)
    starts = np.arange(1 + len(x) // hop) * hop - n_fft // 2
    frames = _frames(x, starts, n_fft) * _hann(n_fft)
    return np.abs(np.fft.rfft(frames, axis=1)).T


def _power_db(power: np.ndarray, top_db: float) -> np.ndarray:
    db = 10.0 * np.log10(np.maximum(power, 1e-10))
    return np.maximum(db, db.max() - top_db)


def onset_strength(clip: AudioClip, cfg: DspConfig = DspConfig()) -> OnsetEnvelope:
    """Spectral-flux onset envelope over log-mel power.

    Envelope frame ``i`` compares the analysis windows ending at the close of
    hop blocks ``i`` and ``i - 1``; a burst starting in hop block ``i`` thus
    peaks at frame ``i``. Windows reaching outside the clip carry no flux, so
    neither a signal already running at t=0 nor the cut at the clip end
    registers as an onset.
    """
    x = np.asarray(clip.samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("onset_strength expects a mono clip")
    n_fft, hop = cfg.n_fft, cfg.hop
    if len(x) < n_fft:
        raise ValueError(f"clip of {len(x)} samples is shorter than one analysis frame ({n_fft})")
    n = -(-len(x) // hop)
    first = n_fft // hop - 1
    last = len(x) // hop - 1
    values = np.zeros(n)
    if last <= first:
        return OnsetEnvelope(values, hop, clip.rate)
    ends = (np.arange(first, last + 1) + 1) * hop
    frames = _frames(x, ends - n_fft, n_fft) * _hann(n_fft)
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    logmel = _power_db(power @ mel_filterbank(clip.rate, n_fft, cfg.n_mels).T, cfg.top_db)
    values[first + 1 : last + 1] = np.maximum(np.diff(logmel, axis=0), 0.0).sum(axis=1)
    return OnsetEnvelope(values, hop, clip.rate)


def pick_peaks(values: np.ndarray, k: float, separation: int) -> list[int]:
    """Frames above mean + k*std that are the maximum of their +-separation
    neighbourhood (first frame wins on plateaus), thinned left to right so
    kept peaks are more than ``separation`` frames apart."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return []
    threshold = values.mean() + k * values.std()
    peaks: list[int] = []
    for i in np.flatnonzero(values > threshold):
        left = values[max(0, i - separation) : i]
        right = values[i + 1 : i + 1 + separation]
        if (left.size and left.max() >= values[i]) or (right.size and right.max() > values[i]):
            continue
        if peaks and i - peaks[-1] <= separation:
            continue
        peaks.append(int(i))
    return peaks


def detect_first_onset(env: OnsetEnvelope, cfg: DspConfig = DspConfig()) -> float:
    """Time in seconds of the first qualifying peak; 0.0 when none qualifies."""
    sep = max(1, int(round(cfg.onset_min_separation * env.rate / env.hop)))
    peaks = pick_peaks(env.values, cfg.onset_k, sep)
    if not peaks:
        return 0.0
    return peaks[0] * env.hop / env.rate


def extract_window(clip: AudioClip, onset: float, length: float) -> AudioClip:
    """round(length * rate) samples from ``onset``, zero padded at the end."""
    if length <= 0:
        raise ValueError("window length must be positive")
    if onset < 0:
        raise ValueError("onset must be non-negative")
    n = int(round(length * clip.rate))
    start = min(int(round(onset * clip.rate)), clip.frames)
    out = np.zeros(n, dtype=np.float64)
    seg = clip.samples[start : start + n]
    out[: len(seg)] = seg
    return AudioClip(out, clip.rate)


def log_spectrogram(window: AudioClip, cfg: DspConfig = DspConfig()) -> np.ndarray:
    """Magnitude STFT in dB relative to its own maximum, floored at -top_db.

    Rows are frequency bins (or mel bands with ``cfg.scale == "mel"``), columns
    are frames. An all-zero window maps to a constant -top_db plane.
    """
    x = np.asarray(window.samples, dtype=np.float64)
    if len(x) < cfg.n_fft:
        raise ValueError(f"window of {len(x)} samples is shorter than the FFT size {cfg.n_fft}")
    mag = stft_magnitude(x, cfg.n_fft, cfg.hop)
    if cfg.scale == "mel":
        mag = np.sqrt(mel_filterbank(window.rate, cfg.n_fft, cfg.n_mels) @ (mag**2))
    ref = mag.max()
    if ref <= 0.0:
        return np.full(mag.shape, -cfg.top_db)
    floor = ref * 10.0 ** (-cfg.top_db / 20.0)
    return 20.0 * np.log10(np.maximum(mag, floor) / ref)


def _bilinear_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) interpolation matrix with corners aligned."""
    w = np.zeros((n_out, n_in))
    if n_out == 1:
        w[0, 0] = 1.0
        return w
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2) if n_in > 1 else np.zeros(n_out, int)
    frac = pos - lo
    rows = np.arange(n_out)
    if n_in == 1:
        w[:, 0] = 1.0
        return w
    w[rows, lo] = 1.0 - frac
    w[rows, lo + 1] += frac
    return w


def resize(spec: np.ndarray, n: int) -> np.ndarray:
    """Corner-aligned bilinear resampling of a 2-D map to n x n."""
    if n < 2:
        raise ValueError(f"target size must be at least 2, got {n}")
    spec = np.asarray(spec, dtype=np.float64)
    rows, cols = spec.shape
    if rows < 2 or cols < 2:
        raise ValueError(f"spectrogram must be at least 2x2, got {rows}x{cols}")
    if (rows, cols) == (n, n):
        return spec.copy()
    out = _bilinear_weights(rows, n) @ spec @ _bilinear_weights(cols, n).T
    # convex weights can overshoot the input range by rounding only
    return np.clip(out, spec.min(), spec.max())


def featurize(clip: AudioClip, cfg: DspConfig = DspConfig()) -> np.ndarray:
    """Full front end: condition, onset, window, log-spectrogram, resize."""
    mono = condition(clip, cfg.rate)
    if mono.frames >= cfg.n_fft:
        onset = detect_first_onset(onset_strength(mono, cfg), cfg)
    else:
        onset = 0.0
    window = extract_window(mono, onset, cfg.window_seconds)
    return resize(log_spectrogram(window, cfg), cfg.size)


# Spectrogram cache: little-endian header then row-major float32 data.
CACHE_MAGIC = b"ACCS"
CACHE_VERSION = 1
_DTYPE_F32LE = 1
_CACHE_HEADER = struct.Struct("<4sHHIII")


def write_cache(path, spec: np.ndarray, n: int | None = None) -> None:
    spec = np.asarray(spec)
    rows, cols = spec.shape
    header = _CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, _DTYPE_F32LE, n if n is not None else rows, rows, cols)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(spec, dtype="<f4").tobytes())


def read_cache(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _CACHE_HEADER.size:
        raise ValueError(f"{path}: truncated spectrogram cache header")
    magic, version, dtype, _n, rows, cols = _CACHE_HEADER.unpack_from(blob, 0)
    if magic != CACHE_MAGIC:
        raise ValueError(f"{path}: not a spectrogram cache (magic {magic!r})")
    if version != CACHE_VERSION or dtype != _DTYPE_F32LE:
        raise ValueError(f"{path}: unsupported cache version {version} / dtype {dtype}")
    body = blob[_CACHE_HEADER.size :]
    if len(body) != rows * cols * 4:
        raise ValueError(f"{path}: expected {rows * cols * 4} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(np.float32)
