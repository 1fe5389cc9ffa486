"""WAV decoding and the mono/rate/gain conditioning applied before analysis."""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from math import gcd

import numpy as np
from scipy import signal

PIPELINE_RATE = 22050

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

RESAMPLE_TAPS = 64
RESAMPLE_BETA = 8.0


class WavDecodeError(ValueError):
    """Raised for a malformed RIFF/WAVE container."""

    def __init__(self, chunk: str, message: str):
        super().__init__(f"{chunk} chunk: {message}")
        self.chunk = chunk


class UnsupportedFormatError(ValueError):
    pass


@dataclass(frozen=True)
class AudioClip:
    """Real-valued samples, shape (frames,) for mono or (frames, channels)."""

    samples: np.ndarray
    rate: int

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.rate}")
        if self.samples.ndim not in (1, 2):
            raise ValueError("samples must be 1-D (mono) or 2-D (frames, channels)")

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    @property
    def frames(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return self.frames / self.rate


def decode_wav(data: bytes) -> AudioClip:
    """Decode a PCM16 or float32 RIFF/WAVE byte string.

    PCM values are divided by full scale (32768), so the result lies in
    [-1, 1). Multi-channel files keep their channels as columns.
    """
    if len(data) < 12:
        raise WavDecodeError("RIFF", "file shorter than the RIFF header")
    riff, _size, wave = struct.unpack_from("<4sI4s", data, 0)
    if riff != b"RIFF":
        raise WavDecodeError("RIFF", f"bad magic {riff!r}")
    if wave != b"WAVE":
        raise WavDecodeError("RIFF", f"form type is {wave!r}, not b'WAVE'")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid, csize = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8 : pos + 8 + csize]
        name = cid.decode("latin-1").strip()
        if len(body) < csize and cid != b"data":
            raise WavDecodeError(name, f"declares {csize} bytes but only {len(body)} remain")
        if cid == b"fmt ":
            if csize < 16:
                raise WavDecodeError("fmt", f"too short ({csize} bytes)")
            fmt = _parse_fmt(body)
        elif cid == b"data":
            payload = body
        # chunks are word-aligned
        pos += 8 + csize + (csize & 1)

    if fmt is None:
        raise WavDecodeError("fmt", "missing")
    if payload is None:
        raise WavDecodeError("data", "missing")

    tag, channels, rate, bits = fmt
    frame_bytes = channels * bits // 8
    usable = len(payload) - len(payload) % frame_bytes
    if tag == WAVE_FORMAT_PCM and bits == 16:
        raw = np.frombuffer(payload[:usable], dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        samples = np.frombuffer(payload[:usable], dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedFormatError(f"format tag {tag:#06x} with {bits} bits per sample is not supported")

    samples = samples.reshape(-1, channels)
    if channels == 1:
        samples = samples[:, 0]
    return AudioClip(samples, rate)


def _parse_fmt(body: bytes) -> tuple[int, int, int, int]:
    tag, channels, rate, _byte_rate, _align, bits = struct.unpack_from("<HHIIHH", body, 0)
    if tag == WAVE_FORMAT_EXTENSIBLE:
        if len(body) < 40:
            raise WavDecodeError("fmt", "extensible header truncated")
        # first two bytes of the SubFormat GUID carry the real format tag
        (tag,) = struct.unpack_from("<H", body, 24)
    if channels < 1:
        raise WavDecodeError("fmt", "channel count is zero")
    if rate < 1:
        raise WavDecodeError("fmt", "sample rate is zero")
    if bits % 8:
        raise UnsupportedFormatError(f"{bits} bits per sample is not byte aligned")
    return tag, channels, rate, bits


def encode_wav(clip: AudioClip, fmt: str = "float32") -> bytes:
    """Inverse of decode_wav; ``fmt`` is ``"float32"`` or ``"pcm16"``."""
    x = np.asarray(clip.samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    channels = x.shape[1]
    if fmt == "float32":
        tag, bits = WAVE_FORMAT_IEEE_FLOAT, 32
        payload = x.astype("<f4").tobytes()
    elif fmt == "pcm16":
        tag, bits = WAVE_FORMAT_PCM, 16
        payload = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2").tobytes()
    else:
        raise ValueError(f"unknown WAV encoding {fmt!r}")

    block = channels * bits // 8
    out = io.BytesIO()
    out.write(struct.pack("<4sI4s", b"RIFF", 4 + 24 + 8 + len(payload) + (len(payload) & 1), b"WAVE"))
    out.write(struct.pack("<4sIHHIIHH", b"fmt ", 16, tag, channels, clip.rate, clip.rate * block, block, bits))
    out.write(struct.pack("<4sI", b"data", len(payload)))
    out.write(payload)
    if len(payload) & 1:
        out.write(b"\x00")
    return out.getvalue()


def read_wav(path) -> AudioClip:
    with open(path, "rb") as f:
        return decode_wav(f.read())


def write_wav(path, clip: AudioClip, fmt: str = "float32") -> None:
    with open(path, "wb") as f:
        f.write(encode_wav(clip, fmt))


def mixdown(clip: AudioClip) -> AudioClip:
    """Average the channels of each frame."""
    if clip.samples.ndim == 1:
        return clip
    return AudioClip(clip.samples.mean(axis=1), clip.rate)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Windowed-sinc polyphase rate conversion of a mono clip.

    The low-pass prototype is a Kaiser-windowed sinc (beta 8) spanning
    RESAMPLE_TAPS samples at the lower of the two rates.
    """
    if target_rate <= 0:
        raise ValueError(f"target rate must be positive, got {target_rate}")
    if clip.samples.ndim != 1:
        raise ValueError("resample expects a mono clip; call mixdown first")
    if target_rate == clip.rate:
        return clip
    g = gcd(int(clip.rate), int(target_rate))
    up, down = int(target_rate) // g, int(clip.rate) // g
    h = _lowpass(up, down)
    y = signal.resample_poly(clip.samples, up, down, window=h)
    return AudioClip(y, int(target_rate))


_FILTERS: dict[tuple[int, int], np.ndarray] = {}


def _lowpass(up: int, down: int) -> np.ndarray:
    # read-mostly cache; a racing duplicate computation is harmless
    key = (up, down)
    h = _FILTERS.get(key)
    if h is None:
        factor = max(up, down)
        numtaps = RESAMPLE_TAPS * factor + 1
        h = signal.firwin(numtaps, 1.0 / factor, window=("kaiser", RESAMPLE_BETA))
        _FILTERS[key] = h
    return h


def normalize(clip: AudioClip) -> AudioClip:
    peak = np.max(np.abs(clip.samples)) if clip.frames else 0.0
    if peak == 0.0:
        return clip
    return AudioClip(clip.samples / peak, clip.rate)


def condition(clip: AudioClip, rate: int = PIPELINE_RATE) -> AudioClip:
    """mixdown -> resample -> normalize, the fixed front of the pipeline."""
    return normalize(resample(mixdown(clip), rate))
