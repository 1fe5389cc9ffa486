import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from acc_audio.audio import (
    AudioClip,
    UnsupportedFormatError,
    WavDecodeError,
    condition,
    decode_wav,
    encode_wav,
    mixdown,
    normalize,
    resample,
)


def pcm16_wav(frames: np.ndarray, rate: int) -> bytes:
    """Hand-built PCM16 RIFF file, independent of encode_wav."""
    frames = np.asarray(frames, dtype="<i2")
    if frames.ndim == 1:
        frames = frames[:, None]
    ch = frames.shape[1]
    payload = frames.tobytes()
    fmt = struct.pack("<HHIIHH", 1, ch, rate, rate * ch * 2, ch * 2, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", len(body)) + body


def test_pcm16_full_scale_division():
    clip = decode_wav(pcm16_wav(np.array([32767, -32768, 0, 16384]), 8000))
    assert clip.samples.tolist() == [32767 / 32768, -1.0, 0.0, 0.5]
    assert clip.rate == 8000 and clip.channels == 1


def test_eight_channel_one_second():
    frames = np.random.default_rng(0).integers(-1000, 1000, size=(44100, 8))
    clip = decode_wav(pcm16_wav(frames, 44100))
    assert clip.frames == 44100 and clip.channels == 8 and clip.rate == 44100
    assert np.array_equal(clip.samples, frames / 32768.0)


def test_all_zero_payload():
    clip = decode_wav(pcm16_wav(np.zeros(100, dtype=int), 16000))
    assert not clip.samples.any()


def test_float32_roundtrip_lossless():
    x = np.random.default_rng(1).uniform(-1, 1, size=(500, 3)).astype(np.float32)
    clip = decode_wav(encode_wav(AudioClip(x.astype(np.float64), 48000)))
    assert clip.samples.dtype == np.float64
    assert np.array_equal(clip.samples, x.astype(np.float64))


@given(st.lists(st.floats(-1, 1, width=32), min_size=1, max_size=200), st.integers(1, 192000))
def test_float32_roundtrip_property(values, rate):
    x = np.array(values, dtype=np.float64)
    clip = decode_wav(encode_wav(AudioClip(x, rate)))
    assert clip.rate == rate
    assert np.array_equal(clip.samples, x)


def test_malformed_header_names_chunk():
    good = pcm16_wav(np.zeros(10, dtype=int), 8000)
    with pytest.raises(WavDecodeError, match="RIFF"):
        decode_wav(b"RIFX" + good[4:])
    with pytest.raises(WavDecodeError, match="fmt"):
        decode_wav(good[:20])
    no_data = good[: good.index(b"data")]
    with pytest.raises(WavDecodeError, match="data"):
        decode_wav(no_data)


def test_unsupported_encoding():
    raw = bytearray(pcm16_wav(np.zeros(10, dtype=int), 8000))
    # 8-bit PCM
    fmt_at = raw.index(b"fmt ") + 8
    struct.pack_into("<HHIIHH", raw, fmt_at, 1, 1, 8000, 8000, 1, 8)
    with pytest.raises(UnsupportedFormatError):
        decode_wav(bytes(raw))
    struct.pack_into("<HHIIHH", raw, fmt_at, 2, 1, 8000, 16000, 2, 16)
    with pytest.raises(UnsupportedFormatError):
        decode_wav(bytes(raw))


def test_mixdown_mean():
    clip = AudioClip(np.array([[0.4, 0.6], [1.0, -1.0]]), 100)
    assert np.allclose(mixdown(clip).samples, [0.5, 0.0])
    assert mixdown(clip).rate == 100


def test_mixdown_identical_channels():
    ch = np.random.default_rng(2).standard_normal(64)
    clip = AudioClip(np.repeat(ch[:, None], 8, axis=1), 100)
    assert np.allclose(mixdown(clip).samples, ch, rtol=0, atol=1e-15)


def test_mixdown_mono_passthrough():
    clip = AudioClip(np.arange(5.0), 10)
    assert mixdown(clip) is clip


def test_resample_exact_ratio_length():
    clip = AudioClip(np.zeros(441000), 44100)
    out = resample(clip, 22050)
    assert out.frames == 220500 and out.rate == 22050


def test_resample_identity():
    clip = AudioClip(np.random.default_rng(3).standard_normal(100), 22050)
    assert resample(clip, 22050) is clip


def test_resample_rejects_nonpositive_rate():
    clip = AudioClip(np.zeros(10), 100)
    with pytest.raises(ValueError):
        resample(clip, 0)
    with pytest.raises(ValueError):
        resample(clip, -5)


def test_resample_sine_fft_oracle():
    t = np.arange(44100) / 44100
    x = 0.5 * np.sin(2 * np.pi * 1000 * t)
    y = resample(AudioClip(x, 44100), 22050).samples
    spectrum = np.abs(np.fft.rfft(y)) * 2 / len(y)
    peak = int(np.argmax(spectrum))
    assert peak * 22050 / len(y) == pytest.approx(1000.0, abs=22050 / len(y))
    assert spectrum[peak] == pytest.approx(0.5, rel=0.01)


def test_resample_suppresses_alias():
    # 15 kHz is above the 11.025 kHz Nyquist of the target and must not fold back
    t = np.arange(44100) / 44100
    y = resample(AudioClip(np.sin(2 * np.pi * 15000 * t), 44100), 22050).samples
    assert np.max(np.abs(y[1000:-1000])) < 0.01


@given(st.integers(50, 3000), st.sampled_from([8000, 11025, 16000, 22050, 44100, 48000]), st.sampled_from([8000, 16000, 22050, 44100]))
def test_resample_preserves_duration(n, rate, target):
    clip = AudioClip(np.random.default_rng(n).standard_normal(n), rate)
    out = resample(clip, target)
    assert abs(out.duration - clip.duration) <= 1.0 / target + 1e-12


def test_normalize_examples():
    clip = AudioClip(np.array([0.1, -0.25, 0.0]), 10)
    assert np.allclose(normalize(clip).samples, [0.4, -1.0, 0.0])
    peak = AudioClip(np.array([1.0, -0.5]), 10)
    assert np.array_equal(normalize(peak).samples, peak.samples)
    zero = AudioClip(np.zeros(4), 10)
    assert np.array_equal(normalize(zero).samples, zero.samples)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=100))
def test_normalize_idempotent(values):
    clip = AudioClip(np.array(values), 10)
    once = normalize(clip)
    assert np.array_equal(normalize(once).samples, once.samples)
    peak = np.max(np.abs(once.samples))
    assert peak <= 1.0
    if np.any(clip.samples != 0):
        assert peak == 1.0


def test_condition_chain_order():
    x = np.random.default_rng(4).standard_normal((4410, 2))
    clip = AudioClip(x, 44100)
    out = condition(clip, 22050)
    expected = normalize(resample(mixdown(clip), 22050))
    assert np.array_equal(out.samples, expected.samples)
    assert out.rate == 22050 and np.max(np.abs(out.samples)) == 1.0
