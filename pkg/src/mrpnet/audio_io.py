"""WAV decoding into a canonical mono time series.

Supported containers: little-endian RIFF/WAVE with a PCM 16-bit, PCM 24-bit,
or IEEE float-32 payload and one or two channels. Stereo is averaged to mono,
integer PCM is scaled by 1 / 2**(bits-1), and the decoder never resamples:
off-rate files are the caller's problem (see :func:`require_rate`).

A float-32 encoder is included so tests and the tone synthesiser can produce
files the decoder round-trips bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

DEFAULT_SAMPLE_RATE = 44100

_FORMAT_PCM = 0x0001
_FORMAT_IEEE_FLOAT = 0x0003


class WavError(Exception):
    """Base class for WAV container problems."""


class WavDecodeError(WavError):
    """Malformed RIFF/WAVE structure; the message names the offending chunk."""


class UnsupportedFormatError(WavError):
    """Well-formed container with a codec or layout outside the supported set."""


class EmptyAudioError(WavError):
    """The data chunk holds zero samples."""


class RateMismatchError(WavError):
    """Sample rate differs from the rate the pipeline was configured for."""


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Mono amplitude sequence with its sample rate.

    samples: float64 array, every value in [-1, 1].
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("TimeSeries needs a non-empty 1-D sample array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("TimeSeries samples must be finite")
        if np.max(np.abs(samples)) > 1.0:
            raise ValueError("TimeSeries samples must lie in [-1, 1]")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size


def decode_wav(data: bytes) -> TimeSeries:
    """Decode a RIFF/WAVE byte string.

    Raises WavDecodeError for structural damage (naming the chunk),
    UnsupportedFormatError for codecs outside {PCM16, PCM24, float32} or
    channel counts outside {1, 2}, and EmptyAudioError for a zero-length
    data payload.
    """
    if len(data) < 12 or data[0:4] != b"RIFF":
        raise WavDecodeError("missing or short RIFF chunk")
    if data[8:12] != b"WAVE":
        raise WavDecodeError("RIFF form type is not WAVE")

    fmt = None
    payload = None
    offset = 12
    while offset + 8 <= len(data):
        chunk_id = data[offset : offset + 4]
        (chunk_size,) = struct.unpack_from("<I", data, offset + 4)
        body = data[offset + 8 : offset + 8 + chunk_size]
        if len(body) < chunk_size:
            raise WavDecodeError(f"truncated {chunk_id.decode('latin-1')!r} chunk")
        if chunk_id == b"fmt ":
            fmt = _parse_fmt(body)
        elif chunk_id == b"data":
            payload = body
        # chunks are word-aligned; odd sizes carry a pad byte
        offset += 8 + chunk_size + (chunk_size & 1)

    if fmt is None:
        raise WavDecodeError("missing 'fmt ' chunk")
    if payload is None:
        raise WavDecodeError("missing 'data' chunk")

    tag, channels, rate, bits = fmt
    if rate <= 0:
        raise WavDecodeError("'fmt ' chunk declares a zero sample rate")

    frame_size = channels * (bits // 8)
    if frame_size == 0 or len(payload) % frame_size != 0:
        raise WavDecodeError("'data' chunk size is not a whole number of frames")
    if len(payload) == 0:
        raise EmptyAudioError("'data' chunk holds zero samples")

    if tag == _FORMAT_PCM and bits == 16:
        flat = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    elif tag == _FORMAT_PCM and bits == 24:
        flat = _decode_pcm24(payload)
    elif tag == _FORMAT_IEEE_FLOAT and bits == 32:
        flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedFormatError(
            f"unsupported codec: format tag {tag}, {bits} bits per sample"
        )

    mono = flat if channels == 1 else flat.reshape(-1, channels).mean(axis=1)
    # float payloads may legally exceed full scale; clamp to the contract range
    mono = np.clip(mono, -1.0, 1.0)
    return TimeSeries(samples=mono, sample_rate=rate)


def _parse_fmt(body: bytes) -> tuple[int, int, int, int]:
    if len(body) < 16:
        raise WavDecodeError("short 'fmt ' chunk")
    tag, channels, rate, _byte_rate, _align, bits = struct.unpack_from("<HHIIHH", body, 0)
    if channels not in (1, 2):
        raise UnsupportedFormatError(f"unsupported channel count {channels}")
    return tag, channels, rate, bits


def _decode_pcm24(payload: bytes) -> np.ndarray:
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(-1, 3).astype(np.int64)
    value = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
    value -= (value >= (1 << 23)) * (1 << 24)  # sign extension
    return value.astype(np.float64) / float(1 << 23)


def require_rate(ts: TimeSeries, rate: int = DEFAULT_SAMPLE_RATE) -> TimeSeries:
    """Return ts unchanged if its rate matches, else raise RateMismatchError."""
    if ts.sample_rate != rate:
        raise RateMismatchError(
            f"expected {rate} Hz input, found {ts.sample_rate} Hz (no resampling is performed)"
        )
    return ts


def encode_wav_float32(ts: TimeSeries) -> bytes:
    """Encode a mono TimeSeries as an IEEE float-32 WAV byte string.

    Decoding the result reproduces the samples bit-exactly at float-32
    precision (decode(encode(ts)) quantizes each sample to float32 once).
    """
    frames = ts.samples.astype("<f4").tobytes()
    n = ts.samples.size
    rate = ts.sample_rate
    fmt_body = struct.pack("<HHIIHH", _FORMAT_IEEE_FLOAT, 1, rate, rate * 4, 4, 32)
    fact_body = struct.pack("<I", n)
    chunks = (
        b"fmt " + struct.pack("<I", len(fmt_body)) + fmt_body
        + b"fact" + struct.pack("<I", len(fact_body)) + fact_body
        + b"data" + struct.pack("<I", len(frames)) + frames
    )
    return b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks
