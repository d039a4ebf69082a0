"""Shared builders: hand-rolled WAV byte strings and snippet signals."""

import struct

import numpy as np


def build_wav(payload: bytes, *, tag: int, channels: int, rate: int, bits: int,
              extra_chunks: bytes = b"") -> bytes:
    fmt = struct.pack(
        "<HHIIHH", tag, channels, rate, rate * channels * bits // 8, channels * bits // 8, bits
    )
    chunks = b"fmt " + struct.pack("<I", len(fmt)) + fmt
    chunks += extra_chunks
    chunks += b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks


def wav_pcm16(samples, channels: int = 1, rate: int = 44100) -> bytes:
    payload = np.asarray(samples, dtype="<i2").tobytes()
    return build_wav(payload, tag=1, channels=channels, rate=rate, bits=16)


def wav_pcm24(values, channels: int = 1, rate: int = 44100) -> bytes:
    out = bytearray()
    for v in values:
        out += int(v & 0xFFFFFF).to_bytes(3, "little")
    return build_wav(bytes(out), tag=1, channels=channels, rate=rate, bits=24)


def wav_float32(samples, channels: int = 1, rate: int = 44100) -> bytes:
    payload = np.asarray(samples, dtype="<f4").tobytes()
    return build_wav(payload, tag=3, channels=channels, rate=rate, bits=32)
