"""FTC binary container: feature tensors and model parameters on disk.

Layout (all integers little-endian):

    bytes 0..3    magic "FTC1"
    bytes 4..7    version u32 = 1
    bytes 8..11   header length u32
    ...           UTF-8 JSON header (canonical: sorted keys, no whitespace)
    ...           payload of IEEE-754 binary32 values, row-major

The JSON header carries a "kind" discriminator: "features" for example
tensors (see dataset.write_features) and "params" for model parameters.
Writes are canonical, so identical content yields identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"FTC1"
VERSION = 1


class FtcFormatError(Exception):
    """Structural problem in an FTC file; carries the failing byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def encode_header(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_container(path, header: dict, payload: np.ndarray) -> None:
    """Write header + float32 payload; payload is flattened row-major."""
    blob = encode_header(header)
    body = np.ascontiguousarray(payload, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(VERSION.to_bytes(4, "little"))
        fh.write(len(blob).to_bytes(4, "little"))
        fh.write(blob)
        fh.write(body)


def read_container(path) -> tuple[dict, np.ndarray]:
    """Read and validate a container; returns (header, float32 payload)."""
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        raise FtcFormatError("bad magic, expected 'FTC1'", 0)
    if len(data) < 8:
        raise FtcFormatError("truncated before version field", 4)
    version = int.from_bytes(data[4:8], "little")
    if version != VERSION:
        raise FtcFormatError(f"unsupported version {version}", 4)
    if len(data) < 12:
        raise FtcFormatError("truncated before header length", 8)
    header_len = int.from_bytes(data[8:12], "little")
    if len(data) < 12 + header_len:
        raise FtcFormatError("truncated inside JSON header", 12)
    try:
        header = json.loads(data[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FtcFormatError(f"undecodable JSON header: {exc}", 12) from exc
    if not isinstance(header, dict):
        raise FtcFormatError("JSON header is not an object", 12)
    body = data[12 + header_len :]
    if len(body) % 4:
        raise FtcFormatError(
            "payload truncated mid-value (length not a multiple of 4)",
            len(data) - len(body) % 4,
        )
    payload = np.frombuffer(body, dtype="<f4")
    return header, payload


def expect_payload(payload: np.ndarray, count: int, payload_offset: int) -> None:
    """Raise if the payload does not hold exactly `count` float32 values."""
    if payload.size < count:
        raise FtcFormatError(
            f"payload truncated: expected {count} float32 values, found {payload.size}",
            payload_offset + 4 * payload.size,
        )
    if payload.size > count:
        raise FtcFormatError(
            f"trailing bytes: expected {count} float32 values, found {payload.size}",
            payload_offset + 4 * count,
        )


def write_params(named_tensors: list[tuple[str, np.ndarray]], path, extra: dict | None = None) -> None:
    """Serialize named tensors (order-preserving) as a kind="params" container."""
    header = dict(extra or {})
    header["kind"] = "params"
    header["tensors"] = [
        {"name": name, "shape": list(tensor.shape)} for name, tensor in named_tensors
    ]
    flat = [np.ascontiguousarray(t, dtype="<f4").ravel() for _, t in named_tensors]
    payload = np.concatenate(flat) if flat else np.zeros(0, dtype="<f4")
    write_container(path, header, payload)


def read_params(path) -> tuple[list[tuple[str, np.ndarray]], dict]:
    """Read a kind="params" container; tensors come back as float64 arrays."""
    header, payload = read_container(path)
    if header.get("kind") != "params":
        raise FtcFormatError(f"expected kind 'params', found {header.get('kind')!r}", 12)
    specs = header.get("tensors")
    if not isinstance(specs, list):
        raise FtcFormatError("params header lacks a tensor list", 12)
    total = sum(int(np.prod(s["shape"])) for s in specs)
    payload_offset = 12 + len(encode_header(header))
    expect_payload(payload, total, payload_offset)
    out = []
    pos = 0
    for s in specs:
        size = int(np.prod(s["shape"]))
        out.append((s["name"], payload[pos : pos + size].astype(np.float64).reshape(s["shape"])))
        pos += size
    return out, header
