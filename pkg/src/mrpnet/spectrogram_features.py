"""Fixed-geometry log-magnitude spectrogram images.

32 frames of 64 samples at a 16-sample hop, transformed on a linear frequency
scale; bins 0..31 are kept (DC upward, Nyquist dropped) so the image is 32x32
with rows = frequency and columns = time. Magnitudes are log-compressed and
the image is zero-centered, mirroring the MRP preprocessing.
"""

from __future__ import annotations

import numpy as np

from .audio_io import TimeSeries

FRAME_LENGTH = 64
HOP_LENGTH = 16  # window / 4
NUM_FRAMES = 32
NUM_BINS = 32
LOG_FLOOR = 1e-10
# Magnitudes below this are numerical residue of exactly-silent bins (float64
# rounding of a 64-point transform is ~1e-13); flushing them to zero keeps the
# log floor exact instead of amplifying rounding noise by 1/LOG_FLOOR.
MAGNITUDE_GATE = 1e-9

WINDOWS = ("rectangular", "hann")


def _window(name: str) -> np.ndarray:
    if name == "rectangular":
        return np.ones(FRAME_LENGTH)
    if name == "hann":
        # periodic form, the usual analysis variant
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(FRAME_LENGTH) / FRAME_LENGTH)
    raise ValueError(f"unknown window {name!r}; expected one of {WINDOWS}")


def dft_magnitudes(frame, window: str = "rectangular") -> np.ndarray:
    """|X[k]| for k = 0..32 of one windowed 64-sample frame."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (FRAME_LENGTH,):
        raise ValueError(f"frame must have exactly {FRAME_LENGTH} samples, got {frame.shape}")
    return np.abs(np.fft.rfft(frame * _window(window)))


def spectrogram_image(ts: TimeSeries, start: int, window: str = "rectangular") -> np.ndarray:
    """32x32 log-magnitude image of the block starting at sample `start`.

    Frame f covers samples start+16f .. start+16f+63 (zero-padded past the
    signal end). Values are ln(magnitude + 1e-10) after the silent-bin gate,
    minus the scalar mean of the image.
    """
    if start < 0:
        raise ValueError(f"start must be >= 0, got {start}")
    span = HOP_LENGTH * (NUM_FRAMES - 1) + FRAME_LENGTH
    block = np.zeros(span, dtype=np.float64)
    avail = min(max(ts.samples.size - start, 0), span)
    if avail > 0:
        block[:avail] = ts.samples[start : start + avail]

    idx = HOP_LENGTH * np.arange(NUM_FRAMES)[:, None] + np.arange(FRAME_LENGTH)[None, :]
    frames = block[idx] * _window(window)[None, :]
    mags = np.abs(np.fft.rfft(frames, axis=1))[:, :NUM_BINS]
    mags[mags < MAGNITUDE_GATE] = 0.0
    image = np.log(mags + LOG_FLOOR).T  # rows = bins, columns = frames
    return image - image.mean()
