"""Multiresolution recurrence-plot (MRP) image stacks.

One stack condenses seven nested audio blocks, all starting at the same
sample, into seven 32x32 images. Layer k (0..6) reads 2**(5+2k) samples and
goes through four stages:

  1. polarity-preserving 1-D max pooling, window 2**k
  2. recurrence plot of the pooled sequence: R[i, j] = |x[i] - x[j]|
  3. 2-D max pooling, window 2**k, down to 32x32
  4. element-wise square root, then subtraction of the scalar mean
     (no magnitude normalization: absolute level carries attack shape)

Shorter layers expose fine temporal phase structure, longer layers coarse
structure, and unlike a magnitude spectrogram none of the stages discards
waveform alignment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import TimeSeries

NUM_LAYERS = 7
IMAGE_SIDE = 32


def layer_block_length(layer: int) -> int:
    """Samples consumed by one layer: 2**5, 2**7, ..., 2**17."""
    return 1 << (5 + 2 * layer)


def layer_pool_window(layer: int) -> int:
    """Pooling window shared by the 1-D and 2-D reduction stages: 2**layer."""
    return 1 << layer


@dataclass(frozen=True, eq=False)
class MrpStack:
    """Seven preprocessed 32x32 layer images, shortest block first."""

    layers: np.ndarray  # (7, 32, 32) float64

    def __post_init__(self):
        if self.layers.shape != (NUM_LAYERS, IMAGE_SIDE, IMAGE_SIDE):
            raise ValueError(f"MrpStack needs shape (7, 32, 32), got {self.layers.shape}")


def recurrence_plot(x) -> np.ndarray:
    """Pairwise absolute-difference matrix |x[i] - x[j]| of a 1-D sequence."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("recurrence_plot needs a non-empty 1-D input")
    return np.abs(x[:, None] - x[None, :])


def maxpool_1d(x, window: int) -> np.ndarray:
    """Keep the signed sample of largest magnitude in each non-overlapping window.

    Ties on |x| resolve to the earliest index, so results are deterministic
    and the output values are always members of the input.
    """
    if window < 1:
        raise ValueError(f"pooling window must be >= 1, got {window}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("maxpool_1d needs a 1-D input")
    if x.size % window != 0:
        raise ValueError(f"length {x.size} is not a multiple of window {window}")
    blocks = x.reshape(-1, window)
    pick = np.argmax(np.abs(blocks), axis=1)
    return blocks[np.arange(blocks.shape[0]), pick]


def maxpool_2d(m, window: int) -> np.ndarray:
    """Per-block maximum over non-overlapping window x window tiles."""
    if window < 1:
        raise ValueError(f"pooling window must be >= 1, got {window}")
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("maxpool_2d needs a square matrix")
    side = m.shape[0]
    if side % window != 0:
        raise ValueError(f"side {side} is not a multiple of window {window}")
    out = side // window
    return m.reshape(out, window, out, window).max(axis=(1, 3))


def preprocess_image(m) -> np.ndarray:
    """Square-root compression followed by zero-centering; no rescaling."""
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise ValueError("preprocess_image needs non-negative entries")
    s = np.sqrt(m)
    return s - s.mean()


def build_mrp_layer(ts: TimeSeries, start: int, layer: int) -> np.ndarray:
    """One preprocessed 32x32 layer image for the block starting at `start`.

    Equivalent to preprocess_image(maxpool_2d(recurrence_plot(maxpool_1d(
    block, 2**layer)), 2**layer)) but never materializes the intermediate
    recurrence plot: the pooled value of a block of |a[i] - a[j]| is
    max(max_I - min_J, max_J - min_I) over the two windows' extrema, which
    is bit-identical to the naive computation because rounding a single
    subtraction is monotone in its exact value. Pooling windows that lie
    entirely in the zero padding contribute exact zeros, so only the
    occupied prefix of the block is ever touched.
    """
    if start < 0:
        raise ValueError(f"start must be >= 0, got {start}")
    if not 0 <= layer < NUM_LAYERS:
        raise ValueError(f"layer must be in 0..{NUM_LAYERS - 1}, got {layer}")
    window = layer_pool_window(layer)
    length = layer_block_length(layer)
    avail = min(max(ts.samples.size - start, 0), length)
    if avail == 0:
        return np.zeros((IMAGE_SIDE, IMAGE_SIDE))
    pooled = np.zeros(length // window)
    occupied = -(-avail // window) * window  # round up to whole windows
    prefix = np.zeros(occupied)
    prefix[:avail] = ts.samples[start : start + avail]
    pooled[: occupied // window] = maxpool_1d(prefix, window)
    segments = pooled.reshape(IMAGE_SIDE, window)
    hi = segments.max(axis=1)
    lo = segments.min(axis=1)
    reduced = np.maximum(hi[:, None] - lo[None, :], hi[None, :] - lo[:, None])
    return preprocess_image(reduced)


def build_mrp_stack(ts: TimeSeries, start: int) -> MrpStack:
    """All seven layer images for the block family starting at `start`."""
    layers = np.empty((NUM_LAYERS, IMAGE_SIDE, IMAGE_SIDE), dtype=np.float64)
    for k in range(NUM_LAYERS):
        layers[k] = build_mrp_layer(ts, start, k)
    return MrpStack(layers=layers)
