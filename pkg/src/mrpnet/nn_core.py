"""Deterministic neural-network primitives on float64 numpy arrays.

Forward/backward pairs for 3x3 zero-padded convolution, ReLU, 2x2 max
pooling, inverted dropout, fully-connected layers, and softmax cross-entropy,
plus SGD with momentum and learning-rate decay and a finite-difference
gradient checker. Everything is seeded and bit-reproducible; correctness is
favoured over throughput (the convolutions do route through BLAS via an
im2col layout, which only reassociates the per-output sums).

Shape conventions: single-example activations are (C, H, W) or (n,); the
batched variants used by the training loop take a leading batch axis.
Convolution weights are (F, C, 3, 3); fully-connected weights are (out, in).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

KERNEL = 3
PAD = 1


@dataclass
class LayerParams:
    """Weights + biases + their momentum state."""

    weights: np.ndarray
    biases: np.ndarray
    weight_velocity: np.ndarray = None  # type: ignore[assignment]
    bias_velocity: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.weight_velocity is None:
            self.weight_velocity = np.zeros_like(self.weights)
        if self.bias_velocity is None:
            self.bias_velocity = np.zeros_like(self.biases)
        if self.weight_velocity.shape != self.weights.shape:
            raise ValueError("weight_velocity shape mismatch")
        if self.bias_velocity.shape != self.biases.shape:
            raise ValueError("bias_velocity shape mismatch")


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 1e-2
    decay: float = 1e-4
    momentum: float = 0.8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.decay < 0:
            raise ValueError("decay must be non-negative")


def glorot_uniform_init(
    shape: tuple[int, ...], fan_in: int, fan_out: int, rng: np.random.Generator
) -> np.ndarray:
    """Uniform in +-sqrt(6 / (fan_in + fan_out)).

    A fan-in-only bound of sqrt(6/fan_in) destabilizes training here: the
    log-magnitude spectrogram channels reach |x| ~ 10, and at learning rate
    1e-2 the resulting activations saturate softmax and blow up within an
    epoch. The fan-sum bound keeps both feature families trainable.
    """
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def conv_params(c_in: int, c_out: int, rng: np.random.Generator) -> LayerParams:
    taps = KERNEL * KERNEL
    w = glorot_uniform_init((c_out, c_in, KERNEL, KERNEL), c_in * taps, c_out * taps, rng)
    return LayerParams(weights=w, biases=np.zeros(c_out))


def fc_params(n_in: int, n_out: int, rng: np.random.Generator) -> LayerParams:
    w = glorot_uniform_init((n_out, n_in), n_in, n_out, rng)
    return LayerParams(weights=w, biases=np.zeros(n_out))


# --- convolution ----------------------------------------------------------

# Large im2col/col2im intermediates are recycled per shape to avoid paying
# page-fault cost on every batch. Single-threaded use per model instance is
# part of the module contract, and forked workers get independent copies.
_SCRATCH: dict[tuple, np.ndarray] = {}


def _scratch(key: str, shape: tuple[int, ...]) -> np.ndarray:
    buf = _SCRATCH.get((key, shape))
    if buf is None:
        buf = np.empty(shape)
        _SCRATCH[(key, shape)] = buf
    return buf


def _im2col(x: np.ndarray, tag: str = "anon") -> np.ndarray:
    """(B, C, H, W) -> (B, C*9, H*W) patch matrix for 3x3 / pad 1 / stride 1.

    The result lives in a per-(tag, shape) scratch buffer; callers that keep
    patches alive across calls (one patch matrix per layer of a network) must
    pass distinct tags.
    """
    b, c, h, w = x.shape
    padded = _scratch("pad", (b, c, h + 2 * PAD, w + 2 * PAD))
    # only the one-pixel border needs clearing; the interior is overwritten
    padded[:, :, :PAD, :] = 0.0
    padded[:, :, PAD + h :, :] = 0.0
    padded[:, :, :, :PAD] = 0.0
    padded[:, :, :, PAD + w :] = 0.0
    padded[:, :, PAD : PAD + h, PAD : PAD + w] = x
    cols = _scratch(f"cols:{tag}", (b, c, KERNEL, KERNEL, h, w))
    for di in range(KERNEL):
        for dj in range(KERNEL):
            cols[:, :, di, dj] = padded[:, :, di : di + h, dj : dj + w]
    return cols.reshape(b, c * KERNEL * KERNEL, h * w)


def conv2d_forward_batch(
    x: np.ndarray, params: LayerParams, tag: str = "anon", patches: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Cross-correlation, zero padding 1, stride 1. Returns (out, patches).

    Pass `patches` to reuse a patch matrix already built for `x` (two layers
    reading the same input).
    """
    b, c, h, w = x.shape
    f, cw, kh, kw = params.weights.shape
    if cw != c:
        raise ValueError(f"input has {c} channels, kernel expects {cw}")
    if (kh, kw) != (KERNEL, KERNEL):
        raise ValueError(f"kernel must be {KERNEL}x{KERNEL}")
    if patches is None:
        patches = _im2col(x, tag)
    out = np.matmul(params.weights.reshape(f, -1), patches)
    out += params.biases[:, None]
    return out.reshape(b, f, h, w), patches


def conv2d_backward_batch(
    patches: np.ndarray, params: LayerParams, grad_out: np.ndarray, need_dx: bool = True
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Gradients of conv2d_forward_batch. Returns (dx, dweights, dbiases).

    need_dx=False skips the input gradient (the first layer of a network
    never uses it) and returns None in its place.
    """
    b, f, h, w = grad_out.shape
    g = grad_out.reshape(b, f, h * w)
    w_mat = params.weights.reshape(f, -1)
    dw = np.matmul(g, patches.transpose(0, 2, 1)).sum(axis=0).reshape(params.weights.shape)
    db = g.sum(axis=(0, 2))
    if not need_dx:
        return None, dw, db
    c = params.weights.shape[1]
    dcols = _scratch("dcols", (b, c * KERNEL * KERNEL, h * w))
    np.matmul(w_mat.T, g, out=dcols)
    dview = dcols.reshape(b, c, KERNEL, KERNEL, h, w)
    # accumulate straight into dx: patch offset (di, dj) lands at (di-1, dj-1)
    dx = np.zeros((b, c, h, w))
    for di in range(KERNEL):
        for dj in range(KERNEL):
            oi, oj = di - PAD, dj - PAD
            ti, tj = max(oi, 0), max(oj, 0)
            si, sj = max(-oi, 0), max(-oj, 0)
            hh, ww = h - abs(oi), w - abs(oj)
            dx[:, :, ti : ti + hh, tj : tj + ww] += dview[:, :, di, dj, si : si + hh, sj : sj + ww]
    return dx, dw, db


def conv2d_forward(x: np.ndarray, params: LayerParams) -> np.ndarray:
    """Single-example convolution: (C, H, W) -> (F, H, W)."""
    out, _ = conv2d_forward_batch(x[None], params)
    return out[0]


def conv2d_backward(
    x: np.ndarray, params: LayerParams, grad_out: np.ndarray
) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """Single-example gradients: returns (dx, (dweights, dbiases))."""
    patches = _im2col(x[None])
    dx, dw, db = conv2d_backward_batch(patches, params, grad_out[None])
    assert dx is not None
    return dx[0], (dw, db)


# --- pointwise and pooling --------------------------------------------------


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # gradient at exactly 0 is defined as 0
    return grad_out * (x > 0.0)


def maxpool2x2_forward_batch(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per 2x2 block maximum; ties go to the earliest row-major position.

    Returns (pooled, argmax) where argmax holds the winning in-block index
    0..3 needed to route gradients back.
    """
    *lead, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"spatial dims must be even, got {h}x{w}")
    blocks = (
        x.reshape(*lead, h // 2, 2, w // 2, 2)
        .swapaxes(-3, -2)
        .reshape(*lead, h // 2, w // 2, 4)
    )
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool2x2_backward_batch(arg: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Route each upstream value to its recorded argmax position."""
    *lead, h2, w2 = grad_out.shape
    dblocks = np.zeros((*lead, h2, w2, 4))
    np.put_along_axis(dblocks, arg[..., None], grad_out[..., None], axis=-1)
    return (
        dblocks.reshape(*lead, h2, w2, 2, 2)
        .swapaxes(-3, -2)
        .reshape(*lead, h2 * 2, w2 * 2)
    )


def maxpool2x2_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return maxpool2x2_forward_batch(x)


def maxpool2x2_backward(arg: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return maxpool2x2_backward_batch(arg, grad_out)


def dropout(
    x: np.ndarray, rate: float, mode: str, rng: np.random.Generator | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Inverted dropout. Train mode zeroes each element with probability
    `rate` and scales survivors by 1/(1-rate); eval mode is the identity.
    Returns (output, mask); backward is upstream * mask."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x, np.ones_like(x)
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


# --- fully connected --------------------------------------------------------


def fc_forward(x: np.ndarray, params: LayerParams) -> np.ndarray:
    """weights @ x + biases; batched input (B, n) maps to (B, m)."""
    if x.ndim == 1:
        return params.weights @ x + params.biases
    return x @ params.weights.T + params.biases


def fc_backward(
    x: np.ndarray, params: LayerParams, grad_out: np.ndarray
) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
    if x.ndim == 1:
        return params.weights.T @ grad_out, (np.outer(grad_out, x), grad_out.copy())
    dx = grad_out @ params.weights
    return dx, (grad_out.T @ x, grad_out.sum(axis=0))


# --- loss -------------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Stabilized softmax + negative log likelihood; returns (loss, dlogits)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.size == 0:
        raise ValueError("logits must be a non-empty vector")
    if not 0 <= label < logits.size:
        raise ValueError(f"label {label} out of range for {logits.size} classes")
    z = logits - logits.max()
    log_norm = np.log(np.exp(z).sum())
    probs = np.exp(z - log_norm)
    grad = probs.copy()
    grad[label] -= 1.0
    return float(log_norm - z[label]), grad


def softmax_xent_batch(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-example losses and dlogits for a (B, K) logit matrix."""
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(logits.shape[0])
    losses = log_norm - z[rows, labels]
    grads = np.exp(z - log_norm[:, None])
    grads[rows, labels] -= 1.0
    return losses, grads


# --- optimizer ----------------------------------------------------------------


def sgd_step(
    params: Sequence[LayerParams],
    grads: Sequence[tuple[np.ndarray, np.ndarray]],
    config: SgdConfig,
    iteration: int,
) -> None:
    """One momentum-SGD update in place.

    Effective rate eta_t = learning_rate / (1 + decay * iteration), iteration
    counted per update step starting at 0; then
    velocity <- momentum * velocity - eta_t * grad, param <- param + velocity.
    """
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    eta = config.learning_rate / (1.0 + config.decay * iteration)
    for p, (dw, db) in zip(params, grads):
        p.weight_velocity *= config.momentum
        p.weight_velocity -= eta * dw
        p.weights += p.weight_velocity
        p.bias_velocity *= config.momentum
        p.bias_velocity -= eta * db
        p.biases += p.bias_velocity


# --- gradient checking ---------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    probes: int
    worst: str = ""
    details: list = field(default_factory=list)


def gradient_check(
    loss_and_grads: Callable[[], tuple[float, Sequence[tuple[np.ndarray, np.ndarray]]]],
    params: Sequence[LayerParams],
    rng: np.random.Generator,
    probes: int = 200,
    step: float = 1e-5,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    `loss_and_grads` must recompute the loss (and gradients) from the current
    parameter values on every call, with any stochastic parts held fixed.
    Relative error is |analytic - numeric| / (|analytic| + |numeric| + 1e-8);
    at most `probes` randomly chosen parameter entries are probed.
    """
    _, grads = loss_and_grads()
    slots = []
    for li, p in enumerate(params):
        slots.extend(("w", li, i) for i in range(p.weights.size))
        slots.extend(("b", li, i) for i in range(p.biases.size))
    if len(slots) > probes:
        chosen = [slots[i] for i in rng.choice(len(slots), size=probes, replace=False)]
    else:
        chosen = slots

    worst = 0.0
    worst_desc = ""
    details = []
    for kind, li, i in chosen:
        arr = params[li].weights if kind == "w" else params[li].biases
        analytic = (grads[li][0] if kind == "w" else grads[li][1]).flat[i]
        orig = arr.flat[i]
        arr.flat[i] = orig + step
        up = loss_and_grads()[0]
        arr.flat[i] = orig - step
        down = loss_and_grads()[0]
        arr.flat[i] = orig
        numeric = (up - down) / (2.0 * step)
        rel = abs(analytic - numeric) / (abs(analytic) + abs(numeric) + 1e-8)
        details.append((kind, li, i, analytic, numeric, rel))
        if rel > worst:
            worst = rel
            worst_desc = f"{kind}[{li}] flat index {i}: analytic {analytic:.3e}, numeric {numeric:.3e}"
    return GradCheckReport(max_rel_error=worst, probes=len(chosen), worst=worst_desc, details=details)
