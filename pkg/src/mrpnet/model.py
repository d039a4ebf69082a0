"""Two-column convolutional classifier, training loop, and k-fold evaluation.

Each column runs conv3x3-ReLU-conv3x3-ReLU-pool-dropout twice (filter counts
F1 then F2), the flattened column outputs are merged by element-wise sum, and
a shared head (FC-ReLU-dropout-FC-softmax) produces class probabilities. The
"combined" variant feeds MRP channels to column A and spectrogram channels to
column B; the single-source ablations feed the chosen source to both columns,
adapting input channel counts, so every variant has identical depth and
hyper-parameters.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import ftc
from .dataset import MRP_CHANNELS, SPEC_CHANNELS, ConfigError, Example, make_folds
from .nn_core import (
    LayerParams,
    SgdConfig,
    conv2d_backward_batch,
    conv2d_forward_batch,
    conv_params,
    dropout,
    fc_backward,
    fc_forward,
    fc_params,
    maxpool2x2_backward_batch,
    maxpool2x2_forward_batch,
    relu,
    relu_backward,
    sgd_step,
    softmax,
    softmax_xent_batch,
)

VARIANTS = ("combined", "mrp", "spec")
_IMAGE_SIDE = 32
_FLAT_SIDE = _IMAGE_SIDE // 4  # two 2x2 pools


@dataclass(frozen=True)
class NetConfig:
    num_classes: int
    f1: int = 16
    f2: int = 32
    hidden: int = 128
    conv_dropout: float = 0.25
    head_dropout: float = 0.5
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0
    variant: str = "combined"
    sgd: SgdConfig = field(default_factory=SgdConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")


def column_channels(variant: str) -> tuple[int, int]:
    """Input channel counts (column A, column B) for a variant."""
    if variant == "combined":
        return MRP_CHANNELS, SPEC_CHANNELS
    if variant == "mrp":
        return MRP_CHANNELS, MRP_CHANNELS
    if variant == "spec":
        return SPEC_CHANNELS, SPEC_CHANNELS
    raise ValueError(f"unknown variant {variant!r}")


@dataclass
class MultiColumnNet:
    config: NetConfig
    column_a: list[LayerParams]
    column_b: list[LayerParams]
    head: list[LayerParams]

    def all_params(self) -> list[LayerParams]:
        return [*self.column_a, *self.column_b, *self.head]


def build_net(config: NetConfig) -> MultiColumnNet:
    """Freshly initialized network; weights uniform +-sqrt(6/fan_in), zero biases."""
    rng = np.random.default_rng(config.seed)
    ca, cb = column_channels(config.variant)

    def column(c_in: int) -> list[LayerParams]:
        return [
            conv_params(c_in, config.f1, rng),
            conv_params(config.f1, config.f1, rng),
            conv_params(config.f1, config.f2, rng),
            conv_params(config.f2, config.f2, rng),
        ]

    flat = config.f2 * _FLAT_SIDE * _FLAT_SIDE
    column_a = column(ca)
    column_b = column(cb)
    head = [fc_params(flat, config.hidden, rng), fc_params(config.hidden, config.num_classes, rng)]
    return MultiColumnNet(config=config, column_a=column_a, column_b=column_b, head=head)


def single_column_variant(net: MultiColumnNet, which: str) -> MultiColumnNet:
    """Ablation network fed one data source in both columns.

    "combined" returns the net unchanged; "mrp" / "spec" rebuild with adapted
    input channel counts (weights are freshly initialized from the same seed
    because the shapes differ).
    """
    if which == "combined" and net.config.variant == "combined":
        return net
    return build_net(replace(net.config, variant=which))


# --- forward / backward -----------------------------------------------------


def _column_inputs(variant: str, mrp: np.ndarray, spec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if variant == "combined":
        return mrp, spec
    if variant == "mrp":
        return mrp, mrp
    return spec, spec


def batch_tensors(examples: Sequence[Example]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack examples into float64 (B, 56, 32, 32), (B, 8, 32, 32), labels."""
    mrp = np.stack([e.mrp_channels for e in examples]).astype(np.float64)
    spec = np.stack([e.spec_channels for e in examples]).astype(np.float64)
    labels = np.array([e.label for e in examples], dtype=np.int64)
    return mrp, spec, labels


def column_forward_batch(
    layers: Sequence[LayerParams],
    x: np.ndarray,
    rate: float,
    mode: str,
    rng: np.random.Generator | None,
    tag: str = "col",
    first_patches: np.ndarray | None = None,
) -> tuple[np.ndarray, dict]:
    """One column: two conv-conv-pool-dropout blocks, then flatten."""
    cache: dict = {"x": x}
    h = x
    for block in (0, 1):
        i, j = 2 * block, 2 * block + 1
        z1, p1 = conv2d_forward_batch(
            h, layers[i], tag=f"{tag}{i}", patches=first_patches if i == 0 else None
        )
        a1 = relu(z1)
        z2, p2 = conv2d_forward_batch(a1, layers[j], tag=f"{tag}{j}")
        a2 = relu(z2)
        pooled, arg = maxpool2x2_forward_batch(a2)
        dropped, mask = dropout(pooled, rate, mode, rng)
        cache[f"b{block}"] = (p1, z1, a1, p2, z2, arg, mask)
        h = dropped
    cache["flat_shape"] = h.shape
    return h.reshape(h.shape[0], -1), cache


def column_backward_batch(
    layers: Sequence[LayerParams], cache: dict, dflat: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * 4  # type: ignore[list-item]
    dh = dflat.reshape(cache["flat_shape"])
    for block in (1, 0):
        i, j = 2 * block, 2 * block + 1
        p1, z1, a1, p2, z2, arg, mask = cache[f"b{block}"]
        dpool = dh * mask
        da2 = maxpool2x2_backward_batch(arg, dpool)
        dz2 = relu_backward(z2, da2)
        da1, dw2, db2 = conv2d_backward_batch(p2, layers[j], dz2)
        dz1 = relu_backward(z1, da1)
        # the network input's gradient is never consumed
        dh, dw1, db1 = conv2d_backward_batch(p1, layers[i], dz1, need_dx=block != 0)
        grads[j] = (dw2, db2)
        grads[i] = (dw1, db1)
    return grads


def forward_batch(
    net: MultiColumnNet,
    mrp: np.ndarray,
    spec: np.ndarray,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, dict]:
    """Class probabilities (B, K) plus the cache needed for backward."""
    cfg = net.config
    xa, xb = _column_inputs(cfg.variant, mrp, spec)
    fa, ca = column_forward_batch(net.column_a, xa, cfg.conv_dropout, mode, rng, tag="a")
    # single-source variants feed both columns the same tensor: reuse patches
    shared = ca["b0"][0] if xb is xa else None
    fb, cb = column_forward_batch(
        net.column_b, xb, cfg.conv_dropout, mode, rng, tag="b", first_patches=shared
    )
    merged = fa + fb
    z1 = fc_forward(merged, net.head[0])
    a1 = relu(z1)
    d1, mask = dropout(a1, cfg.head_dropout, mode, rng)
    logits = fc_forward(d1, net.head[1])
    cache = {"ca": ca, "cb": cb, "merged": merged, "z1": z1, "d1": d1, "mask": mask, "logits": logits}
    return softmax(logits), cache


def backward_batch(net: MultiColumnNet, cache: dict, dlogits: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradients for all layers in all_params() order."""
    dd1, g_fc2 = fc_backward(cache["d1"], net.head[1], dlogits)
    da1 = dd1 * cache["mask"]
    dz1 = relu_backward(cache["z1"], da1)
    dmerged, g_fc1 = fc_backward(cache["merged"], net.head[0], dz1)
    ga = column_backward_batch(net.column_a, cache["ca"], dmerged)
    gb = column_backward_batch(net.column_b, cache["cb"], dmerged)
    return [*ga, *gb, g_fc1, g_fc2]


def forward(
    net: MultiColumnNet,
    example: Example,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Class-probability vector for one example."""
    mrp, spec, _ = batch_tensors([example])
    probs, _ = forward_batch(net, mrp, spec, mode, rng)
    return probs[0]


# --- training -----------------------------------------------------------------


def train(
    net: MultiColumnNet, examples: Sequence[Example], epochs: int, seed: int
) -> tuple[MultiColumnNet, list[float]]:
    """Mini-batch SGD with a seeded shuffle; returns (net, per-epoch mean loss).

    Deterministic: the same seed yields bit-identical parameters and trace.
    """
    if not examples:
        raise ConfigError("training needs a non-empty example list")
    rng = np.random.default_rng(seed)
    mrp, spec, labels = batch_tensors(examples)
    n = len(examples)
    batch = net.config.batch_size
    params = net.all_params()
    trace: list[float] = []
    iteration = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, batch):
            idx = order[lo : lo + batch]
            probs_cache = forward_batch(net, mrp[idx], spec[idx], "train", rng)
            losses, dlogits = softmax_xent_batch(probs_cache[1]["logits"], labels[idx])
            total += float(losses.sum())
            grads = backward_batch(net, probs_cache[1], dlogits / idx.size)
            sgd_step(params, grads, net.config.sgd, iteration)
            iteration += 1
        trace.append(total / n)
    return net, trace


# --- evaluation -----------------------------------------------------------------


@dataclass(eq=False)
class ConfusionMatrix:
    """counts[true, predicted] over evaluated sources."""

    counts: np.ndarray

    def total(self) -> int:
        return int(self.counts.sum())

    def to_lists(self) -> list[list[int]]:
        return [[int(v) for v in row] for row in self.counts]


def evaluate(net: MultiColumnNet, examples: Sequence[Example]) -> tuple[float, ConfusionMatrix]:
    """Per-source error rate: each source is predicted by the argmax of the
    mean probability vector over its examples."""
    if not examples:
        raise ConfigError("evaluation needs a non-empty example list")
    k = net.config.num_classes
    mrp, spec, labels = batch_tensors(examples)
    probs = np.empty((len(examples), k))
    for lo in range(0, len(examples), 64):
        probs[lo : lo + 64] = forward_batch(net, mrp[lo : lo + 64], spec[lo : lo + 64])[0]

    order: list[str] = []
    groups: dict[str, list[int]] = {}
    for i, e in enumerate(examples):
        if e.source_id not in groups:
            groups[e.source_id] = []
            order.append(e.source_id)
        groups[e.source_id].append(i)

    counts = np.zeros((k, k), dtype=np.int64)
    wrong = 0
    for sid in order:
        idx = groups[sid]
        mean = probs[idx].mean(axis=0)
        pred = int(np.argmax(mean))
        true = int(labels[idx[0]])
        counts[true, pred] += 1
        wrong += pred != true
    return wrong / len(order), ConfusionMatrix(counts=counts)


# --- cross-validation -------------------------------------------------------------


@dataclass(eq=False)
class CvResult:
    variant: str
    per_fold_errors: list[float]
    mean_error: float
    confusion: ConfusionMatrix
    fold_nets: list[MultiColumnNet]
    fold_loss_traces: list[list[float]]

    def to_json_dict(self) -> dict:
        return {
            "variant": self.variant,
            "per_fold_errors": self.per_fold_errors,
            "mean_error": self.mean_error,
            "confusion_matrix": self.confusion.to_lists(),
        }


def fold_seed(seed: int, fold: int) -> int:
    return seed + 7919 * (fold + 1)


def resolve_workers(workers: int | None, folds: int) -> int:
    """MRP_THREADS caps fold parallelism; 0 (or unset worker count) = auto."""
    if workers is None:
        raw = os.environ.get("MRP_THREADS", "0").strip()
        workers = int(raw) if raw else 0
    if workers == 0:
        workers = os.cpu_count() or 1
    return max(1, min(workers, folds))


_SHARED: dict = {}


def _run_fold(f: int) -> tuple[int, float, np.ndarray, MultiColumnNet, list[float]]:
    examples: Sequence[Example] = _SHARED["examples"]
    split = _SHARED["split"]
    config: NetConfig = _SHARED["config"]
    epochs: int = _SHARED["epochs"]
    seed: int = _SHARED["seed"]

    train_idx = [i for i, fold in enumerate(split.example_folds) if fold != f]
    seen: set[str] = set()
    test_idx = []
    for i, fold in enumerate(split.example_folds):
        if fold == f and examples[i].source_id not in seen:
            seen.add(examples[i].source_id)
            test_idx.append(i)
    train_sources = {examples[i].source_id for i in train_idx}
    if train_sources & seen:
        raise ConfigError(f"fold {f} leaks sources between train and test")

    net = build_net(replace(config, seed=fold_seed(seed, f)))
    _, trace = train(net, [examples[i] for i in train_idx], epochs, fold_seed(seed, f) + 1)
    error, confusion = evaluate(net, [examples[i] for i in test_idx])
    return f, error, confusion.counts, net, trace


def cross_validate(
    examples: Sequence[Example],
    variant: str = "combined",
    folds: int = 10,
    seed: int = 0,
    epochs: int = 30,
    config: NetConfig | None = None,
    workers: int | None = None,
) -> CvResult:
    """K-fold evaluation over source recordings.

    Each fold trains a freshly seeded net on every example whose source lies
    outside the fold and tests on the first (unshifted) example of each fold
    source; extraction order guarantees the first example per source is the
    shift-0 variant. Folds are independent, so they may run in parallel
    without changing any result.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")
    num_classes = max(e.label for e in examples) + 1
    if config is None:
        config = NetConfig(num_classes=num_classes, variant=variant)
    else:
        config = replace(config, num_classes=num_classes, variant=variant)
    split = make_folds([e.source_id for e in examples], seed, folds)

    _SHARED.update(examples=examples, split=split, config=config, epochs=epochs, seed=seed)
    try:
        n_workers = resolve_workers(workers, folds)
        if n_workers > 1:
            import multiprocessing as mp

            try:
                ctx = mp.get_context("fork")
            except ValueError:
                ctx = None
            if ctx is not None:
                # workers keep the parent's BLAS threading so fold results are
                # bit-identical whether folds run serially or in parallel
                with ctx.Pool(n_workers) as pool:
                    results = pool.map(_run_fold, range(folds))
            else:
                results = [_run_fold(f) for f in range(folds)]
        else:
            results = [_run_fold(f) for f in range(folds)]
    finally:
        _SHARED.clear()

    results.sort(key=lambda r: r[0])
    errors = [r[1] for r in results]
    counts = np.sum([r[2] for r in results], axis=0)
    return CvResult(
        variant=variant,
        per_fold_errors=errors,
        mean_error=float(np.mean(errors)),
        confusion=ConfusionMatrix(counts=counts),
        fold_nets=[r[3] for r in results],
        fold_loss_traces=[r[4] for r in results],
    )


# --- parameter persistence ----------------------------------------------------------


def net_param_tensors(net: MultiColumnNet) -> list[tuple[str, np.ndarray]]:
    out = []
    for group, layers in (("column_a", net.column_a), ("column_b", net.column_b), ("head", net.head)):
        for i, layer in enumerate(layers):
            out.append((f"{group}.{i}.weights", layer.weights))
            out.append((f"{group}.{i}.biases", layer.biases))
    return out


def save_net(net: MultiColumnNet, path) -> None:
    """Write weights and biases (float32) plus the config needed to rebuild."""
    cfg = net.config
    meta = {
        "net_config": {
            "num_classes": cfg.num_classes,
            "f1": cfg.f1,
            "f2": cfg.f2,
            "hidden": cfg.hidden,
            "conv_dropout": cfg.conv_dropout,
            "head_dropout": cfg.head_dropout,
            "batch_size": cfg.batch_size,
            "epochs": cfg.epochs,
            "seed": cfg.seed,
            "variant": cfg.variant,
            "sgd": {
                "learning_rate": cfg.sgd.learning_rate,
                "decay": cfg.sgd.decay,
                "momentum": cfg.sgd.momentum,
            },
        }
    }
    ftc.write_params(net_param_tensors(net), path, extra=meta)


def load_net(path) -> MultiColumnNet:
    tensors, header = ftc.read_params(path)
    raw = header.get("net_config")
    if not isinstance(raw, dict):
        raise ftc.FtcFormatError("params header lacks net_config", 12)
    sgd = raw.get("sgd", {})
    config = NetConfig(
        num_classes=raw["num_classes"],
        f1=raw["f1"],
        f2=raw["f2"],
        hidden=raw["hidden"],
        conv_dropout=raw["conv_dropout"],
        head_dropout=raw["head_dropout"],
        batch_size=raw["batch_size"],
        epochs=raw["epochs"],
        seed=raw["seed"],
        variant=raw["variant"],
        sgd=SgdConfig(
            learning_rate=sgd.get("learning_rate", 1e-2),
            decay=sgd.get("decay", 1e-4),
            momentum=sgd.get("momentum", 0.8),
        ),
    )
    net = build_net(config)
    by_name = dict(tensors)
    for name, arr in net_param_tensors(net):
        loaded = by_name.get(name)
        if loaded is None or loaded.shape != arr.shape:
            raise ftc.FtcFormatError(f"missing or misshapen tensor {name!r}", 12)
        arr[...] = loaded
    return net
