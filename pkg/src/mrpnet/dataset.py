"""Corpus assembly: acquisition points, augmentation, folds, file formats,
and the synthetic tone generator used for phase-discrimination experiments.

An Example is the full network input extracted from one recording at one
augmentation shift: 56 MRP channels (8 acquisition points x 7 layers,
point-major) plus 8 spectrogram channels (one per point), all 32x32 float32.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ftc
from .audio_io import TimeSeries
from .mrp_features import IMAGE_SIDE, NUM_LAYERS, build_mrp_stack
from .rng import Lcg64, uniform_block
from .spectrogram_features import FRAME_LENGTH, spectrogram_image

NUM_ACQUISITION_POINTS = 8
ACQUISITION_OFFSETS = (0, 1024, 2048, 4096, 8192, 16384, 32768, 65536)
MRP_CHANNELS = NUM_ACQUISITION_POINTS * NUM_LAYERS  # 56
SPEC_CHANNELS = NUM_ACQUISITION_POINTS  # 8

AUGMENT_STRIDE = 13
AUGMENT_COUNT = 13

ONSET_WINDOW = 512
ONSET_RMS_FRACTION = 0.01

DEFAULT_NUM_FOLDS = 10


class ConfigError(Exception):
    """Invalid corpus, fold, or synthesis configuration."""


@dataclass(eq=False)
class Example:
    """One network input: MRP tensor + spectrogram tensor + label.

    Channel ordering is point-major: MRP channel index = point * 7 + layer,
    spectrogram channel index = point.
    """

    mrp_channels: np.ndarray  # (56, 32, 32) float32
    spec_channels: np.ndarray  # (8, 32, 32) float32
    label: int
    source_id: str = ""

    def __post_init__(self):
        if self.mrp_channels.shape != (MRP_CHANNELS, IMAGE_SIDE, IMAGE_SIDE):
            raise ValueError(f"mrp_channels shape {self.mrp_channels.shape} != (56, 32, 32)")
        if self.spec_channels.shape != (SPEC_CHANNELS, IMAGE_SIDE, IMAGE_SIDE):
            raise ValueError(f"spec_channels shape {self.spec_channels.shape} != (8, 32, 32)")
        if self.label < 0:
            raise ValueError(f"label must be >= 0, got {self.label}")

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Example)
            and self.label == other.label
            and self.source_id == other.source_id
            and np.array_equal(self.mrp_channels, other.mrp_channels)
            and np.array_equal(self.spec_channels, other.spec_channels)
        )


def detect_onset(ts: TimeSeries) -> int:
    """Start of the first 512-sample window whose RMS exceeds 1% of the
    maximum 512-window RMS anywhere in the signal; 0 if the signal is too
    short or silent."""
    x = ts.samples
    if x.size <= ONSET_WINDOW:
        return 0
    squares = np.concatenate(([0.0], np.cumsum(x * x)))
    window_power = squares[ONSET_WINDOW:] - squares[:-ONSET_WINDOW]
    peak = window_power.max()
    if peak <= 0.0:
        return 0
    hits = np.nonzero(window_power > ONSET_RMS_FRACTION**2 * peak)[0]
    return int(hits[0]) if hits.size else 0


def acquisition_points(onset: int) -> list[int]:
    """Eight block starts, dense at the onset and sparse toward the rear."""
    if onset < 0:
        raise ValueError(f"onset must be >= 0, got {onset}")
    return [onset + off for off in ACQUISITION_OFFSETS]


def assemble_example(ts: TimeSeries, label: int, shift: int, source_id: str = "") -> Example:
    """Extract all 64 channels for one recording at one augmentation shift."""
    if shift < 0:
        raise ValueError(f"shift must be >= 0, got {shift}")
    points = acquisition_points(detect_onset(ts))
    mrp = np.empty((MRP_CHANNELS, IMAGE_SIDE, IMAGE_SIDE), dtype=np.float32)
    spec = np.empty((SPEC_CHANNELS, IMAGE_SIDE, IMAGE_SIDE), dtype=np.float32)
    for p, point in enumerate(points):
        stack = build_mrp_stack(ts, point + shift)
        mrp[p * NUM_LAYERS : (p + 1) * NUM_LAYERS] = stack.layers.astype(np.float32)
        spec[p] = spectrogram_image(ts, point + shift).astype(np.float32)
    return Example(mrp_channels=mrp, spec_channels=spec, label=label, source_id=source_id)


def augment(ts: TimeSeries, label: int, source_id: str = "") -> list[Example]:
    """13 temporally shifted variants (shift = 13k, k = 0..12; k=0 unshifted).

    The unshifted variant comes first; consumers treat the first example of
    each source group as the shift-0 test variant.
    """
    return [
        assemble_example(ts, label, AUGMENT_STRIDE * k, source_id)
        for k in range(AUGMENT_COUNT)
    ]


@dataclass(frozen=True)
class FoldSplit:
    """Per-example fold assignment; all examples of one source share a fold."""

    example_folds: tuple[int, ...]
    source_folds: dict[str, int]
    num_folds: int


def make_folds(source_ids: Sequence[str], seed: int, num_folds: int = DEFAULT_NUM_FOLDS) -> FoldSplit:
    """Shuffle distinct sources with the seeded generator and deal them
    round-robin into folds; every example inherits its source's fold."""
    distinct: list[str] = []
    seen = set()
    for sid in source_ids:
        if sid not in seen:
            seen.add(sid)
            distinct.append(sid)
    if len(distinct) < num_folds:
        raise ConfigError(
            f"need at least {num_folds} distinct sources for {num_folds} folds, got {len(distinct)}"
        )
    Lcg64(seed).shuffle(distinct)
    source_folds = {sid: i % num_folds for i, sid in enumerate(distinct)}
    return FoldSplit(
        example_folds=tuple(source_folds[sid] for sid in source_ids),
        source_folds=source_folds,
        num_folds=num_folds,
    )


# --- synthetic corpus ---------------------------------------------------

PHASE_RULES = ("zero", "alternating", "random", "schroeder")


@dataclass(frozen=True)
class SynthClassSpec:
    """One tone class: harmonic amplitudes + phase rule + envelope + pitch set.

    amp_jitter scales each harmonic by (1 + jitter * u), u uniform in [-1, 1];
    noise_level adds a uniform broadband floor of that peak amplitude (a
    recording-style floor that keeps log spectra away from the silence limit).
    Both draw from per-tone-index streams shared across classes, so classes
    that differ only in their phase rule stay matched tone for tone.
    """

    name: str
    amplitudes: tuple[float, ...]
    phase_rule: str
    fundamentals_hz: tuple[float, ...]
    count: int
    attack_ms: float = 0.0
    decay_ms: float | None = None
    amp_jitter: float = 0.0
    noise_level: float = 0.0


@dataclass(frozen=True)
class SynthConfig:
    classes: tuple[SynthClassSpec, ...]
    sample_rate: int = 44100
    duration_s: float = 4.0
    seed: int = 0
    exact_phase_mode: bool = True

    @staticmethod
    def from_dict(obj: dict) -> "SynthConfig":
        try:
            classes = tuple(
                SynthClassSpec(
                    name=c["name"],
                    amplitudes=tuple(float(a) for a in c["amplitudes"]),
                    phase_rule=c["phase_rule"],
                    fundamentals_hz=tuple(float(f) for f in c["fundamentals_hz"]),
                    count=int(c["count"]),
                    attack_ms=float(c.get("attack_ms", 0.0)),
                    decay_ms=None if c.get("decay_ms") is None else float(c["decay_ms"]),
                    amp_jitter=float(c.get("amp_jitter", 0.0)),
                    noise_level=float(c.get("noise_level", 0.0)),
                )
                for c in obj["classes"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed synthesis spec: {exc}") from exc
        return SynthConfig(
            classes=classes,
            sample_rate=int(obj.get("sample_rate", 44100)),
            duration_s=float(obj.get("duration_s", 4.0)),
            seed=int(obj.get("seed", 0)),
            exact_phase_mode=bool(obj.get("exact_phase_mode", True)),
        )

    def to_dict(self) -> dict:
        return {
            "classes": [
                {
                    "name": c.name,
                    "amplitudes": list(c.amplitudes),
                    "phase_rule": c.phase_rule,
                    "fundamentals_hz": list(c.fundamentals_hz),
                    "count": c.count,
                    "attack_ms": c.attack_ms,
                    "decay_ms": c.decay_ms,
                    "amp_jitter": c.amp_jitter,
                    "noise_level": c.noise_level,
                }
                for c in self.classes
            ],
            "sample_rate": self.sample_rate,
            "duration_s": self.duration_s,
            "seed": self.seed,
            "exact_phase_mode": self.exact_phase_mode,
        }


def _phases(rule: str, num_harmonics: int, rng: Lcg64) -> np.ndarray:
    if rule == "zero":
        return np.zeros(num_harmonics)
    if rule == "alternating":
        # quadrature shift on even harmonics; never a global polarity flip,
        # which MRP extraction is invariant to by construction
        return np.array([0.0 if h % 2 else math.pi / 2 for h in range(1, num_harmonics + 1)])
    if rule == "schroeder":
        return np.array(
            [-math.pi * h * (h - 1) / num_harmonics for h in range(1, num_harmonics + 1)]
        )
    if rule == "random":
        return np.array([2.0 * math.pi * rng.next_float() for _ in range(num_harmonics)])
    raise ConfigError(f"unknown phase rule {rule!r}; expected one of {PHASE_RULES}")


def harmonic_tone(
    fundamental_hz: float,
    amplitudes: Sequence[float],
    phases: Sequence[float],
    duration_s: float,
    sample_rate: int = 44100,
    attack_ms: float = 0.0,
    decay_ms: float | None = None,
) -> TimeSeries:
    """Additive cosine complex with a linear attack and exponential decay."""
    n = round(duration_s * sample_rate)
    t = np.arange(n) / sample_rate
    x = np.zeros(n)
    for h, (a, ph) in enumerate(zip(amplitudes, phases), start=1):
        x += a * np.cos(2.0 * math.pi * fundamental_hz * h * t + ph)
    attack = attack_ms / 1000.0
    if attack > 0.0:
        x *= np.minimum(t / attack, 1.0)
    if decay_ms is not None:
        decay = decay_ms / 1000.0
        x *= np.exp(-np.maximum(t - attack, 0.0) / decay)
    return TimeSeries(samples=x, sample_rate=sample_rate)


def _validate_synth(config: SynthConfig) -> None:
    if len(config.classes) < 2:
        raise ConfigError("synthesis config needs at least 2 classes")
    if config.duration_s < 3.5:
        raise ConfigError(f"tones must last at least 3.5 s, got {config.duration_s}")
    bin_hz = config.sample_rate / FRAME_LENGTH
    for c in config.classes:
        if c.phase_rule not in PHASE_RULES:
            raise ConfigError(f"class {c.name!r}: unknown phase rule {c.phase_rule!r}")
        if c.count < 1 or not c.amplitudes or not c.fundamentals_hz:
            raise ConfigError(f"class {c.name!r}: needs amplitudes, fundamentals and count >= 1")
        peak = sum(abs(a) for a in c.amplitudes) * (1.0 + abs(c.amp_jitter)) + abs(c.noise_level)
        if peak > 1.0:
            raise ConfigError(
                f"class {c.name!r}: worst-case peak amplitude {peak:.3f} exceeds full scale"
            )
        if config.exact_phase_mode:
            for f0 in c.fundamentals_hz:
                b = f0 / bin_hz
                if abs(b - round(b)) > 1e-9:
                    raise ConfigError(
                        f"class {c.name!r}: fundamental {f0} Hz is off-bin for a "
                        f"{FRAME_LENGTH}-sample frame (bin spacing {bin_hz} Hz) in exact-phase mode"
                    )
                top = round(b) * len(c.amplitudes)
                if top > FRAME_LENGTH // 2 - 1:
                    raise ConfigError(
                        f"class {c.name!r}: harmonic bin {top} reaches the Nyquist bin; "
                        "exact-phase mode needs every partial at bin 31 or below"
                    )


def synth_corpus(config: SynthConfig) -> list[tuple[TimeSeries, int]]:
    """Deterministic additive-synthesis corpus, class-major tone order.

    Tone i of every class draws its amplitude jitter from the same per-index
    stream, so classes differing only in phase rule produce magnitude-matched
    tone pairs.
    """
    _validate_synth(config)
    rng = Lcg64(config.seed)
    max_count = max(c.count for c in config.classes)
    jitter_seeds = [rng.next_u64() for _ in range(max_count)]
    noise_seeds = [rng.next_u64() for _ in range(max_count)]
    phase_seeds = [[rng.next_u64() for _ in range(c.count)] for c in config.classes]

    out: list[tuple[TimeSeries, int]] = []
    for label, c in enumerate(config.classes):
        for i in range(c.count):
            jitter_rng = Lcg64(jitter_seeds[i])
            scale = np.array(
                [1.0 + c.amp_jitter * (2.0 * jitter_rng.next_float() - 1.0) for _ in c.amplitudes]
            )
            amps = np.asarray(c.amplitudes) * scale
            phases = _phases(c.phase_rule, len(c.amplitudes), Lcg64(phase_seeds[label][i]))
            f0 = c.fundamentals_hz[i % len(c.fundamentals_hz)]
            tone = harmonic_tone(
                f0,
                amps,
                phases,
                config.duration_s,
                config.sample_rate,
                c.attack_ms,
                c.decay_ms,
            )
            if c.noise_level > 0.0:
                n = tone.samples.size
                floor = c.noise_level * (2.0 * uniform_block(noise_seeds[i], n) - 1.0)
                tone = TimeSeries(samples=tone.samples + floor, sample_rate=tone.sample_rate)
            out.append((tone, label))
    return out


# --- feature container ---------------------------------------------------

_CHANNEL_SPEC = {"mrp": MRP_CHANNELS, "spectrogram": SPEC_CHANNELS, "side": IMAGE_SIDE}
_VALUES_PER_EXAMPLE = (MRP_CHANNELS + SPEC_CHANNELS) * IMAGE_SIDE * IMAGE_SIDE


def write_features(
    examples: Sequence[Example], path, num_classes: int | None = None, seed: int | None = None
) -> None:
    """Write examples to an FTC feature container (lossless for float32 data)."""
    if not examples:
        raise ValueError("write_features needs at least one example")
    if num_classes is None:
        num_classes = max(e.label for e in examples) + 1
    if any(e.label >= num_classes for e in examples):
        raise ValueError(f"labels exceed num_classes={num_classes}")
    header = {
        "kind": "features",
        "example_count": len(examples),
        "num_classes": num_classes,
        "channel_spec": _CHANNEL_SPEC,
        "labels": [e.label for e in examples],
        "source_ids": [e.source_id for e in examples],
        "seed": seed,
    }
    payload = np.empty((len(examples), _VALUES_PER_EXAMPLE), dtype="<f4")
    for i, e in enumerate(examples):
        payload[i, : MRP_CHANNELS * IMAGE_SIDE * IMAGE_SIDE] = e.mrp_channels.ravel()
        payload[i, MRP_CHANNELS * IMAGE_SIDE * IMAGE_SIDE :] = e.spec_channels.ravel()
    ftc.write_container(path, header, payload)


def read_features(path) -> tuple[list[Example], dict]:
    """Read an FTC feature container; returns (examples, header)."""
    header, payload = ftc.read_container(path)
    if header.get("kind") != "features":
        raise ftc.FtcFormatError(f"expected kind 'features', found {header.get('kind')!r}", 12)
    for key in ("example_count", "num_classes", "channel_spec", "labels", "source_ids"):
        if key not in header:
            raise ftc.FtcFormatError(f"feature header lacks {key!r}", 12)
    if header["channel_spec"] != _CHANNEL_SPEC:
        raise ftc.FtcFormatError(f"unexpected channel spec {header['channel_spec']}", 12)
    count = int(header["example_count"])
    if len(header["labels"]) != count or len(header["source_ids"]) != count:
        raise ftc.FtcFormatError("label/source lists disagree with example_count", 12)
    if any(not 0 <= int(lb) < int(header["num_classes"]) for lb in header["labels"]):
        raise ftc.FtcFormatError("label outside 0..num_classes-1", 12)
    payload_offset = 12 + len(ftc.encode_header(header))
    ftc.expect_payload(payload, count * _VALUES_PER_EXAMPLE, payload_offset)
    split = MRP_CHANNELS * IMAGE_SIDE * IMAGE_SIDE
    examples = []
    for i in range(count):
        row = payload[i * _VALUES_PER_EXAMPLE : (i + 1) * _VALUES_PER_EXAMPLE]
        examples.append(
            Example(
                mrp_channels=row[:split].reshape(MRP_CHANNELS, IMAGE_SIDE, IMAGE_SIDE).copy(),
                spec_channels=row[split:].reshape(SPEC_CHANNELS, IMAGE_SIDE, IMAGE_SIDE).copy(),
                label=int(header["labels"][i]),
                source_id=str(header["source_ids"][i]),
            )
        )
    return examples, header


# --- corpus manifest ------------------------------------------------------


def write_manifest(entries: list[dict], path) -> None:
    """JSON list of {path, label, source_id}; paths relative to the manifest."""
    Path(path).write_text(json.dumps(entries, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def read_manifest(path) -> list[dict]:
    entries = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(entries, list):
        raise ConfigError(f"manifest {path} is not a JSON list")
    for e in entries:
        if not {"path", "label", "source_id"} <= set(e):
            raise ConfigError(f"manifest entry missing keys: {e}")
    return entries
