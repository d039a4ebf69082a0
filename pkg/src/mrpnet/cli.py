"""Command-line pipeline driver.

Subcommands: synth (tone corpus to WAV + manifest), extract (WAV manifest to
FTC features), train (k-fold cross-validation to results JSON + parameter
files), render (one feature channel to a PGM image). Every command writes its
fully resolved configuration as JSON alongside its outputs, diagnostics go to
stderr, and exit codes are 0 (done), 1 (I/O or data error), 2 (bad
configuration or arguments).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dataset, ftc, model
from .audio_io import (
    DEFAULT_SAMPLE_RATE,
    WavError,
    decode_wav,
    encode_wav_float32,
    require_rate,
)

PGM_MAXVAL = 255


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _run_config_path(out: Path) -> Path:
    return out / "run_config.json" if out.suffix == "" else out.with_suffix(".run.json")


def cmd_synth(args: argparse.Namespace) -> int:
    spec = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    config = dataset.SynthConfig.from_dict(spec)
    if args.seed is not None:
        config = dataset.SynthConfig.from_dict({**config.to_dict(), "seed": args.seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    tones = dataset.synth_corpus(config)
    entries = []
    counters: dict[int, int] = {}
    for ts, label in tones:
        i = counters.get(label, 0)
        counters[label] = i + 1
        name = f"{config.classes[label].name}_{i:03d}.wav"
        (out / name).write_bytes(encode_wav_float32(ts))
        entries.append({"path": name, "label": label, "source_id": name[:-4]})
    dataset.write_manifest(entries, out / "manifest.json")
    _write_json({"command": "synth", "out": str(out), "synth": config.to_dict()}, _run_config_path(out))
    print(f"wrote {len(entries)} tones + manifest to {out}", file=sys.stderr)
    return 0


def cmd_extract(args: argparse.Namespace) -> int:
    manifest_path = Path(args.manifest)
    entries = dataset.read_manifest(manifest_path)
    base = manifest_path.parent
    examples = []
    for entry in entries:
        wav_path = base / entry["path"]
        try:
            ts = require_rate(decode_wav(wav_path.read_bytes()), args.rate)
        except (OSError, WavError) as exc:
            raise WavError(f"{wav_path}: {exc}") from exc
        if args.augment:
            examples.extend(dataset.augment(ts, entry["label"], entry["source_id"]))
        else:
            examples.append(dataset.assemble_example(ts, entry["label"], 0, entry["source_id"]))
    out = Path(args.out)
    dataset.write_features(examples, out)
    _write_json(
        {
            "command": "extract",
            "manifest": str(manifest_path),
            "out": str(out),
            "augment": bool(args.augment),
            "rate": args.rate,
        },
        _run_config_path(out),
    )
    print(f"wrote {len(examples)} examples to {out}", file=sys.stderr)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    examples, header = dataset.read_features(args.features)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = model.NetConfig(
        num_classes=int(header["num_classes"]),
        f1=args.f1,
        f2=args.f2,
        hidden=args.hidden,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        variant=args.variant,
    )
    result = model.cross_validate(
        examples,
        variant=args.variant,
        folds=args.folds,
        seed=args.seed,
        epochs=args.epochs,
        config=config,
        workers=args.workers,
    )
    _write_json(result.to_json_dict(), out / "results.json")
    for f, net in enumerate(result.fold_nets):
        model.save_net(net, out / f"fold_{f:02d}.params.ftc")
    _write_json(
        {
            "command": "train",
            "features": str(args.features),
            "out": str(out),
            "variant": args.variant,
            "folds": args.folds,
            "epochs": args.epochs,
            "seed": args.seed,
            "f1": args.f1,
            "f2": args.f2,
            "hidden": args.hidden,
            "batch_size": args.batch_size,
        },
        _run_config_path(out),
    )
    print(
        f"{args.variant}: mean error {result.mean_error:.4f} over {args.folds} folds",
        file=sys.stderr,
    )
    return 0


def render_pgm(channel: np.ndarray) -> bytes:
    """Binary PGM of one channel: linear map of [min, max] onto 0..255 with
    floor rounding; a constant channel maps to mid-gray 128."""
    h, w = channel.shape
    lo = float(channel.min())
    hi = float(channel.max())
    if hi == lo:
        pixels = np.full((h, w), 128, dtype=np.uint8)
    else:
        scaled = np.floor(PGM_MAXVAL * (channel.astype(np.float64) - lo) / (hi - lo))
        pixels = np.clip(scaled, 0, PGM_MAXVAL).astype(np.uint8)
    header = f"P5\n#\n{w} {h}\n{PGM_MAXVAL}\n".encode("ascii")
    return header + pixels.tobytes()


def cmd_render(args: argparse.Namespace) -> int:
    examples, _ = dataset.read_features(args.features)
    if not 0 <= args.example < len(examples):
        raise dataset.ConfigError(f"example index {args.example} out of range 0..{len(examples) - 1}")
    example = examples[args.example]
    total = dataset.MRP_CHANNELS + dataset.SPEC_CHANNELS
    if not 0 <= args.channel < total:
        raise dataset.ConfigError(f"channel index {args.channel} out of range 0..{total - 1}")
    if args.channel < dataset.MRP_CHANNELS:
        channel = example.mrp_channels[args.channel]
    else:
        channel = example.spec_channels[args.channel - dataset.MRP_CHANNELS]
    out = Path(args.out)
    out.write_bytes(render_pgm(channel))
    _write_json(
        {
            "command": "render",
            "features": str(args.features),
            "example": args.example,
            "channel": args.channel,
            "out": str(out),
        },
        _run_config_path(out),
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mrpnet",
        description="MRP + spectrogram timbre-classification pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a tone corpus as WAV files + manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--spec", required=True, help="JSON synthesis spec")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="extract FTC features from a WAV manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output .ftc file")
    p.add_argument("--augment", action="store_true", help="13 shifted variants per source")
    p.add_argument("--rate", type=int, default=DEFAULT_SAMPLE_RATE, help="required sample rate")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="10-fold cross-validation of one network variant")
    p.add_argument("--features", required=True)
    p.add_argument("--variant", choices=model.VARIANTS, default="combined")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--f1", type=int, default=16, help="filters in the first conv block")
    p.add_argument("--f2", type=int, default=32, help="filters in the second conv block")
    p.add_argument("--hidden", type=int, default=128, help="hidden units in the head")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--workers", type=int, default=None, help="fold parallelism (default MRP_THREADS)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="dump one feature channel as a PGM image")
    p.add_argument("--features", required=True)
    p.add_argument("--example", type=int, required=True)
    p.add_argument("--channel", type=int, required=True, help="0-55 MRP, 56-63 spectrogram")
    p.add_argument("--out", required=True, help="output .pgm file")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (dataset.ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, WavError, ftc.FtcFormatError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
