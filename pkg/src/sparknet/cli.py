"""Command-line entry point: ``sparknet <subcommand> ...``.

Config precedence: built-in defaults < --config file < --set KEY=VALUE < dedicated flags.
Failures exit 1 with a single ``sparknet: error: <Kind>: <message>`` line on stderr;
usage errors exit 2.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from sparknet import __version__
from sparknet.audio import MfccExtractor, load_wav
from sparknet.checkpoint import load_checkpoint, mfcc_config_from_header
from sparknet.config import RunConfig, load_config_file, parse_assignments, resolve, write_provenance
from sparknet.data import (
    DEFAULT_NOISE_SEEDS,
    DEFAULT_SNRS,
    LABELS,
    build_manifest,
    make_noisy_testset,
    read_manifest,
    read_noisy_manifest,
    write_manifest,
    write_noisy_manifest,
)
from sparknet.errors import SparkNetError
from sparknet.evaluate import dump_gates, evaluate, evaluate_snr_sweep
from sparknet.features import FeaturePipeline
from sparknet.gates import HARD, SOFT
from sparknet.model import PRESETS, SparkNet, count_macs, count_parameters
from sparknet.nn import log_softmax
from sparknet.train import train


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config field, e.g. train.epochs=30")
    p.add_argument("--preset", choices=sorted(PRESETS), help="channel-count preset")
    p.add_argument("--channels", type=int, help="model channel count C")
    p.add_argument("--seed", type=int, help="training / sampling seed")


def _resolve_config(args) -> RunConfig:
    overrides = load_config_file(args.config) if getattr(args, "config", None) else {}
    overrides.update(parse_assignments(getattr(args, "set", [])))
    if getattr(args, "preset", None):
        overrides["model.channels"] = str(PRESETS[args.preset])
    if getattr(args, "channels", None) is not None:
        overrides["model.channels"] = str(args.channels)
    if getattr(args, "seed", None) is not None:
        overrides["train.seed"] = str(args.seed)
    for flag, key in (("epochs", "train.epochs"), ("batch_size", "train.batch_size")):
        if getattr(args, flag, None) is not None:
            overrides[key] = str(getattr(args, flag))
    if getattr(args, "no_sparsity", False):
        overrides["model.sparsity_enabled"] = "false"
    if getattr(args, "background_prob", None) is not None:
        overrides["augment.background_noise_prob"] = str(args.background_prob)
    cfg = resolve(overrides)
    print(f"# sparknet {__version__} resolved config (seed {cfg.train.seed})\n{cfg.to_text().rstrip()}", file=sys.stderr)
    return cfg


def _pipeline(mfcc_config, args, augment=None) -> FeaturePipeline:
    return FeaturePipeline(mfcc_config, augment, jobs=args.jobs)


def _load(args):
    model, header = load_checkpoint(args.checkpoint)
    return model, header, mfcc_config_from_header(header)


def cmd_prepare_data(args) -> None:
    manifest = build_manifest(args.data_root, args.version, seed=args.seed or 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "manifest.tsv", manifest.entries)
    counts = {s: len(manifest.split(s)) for s in ("train", "val", "test")}
    write_provenance(out / "manifest.provenance.json", {"data_root": str(args.data_root), "version": args.version,
                     "seed": args.seed or 0}, raw_counts=manifest.raw_counts, split_counts=counts)
    print(f"raw_utterances={manifest.num_raw_utterances} words={len(manifest.raw_counts)} "
          f"train={counts['train']} val={counts['val']} test={counts['test']}")


def cmd_make_synthetic(args) -> None:
    from sparknet.synthetic import generate_corpus, write_noise_corpus

    root = generate_corpus(args.out, per_word=args.per_word, seed=args.seed or 0)
    if args.noise_out:
        write_noise_corpus(args.noise_out, seed=(args.seed or 0) + 100)
    print(f"wrote synthetic corpus to {root}")


def cmd_train(args) -> None:
    cfg = _resolve_config(args)
    entries = read_manifest(args.manifest)
    train_entries = [e for e in entries if e.split == "train"]
    val_entries = [e for e in entries if e.split == "val"]
    if args.limit:
        train_entries = train_entries[: args.limit]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.txt").write_text(f"# sparknet {__version__}\n" + cfg.to_text(), encoding="utf-8")
    model = SparkNet(cfg.model, init_seed=cfg.train.seed)
    result = train(model, train_entries, _pipeline(cfg.mfcc, args, cfg.augment), cfg.train, val_entries, out,
                   extra_meta={"manifest": str(args.manifest)})
    last = result.history[-1]
    print(f"final epoch={last.epoch} train_acc={last.train_acc:.4f} val_acc={last.val_acc:.4f} "
          f"best_val_acc={result.best_val_acc:.4f} best_epoch={result.best_epoch}")


def cmd_eval(args) -> None:
    model, header, mfcc = _load(args)
    entries = [e for e in read_manifest(args.manifest) if e.split == args.split]
    report = evaluate(model, entries, _pipeline(mfcc, args), args.batch_size, args.gate_mode)
    if args.out:
        Path(args.out + ".csv").write_text(report.to_csv(), encoding="utf-8")
        Path(args.out + ".txt").write_text(report.summary() + "\n" + report.macs.format() + "\n", encoding="utf-8")
        write_provenance(args.out + ".provenance.json", header, checkpoint=str(args.checkpoint), split=args.split)
    print(report.summary())


def cmd_make_noisy(args) -> None:
    entries = [e for e in read_manifest(args.manifest) if e.split == args.split]
    items = make_noisy_testset(entries, args.noise_dir, _floats(args.snrs), _ints(args.seeds))
    write_noisy_manifest(args.out, items)
    write_provenance(args.out + ".provenance.json", {"manifest": str(args.manifest), "noise_dir": str(args.noise_dir),
                     "snrs": _floats(args.snrs), "seeds": _ints(args.seeds)})
    print(f"wrote {len(items)} noisy entries to {args.out}")


def cmd_eval_noisy(args) -> None:
    model, header, mfcc = _load(args)
    items = read_noisy_manifest(args.noisy_manifest)
    clean = [e for e in read_manifest(args.manifest) if e.split == "test"] if args.manifest else None
    report = evaluate_snr_sweep(model, items, _pipeline(mfcc, args), _floats(args.snrs), _ints(args.seeds),
                                clean, args.batch_size)
    if args.out:
        Path(args.out + ".csv").write_text(report.to_csv(), encoding="utf-8")
        Path(args.out + ".txt").write_text(report.summary() + "\n", encoding="utf-8")
        write_provenance(args.out + ".provenance.json", header, checkpoint=str(args.checkpoint))
    print(report.summary())


def cmd_infer(args) -> None:
    model, _, mfcc = _load(args)
    extractor = MfccExtractor(mfcc)
    for path in args.wavs:
        feats = extractor(load_wav(path).samples)
        logits = model.forward(feats, train=False, gate_mode=args.gate_mode).logits[0]
        probs = np.exp(log_softmax(logits))
        k = int(np.argmax(logits))
        print(f"{path}\t{LABELS[k]}\t{probs[k]:.4f}")


def cmd_macs(args) -> None:
    cfg = _resolve_config(args)
    frames = args.frames if args.frames is not None else cfg.mfcc.num_frames()
    report = count_macs(cfg.model, frames)
    print(f"params={count_parameters(cfg.model):,}")
    print(f"macs_strict={report.total:,}")
    print(f"macs_extended={report.extended_total:,}")
    print(report.format())


def cmd_dump_gates(args) -> None:
    model, header, mfcc = _load(args)
    written = dump_gates(model, args.wavs, mfcc, args.out, args.mode)
    write_provenance(Path(args.out) / "provenance.json", header, checkpoint=str(args.checkpoint), mode=args.mode)
    print(f"wrote {len(written)} files to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparknet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"sparknet {__version__}")
    parser.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="feature-extraction worker threads")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="scan a Speech Commands tree into a 12-class manifest")
    p.add_argument("--data-root", required=True)
    p.add_argument("--version", dest="version", choices=("v1", "v2"), default="v2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("make-synthetic", help="write a synthetic corpus in Speech Commands layout")
    p.add_argument("--out", required=True)
    p.add_argument("--per-word", type=int, default=60)
    p.add_argument("--noise-out", help="also write a separate noise corpus here")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser("train", help="train a model from a manifest")
    _add_config_args(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="run directory for checkpoints and metrics.csv")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--no-sparsity", action="store_true", help="drop the sparsity loss and gate noise")
    p.add_argument("--background-prob", type=float, help="background-noise augmentation probability")
    p.add_argument("--limit", type=int, help="use only the first N training entries")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="top-1 accuracy on a manifest split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--gate-mode", choices=(SOFT, HARD), default=SOFT)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--out", help="report path prefix (.csv/.txt)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("make-noisy-test", help="write the noisy test reproducibility manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--noise-dir", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--snrs", default=",".join(f"{s:g}" for s in DEFAULT_SNRS))
    p.add_argument("--seeds", default=",".join(str(s) for s in DEFAULT_NOISE_SEEDS))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_noisy)

    p = sub.add_parser("eval-noisy", help="SNR sweep over a noisy manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--noisy-manifest", required=True)
    p.add_argument("--manifest", help="clean manifest for the clean column")
    p.add_argument("--snrs", default=",".join(f"{s:g}" for s in DEFAULT_SNRS))
    p.add_argument("--seeds", default=",".join(str(s) for s in DEFAULT_NOISE_SEEDS))
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--out", help="report path prefix (.csv/.txt)")
    p.set_defaults(func=cmd_eval_noisy)

    p = sub.add_parser("infer", help="print top-1 label and probability per WAV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--gate-mode", choices=(SOFT, HARD), default=SOFT)
    p.add_argument("wavs", nargs="+")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("macs", help="parameter and MAC counts")
    _add_config_args(p)
    p.add_argument("--frames", type=int, help="frame count T (default: from the frontend config)")
    p.set_defaults(func=cmd_macs)

    p = sub.add_parser("dump-gates", help="write gate masks and MFCCs as CSV and PGM")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=(SOFT, HARD), default=SOFT)
    p.add_argument("--out", required=True)
    p.add_argument("wavs", nargs="+")
    p.set_defaults(func=cmd_dump_gates)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except (SparkNetError, OSError, ValueError) as exc:
        message = " ".join(str(exc).split())
        print(f"sparknet: error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
