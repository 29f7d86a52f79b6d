"""Accuracy, SNR sweeps and gate-mask dumps."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from sparknet.audio import MfccConfig, MfccExtractor, load_wav
from sparknet.data import LABELS, ManifestEntry, NoisyEntry
from sparknet.errors import ConfigError, IngestionError
from sparknet.features import FeaturePipeline
from sparknet.gates import HARD, SOFT
from sparknet.model import MacReport, SparkNet, count_macs


@dataclass
class EvalReport:
    confusion: np.ndarray
    gate_open_frac: float
    macs: MacReport | None = None

    @property
    def n_samples(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / max(1, self.n_samples))

    def per_class_counts(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    def to_csv(self) -> str:
        lines = ["metric,value", f"accuracy,{self.accuracy!r}", f"n_samples,{self.n_samples}",
                 f"gate_open_frac,{self.gate_open_frac!r}"]
        if self.macs is not None:
            lines += [f"macs_strict,{self.macs.total}", f"macs_extended,{self.macs.extended_total}"]
        lines.append("")
        lines.append("true\\pred," + ",".join(LABELS))
        for label, row in zip(LABELS, self.confusion):
            lines.append(label + "," + ",".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        text = f"top-1 accuracy {100 * self.accuracy:.2f}% on {self.n_samples} samples; gate openness {self.gate_open_frac:.4f}"
        if self.macs is not None:
            text += f"; MACs {self.macs.total:,} strict / {self.macs.extended_total:,} extended"
        return text


def _batches(items: list, size: int):
    for i in range(0, len(items), size):
        yield items[i : i + size]


def _accumulate(model, feats, labels, confusion, gate_mode) -> tuple[float, int]:
    out = model.forward(feats, train=False, gate_mode=gate_mode)
    pred = np.argmax(out.logits, axis=-1)  # first maximum wins ties
    np.add.at(confusion, (labels, pred), 1)
    return float((out.gates.z > 0).sum()), out.gates.z.size


def evaluate(
    model: SparkNet,
    entries: list[ManifestEntry],
    pipeline: FeaturePipeline,
    batch_size: int = 128,
    gate_mode: str = SOFT,
) -> EvalReport:
    if not entries:
        raise IngestionError("cannot evaluate an empty split")
    n_cls = model.config.num_classes
    confusion = np.zeros((n_cls, n_cls), dtype=np.int64)
    opened = total = 0
    for chunk in _batches(entries, batch_size):
        feats, labels = pipeline.clean_batch(chunk)
        o, t = _accumulate(model, feats, labels, confusion, gate_mode)
        opened += o
        total += t
    frames = pipeline.mfcc_config.num_frames()
    return EvalReport(confusion, opened / total, count_macs(model.config, frames))


def evaluate_noisy(model: SparkNet, items: list[NoisyEntry], pipeline: FeaturePipeline, batch_size: int = 128) -> EvalReport:
    n_cls = model.config.num_classes
    confusion = np.zeros((n_cls, n_cls), dtype=np.int64)
    opened = total = 0
    for chunk in _batches(items, batch_size):
        feats, labels = pipeline.noisy_batch(chunk)
        o, t = _accumulate(model, feats, labels, confusion, SOFT)
        opened += o
        total += t
    return EvalReport(confusion, opened / total)


@dataclass
class SnrSweepReport:
    snrs: list[float]
    seeds: list[int]
    accuracies: dict[float, list[float]] = field(default_factory=dict)
    clean_accuracy: float | None = None

    def mean(self, snr: float) -> float:
        return float(np.mean(self.accuracies[snr]))

    def std(self, snr: float) -> float:
        vals = self.accuracies[snr]
        return float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0

    def to_csv(self) -> str:
        lines = ["snr_db,mean_accuracy,std_accuracy,n_seeds"]
        for snr in self.snrs:
            lines.append(f"{snr!r},{self.mean(snr)!r},{self.std(snr)!r},{len(self.accuracies[snr])}")
        if self.clean_accuracy is not None:
            lines.append(f"clean,{self.clean_accuracy!r},,")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        cells = [f"{snr:g} dB: {100 * self.mean(snr):.2f} +- {100 * self.std(snr):.2f}" for snr in self.snrs]
        if self.clean_accuracy is not None:
            cells.append(f"clean: {100 * self.clean_accuracy:.2f}")
        return " | ".join(cells)


def evaluate_snr_sweep(
    model: SparkNet,
    items: list[NoisyEntry],
    pipeline: FeaturePipeline,
    snrs=None,
    seeds=None,
    clean_entries: list[ManifestEntry] | None = None,
    batch_size: int = 128,
) -> SnrSweepReport:
    """Mean and sample std of accuracy over seeds for every SNR.

    ``snrs``/``seeds`` default to whatever the noisy manifest contains; when
    given, every (seed, SNR) pair must be present.
    """
    groups: dict[tuple[int, float], list[NoisyEntry]] = defaultdict(list)
    for it in items:
        groups[(it.seed, it.snr_db)].append(it)
    snrs = sorted({s for _, s in groups}) if snrs is None else [float(s) for s in snrs]
    seeds = sorted({s for s, _ in groups}) if seeds is None else [int(s) for s in seeds]
    missing = [(s, snr) for s in seeds for snr in snrs if (s, snr) not in groups]
    if missing:
        raise IngestionError("noisy manifest lacks variants (seed, snr): " + ", ".join(f"({s}, {snr:g})" for s, snr in missing))
    report = SnrSweepReport(snrs, seeds)
    for snr in snrs:
        report.accuracies[snr] = [evaluate_noisy(model, groups[(s, snr)], pipeline, batch_size).accuracy for s in seeds]
    if clean_entries:
        report.clean_accuracy = evaluate(model, clean_entries, pipeline, batch_size).accuracy
    return report


def check_frontend(header: dict, mfcc_config: MfccConfig) -> None:
    if header.get("mfcc_config") != mfcc_config.to_dict():
        raise ConfigError("frontend config differs from the one the checkpoint was trained with")


def to_gray(values: np.ndarray, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    """Min-max scale to uint8 with round-half-up (or use the given range)."""
    values = np.asarray(values, dtype=np.float64)
    lo = values.min() if lo is None else lo
    hi = values.max() if hi is None else hi
    scaled = np.zeros_like(values) if hi <= lo else (values - lo) / (hi - lo)
    return np.floor(255.0 * np.clip(scaled, 0.0, 1.0) + 0.5).astype(np.uint8)


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Binary P5 graymap; row 0 of ``image`` is the top row."""
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + image.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, dims, maxval, rest = raw.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise ValueError(f"{path}: not an 8-bit P5 graymap")
    w, h = (int(v) for v in dims.split())
    return np.frombuffer(rest[: w * h], dtype=np.uint8).reshape(h, w)


def dump_gates(
    model: SparkNet,
    wav_paths: list[str | Path],
    mfcc_config: MfccConfig,
    out_dir: str | Path,
    mode: str = SOFT,
) -> list[Path]:
    """Write z (F x T) and the MFCC input as CSV + PGM for each WAV.

    Gate images map z=0 to black and z=1 to white; low frequencies are the top
    rows. MFCC images are min-max scaled per file.
    """
    if mode not in (SOFT, HARD):
        raise ValueError(f"mode must be {SOFT!r} or {HARD!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    extractor = MfccExtractor(mfcc_config)
    written = []
    for path in wav_paths:
        stem = Path(path).stem
        feats = extractor(load_wav(path).samples)
        z = model.forward(feats, train=False, gate_mode=mode).z[0]
        for name, matrix, image in (
            (f"{stem}_gates_{mode}", z, to_gray(z, 0.0, 1.0)),
            (f"{stem}_mfcc", feats, to_gray(feats)),
        ):
            np.savetxt(out_dir / f"{name}.csv", matrix, delimiter=",", fmt="%.9g")
            write_pgm(out_dir / f"{name}.pgm", image)
            written += [out_dir / f"{name}.csv", out_dir / f"{name}.pgm"]
    return written
