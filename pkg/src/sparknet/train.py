"""Training: warmup-hold-decay schedule, SGD with momentum, and the epoch loop.

The objective per batch is ``sparsity_loss(mu) + lambda_ce * mean_CE``; with
the no-sparsity variant the first term and the gate noise are dropped.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from sparknet import __version__
from sparknet.checkpoint import save_checkpoint
from sparknet.data import LABELS, ManifestEntry
from sparknet.errors import ConfigError, DivergenceError
from sparknet.evaluate import evaluate
from sparknet.features import FeaturePipeline
from sparknet.gates import sparsity_loss
from sparknet.model import SparkNet
from sparknet.nn import Parameter, softmax_cross_entropy

logger = logging.getLogger(__name__)

METRICS_HEADER = "epoch,step,lr,loss_total,loss_sparse,loss_ce,train_acc,val_acc,gate_open_frac"
_SHUFFLE_STREAM = 0
_GATE_STREAM = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    lr_max: float = 1e-2
    lr_min: float = 1e-6
    warmup_ratio: float = 0.05
    hold_ratio: float = 0.40
    poly_power: float = 2.0
    momentum: float = 0.9
    weight_decay: float = 1e-3
    # "all" or "weights" (skip BN affine terms and biases)
    weight_decay_scope: str = "all"
    decoupled_weight_decay: bool = False
    lambda_ce: float = 1e2
    seed: int = 0

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigError("epochs and batch_size must be positive")
        if not (0 <= self.warmup_ratio and 0 <= self.hold_ratio and self.warmup_ratio + self.hold_ratio < 1):
            raise ConfigError("need warmup_ratio, hold_ratio >= 0 and warmup_ratio + hold_ratio < 1")
        if not (self.lr_max > 0 and self.lr_min > 0):
            raise ConfigError("learning rates must be positive")
        if self.weight_decay_scope not in ("all", "weights"):
            raise ConfigError("weight_decay_scope must be 'all' or 'weights'")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def lr_at(step: float, total_steps: int, config: TrainConfig) -> float:
    """Linear warmup lr_min -> lr_max, hold, then polynomial decay to lr_min."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    step = min(max(step, 0), total_steps)
    warm = config.warmup_ratio * total_steps
    hold_end = warm + config.hold_ratio * total_steps
    span = config.lr_max - config.lr_min
    if step < warm:
        return config.lr_min + span * step / warm
    if step <= hold_end:
        return config.lr_max
    tau = (step - hold_end) / (total_steps - hold_end)
    return span * (1.0 - tau) ** config.poly_power + config.lr_min


def _decays(name: str, config: TrainConfig) -> bool:
    if config.weight_decay_scope == "all":
        return True
    return not (name.endswith(".gamma") or name.endswith(".beta") or name.endswith(".bias"))


def sgd_step(params: dict[str, Parameter], config: TrainConfig, lr: float) -> None:
    """In-place SGD with momentum; classical L2 unless ``decoupled_weight_decay``."""
    for name, p in params.items():
        if not np.all(np.isfinite(p.grad)):
            raise DivergenceError(f"non-finite gradient in {name}; aborting step")
    for name, p in params.items():
        value = p.value.astype(np.float64)
        g = p.grad.astype(np.float64)
        wd = config.weight_decay if _decays(name, config) else 0.0
        if not config.decoupled_weight_decay:
            g = g + wd * value
        buf = config.momentum * p.momentum_buf.astype(np.float64) + g
        p.momentum_buf[...] = buf
        if config.decoupled_weight_decay:
            value = value - lr * wd * value
        p.value[...] = value - lr * buf


@dataclass
class StepResult:
    loss_total: float
    loss_sparse: float
    loss_ce: float
    correct: int
    n: int


def train_step(
    model: SparkNet,
    feats: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    lr: float,
    rng: np.random.Generator | None,
) -> StepResult:
    out = model.forward(feats, train=True, rng=rng)
    ce, dlogits = softmax_cross_entropy(out.logits, labels)
    if model.config.sparsity_enabled:
        ls, dmu = sparsity_loss(out.mu, model.config.gate)
    else:
        ls, dmu = 0.0, None
    model.zero_grad()
    model.backward(config.lambda_ce * dlogits, dmu)
    sgd_step(model.parameters(), config, lr)
    correct = int((np.argmax(out.logits, axis=-1) == labels).sum())
    return StepResult(ls + config.lambda_ce * ce, ls, ce, correct, len(labels))


@dataclass
class EpochMetrics:
    epoch: int
    step: int
    lr: float
    loss_total: float
    loss_sparse: float
    loss_ce: float
    train_acc: float
    val_acc: float = float("nan")
    gate_open_frac: float = float("nan")

    def csv_row(self) -> str:
        vals = [self.epoch, self.step, self.lr, self.loss_total, self.loss_sparse, self.loss_ce,
                self.train_acc, self.val_acc, self.gate_open_frac]
        return ",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in vals)


def steps_per_epoch(n_train: int, batch_size: int) -> int:
    return math.ceil(n_train / batch_size)


def train_epoch(
    model: SparkNet,
    entries: list[ManifestEntry],
    pipeline: FeaturePipeline,
    config: TrainConfig,
    epoch: int,
    total_steps: int,
) -> EpochMetrics:
    if not entries:
        raise ConfigError("training split is empty")
    order = np.random.default_rng([config.seed, _SHUFFLE_STREAM, epoch]).permutation(len(entries))
    per_epoch = steps_per_epoch(len(entries), config.batch_size)
    sums = np.zeros(3)
    correct = seen = 0
    lr = config.lr_min
    for b in range(per_epoch):
        step = epoch * per_epoch + b
        lr = lr_at(step, total_steps, config)
        idx = order[b * config.batch_size : (b + 1) * config.batch_size]
        feats, labels = pipeline.train_batch(entries, idx, config.seed, epoch)
        rng = np.random.default_rng([config.seed, _GATE_STREAM, epoch, b])
        res = train_step(model, feats, labels, config, lr, rng)
        sums += np.array([res.loss_total, res.loss_sparse, res.loss_ce]) * res.n
        correct += res.correct
        seen += res.n
    means = sums / seen
    return EpochMetrics(epoch, (epoch + 1) * per_epoch, lr, *means.tolist(), train_acc=correct / seen)


@dataclass
class TrainResult:
    history: list[EpochMetrics] = field(default_factory=list)
    best_val_acc: float = float("nan")
    best_epoch: int = -1


def train(
    model: SparkNet,
    train_entries: list[ManifestEntry],
    pipeline: FeaturePipeline,
    config: TrainConfig,
    val_entries: list[ManifestEntry] | None = None,
    out_dir: str | Path | None = None,
    extra_meta: dict | None = None,
) -> TrainResult:
    """Full run. With ``out_dir``, writes metrics.csv, final.ckpt and best.ckpt."""
    pipeline.set_background(train_entries)
    total = config.epochs * steps_per_epoch(len(train_entries), config.batch_size)
    result = TrainResult()
    out_dir = Path(out_dir) if out_dir is not None else None
    meta = {"train_config": config.to_dict(), "augment_config": pipeline.augment_config.to_dict(),
            "sparknet_version": __version__, **(extra_meta or {})}
    metrics_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out_dir / "metrics.csv", "w", encoding="utf-8", newline="\n")
        metrics_fh.write(METRICS_HEADER + "\n")
    try:
        for epoch in range(config.epochs):
            m = train_epoch(model, train_entries, pipeline, config, epoch, total)
            if val_entries:
                report = evaluate(model, val_entries, pipeline, config.batch_size)
                m.val_acc, m.gate_open_frac = report.accuracy, report.gate_open_frac
                if not m.val_acc <= result.best_val_acc:
                    result.best_val_acc, result.best_epoch = m.val_acc, epoch
                    if out_dir is not None:
                        _save(out_dir / "best.ckpt", model, pipeline, {**meta, "epoch": epoch, "val_acc": m.val_acc})
            result.history.append(m)
            logger.info(
                "epoch %d lr %.3g loss %.4f (sparse %.4f ce %.4f) train %.4f val %.4f open %.4f",
                epoch, m.lr, m.loss_total, m.loss_sparse, m.loss_ce, m.train_acc, m.val_acc, m.gate_open_frac,
            )
            if metrics_fh is not None:
                metrics_fh.write(m.csv_row() + "\n")
                metrics_fh.flush()
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    if out_dir is not None:
        _save(out_dir / "final.ckpt", model, pipeline, {**meta, "epoch": config.epochs - 1})
    return result


def _save(path: Path, model: SparkNet, pipeline: FeaturePipeline, meta: dict) -> None:
    save_checkpoint(path, model, pipeline.mfcc_config, LABELS, meta)
