"""SparkNet: four time-channel separable blocks, a tanh head producing gate
logits, stochastic gates, time pooling and a linear classifier.

Layer plan for input (B, F, T):

    block1  dw(F, K=11) -> pw(F->C) -> BN -> ReLU
    block2  dw(C, K=15) -> pw(C->C) -> BN  (+ pw(C->C) -> BN skip) -> ReLU
    block3  ... K=19 ...
    block4  ... K=29 ...
    head    pw(C->F, bias) -> BN -> tanh          = mu
    gates   clamp(0.5 + mu + eps, 0, 1)           = z
    pool    mean over time -> Linear(F -> 12)
"""

from __future__ import annotations

import dataclasses
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from sparknet import nn
from sparknet.errors import ConfigError, ShapeError
from sparknet.gates import HARD, SOFT, GateConfig, GateTensor, gate_backward, harden, sample_gates

KERNELS = (11, 15, 19, 29)
PRESETS = {f"sparknet-{c}": c for c in (4, 8, 16, 32)}


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 16
    n_features: int = 32
    num_classes: int = 12
    kernels: tuple[int, ...] = KERNELS
    sigma: float = 0.5
    sparsity_enabled: bool = True
    # False additionally removes the clamp, giving z = 0.5 + mu
    clip_gates: bool = True
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "kernels", tuple(int(k) for k in self.kernels))
        if self.channels <= 0 or self.n_features <= 0 or self.num_classes <= 0:
            raise ConfigError("channels, n_features and num_classes must be positive")
        if len(self.kernels) != 4 or any(k % 2 == 0 for k in self.kernels):
            raise ConfigError(f"need four odd kernel widths, got {self.kernels}")

    @property
    def gate(self) -> GateConfig:
        # the ablation without the sparsity term also drops the gate noise
        return GateConfig(sigma=self.sigma, training_noise=self.sparsity_enabled, clip=self.clip_gates)

    @classmethod
    def preset(cls, name: str, **overrides) -> ModelConfig:
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(channels=PRESETS[name], **overrides)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["kernels"] = list(self.kernels)
        return d


def _kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class TCSBlock:
    """Depthwise + pointwise conv, BN, optional pointwise+BN skip, ReLU."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, residual: bool, rng, dtype, momentum, eps):
        self.dw = nn.DepthwiseConv1d(in_ch, kernel, _kaiming_uniform(rng, (in_ch, kernel), kernel, dtype))
        self.pw = nn.PointwiseConv1d(in_ch, out_ch, _kaiming_uniform(rng, (out_ch, in_ch), in_ch, dtype))
        self.bn = nn.BatchNorm1d(out_ch, momentum, eps, dtype)
        self.residual = residual
        if residual:
            self.res_pw = nn.PointwiseConv1d(in_ch, out_ch, _kaiming_uniform(rng, (out_ch, in_ch), in_ch, dtype))
            self.res_bn = nn.BatchNorm1d(out_ch, momentum, eps, dtype)
        self.relu = nn.ReLU()

    def modules(self) -> dict:
        out = {"dw": self.dw, "pw": self.pw, "bn": self.bn}
        if self.residual:
            out.update(res_pw=self.res_pw, res_bn=self.res_bn)
        return out

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        y = self.bn.forward(self.pw.forward(self.dw.forward(x)), train)
        if self.residual:
            y = y + self.res_bn.forward(self.res_pw.forward(x), train)
        return self.relu.forward(y)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dy = self.relu.backward(dy)
        dx = self.dw.backward(self.pw.backward(self.bn.backward(dy)))
        if self.residual:
            dx = dx + self.res_pw.backward(self.res_bn.backward(dy))
        return dx


@dataclass
class ForwardOutput:
    logits: np.ndarray
    mu: np.ndarray
    gates: GateTensor

    @property
    def z(self) -> np.ndarray:
        return self.gates.z


class SparkNet:
    def __init__(self, config: ModelConfig | None = None, init_seed: int = 0, dtype=np.float32):
        self.config = config = config or ModelConfig()
        self.init_seed = init_seed
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(init_seed)
        c, f = config.channels, config.n_features
        m, eps = config.bn_momentum, config.bn_eps
        self.blocks = [
            TCSBlock(f if i == 0 else c, c, k, i > 0, rng, dtype, m, eps) for i, k in enumerate(config.kernels)
        ]
        self.head_conv = nn.PointwiseConv1d(c, f, _kaiming_uniform(rng, (f, c), c, dtype), np.zeros(f, dtype))
        self.head_bn = nn.BatchNorm1d(f, m, eps, dtype)
        self.head_act = nn.Tanh()
        self.classifier = nn.Linear(
            f,
            config.num_classes,
            _kaiming_uniform(rng, (config.num_classes, f), f, dtype),
            np.zeros(config.num_classes, dtype),
        )
        self._gates = None
        self._time = None

    def modules(self) -> OrderedDict:
        out = OrderedDict()
        for i, block in enumerate(self.blocks, start=1):
            for name, module in block.modules().items():
                out[f"block{i}.{name}"] = module
        out["head.conv"] = self.head_conv
        out["head.bn"] = self.head_bn
        out["classifier"] = self.classifier
        return out

    def parameters(self) -> OrderedDict[str, nn.Parameter]:
        return OrderedDict(
            (f"{prefix}.{name}", p) for prefix, module in self.modules().items() for name, p in module.params().items()
        )

    def buffers(self) -> OrderedDict[str, np.ndarray]:
        out = OrderedDict()
        for prefix, module in self.modules().items():
            if isinstance(module, nn.BatchNorm1d):
                for name, buf in module.buffers().items():
                    out[f"{prefix}.{name}"] = buf
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def forward(
        self,
        features: np.ndarray,
        train: bool = False,
        rng: np.random.Generator | None = None,
        noise: np.ndarray | None = None,
        gate_mode: str = SOFT,
    ) -> ForwardOutput:
        """Run the network on features (B, F, T) (or a single (F, T) matrix).

        Gate noise is drawn only in train mode with the sparsity variant on;
        ``noise`` injects a fixed eps instead of sampling.
        """
        x = np.asarray(features, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1] != self.config.n_features:
            raise ShapeError(f"expected features (batch, {self.config.n_features}, time), got {x.shape}")
        for block in self.blocks:
            x = block.forward(x, train)
        mu = self.head_act.forward(self.head_bn.forward(self.head_conv.forward(x), train))
        gate_cfg = self.config.gate
        if not train:
            gate_cfg = dataclasses.replace(gate_cfg, training_noise=False)
            noise = None
        gates = sample_gates(mu, gate_cfg, rng=rng, noise=noise)
        z = gates.z
        if gate_mode == HARD:
            z = harden(z)
        elif gate_mode != SOFT:
            raise ValueError(f"gate_mode must be {SOFT!r} or {HARD!r}")
        self._gates = gates
        self._time = mu.shape[-1]
        logits = self.classifier.forward(nn.avg_pool_time(z))
        return ForwardOutput(logits, mu, GateTensor(z, gates.pre_clip, gates.clipped))

    def backward(self, dlogits: np.ndarray, dmu: np.ndarray | None = None) -> np.ndarray:
        """Accumulate parameter gradients; ``dmu`` carries any direct loss term on mu.

        Returns the gradient w.r.t. the input features.
        """
        dz = nn.avg_pool_time_backward(self.classifier.backward(dlogits), self._time)
        dmu_total = gate_backward(dz, self._gates)
        if dmu is not None:
            dmu_total = dmu_total + dmu
        dx = self.head_conv.backward(self.head_bn.backward(self.head_act.backward(dmu_total)))
        for block in reversed(self.blocks):
            dx = block.backward(dx)
        self._gates = None
        return dx

    def predict(self, features: np.ndarray, gate_mode: str = SOFT) -> np.ndarray:
        out = self.forward(features, train=False, gate_mode=gate_mode)
        return np.argmax(out.logits, axis=-1)


def count_parameters(config: ModelConfig) -> int:
    """Closed-form trainable scalar count for a config."""
    c, f, n = config.channels, config.n_features, config.num_classes
    total = 0
    for i, k in enumerate(config.kernels):
        cin = f if i == 0 else c
        total += cin * k + cin * c + 2 * c
        if i > 0:
            total += cin * c + 2 * c
    total += c * f + f + 2 * f
    total += f * n + n
    return total


@dataclass
class MacReport:
    """Multiply-accumulate counts per layer under two conventions.

    ``layers`` counts multiplies in conv/linear layers only (strict).
    ``extra_ops`` adds BN (2 per element), residual additions and the time
    pooling, which op counters that hook every module tend to include.
    """

    frames: int
    layers: list[tuple[str, int]] = field(default_factory=list)
    extra_ops: list[tuple[str, int]] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(n for _, n in self.layers)

    @property
    def conv_total(self) -> int:
        return sum(n for name, n in self.layers if name != "classifier")

    @property
    def extended_total(self) -> int:
        return self.total + sum(n for _, n in self.extra_ops)

    def format(self) -> str:
        lines = [f"frames T={self.frames}", "strict MACs (conv + linear multiplies):"]
        lines += [f"  {name:<16} {n:>10,}" for name, n in self.layers]
        lines.append(f"  {'total':<16} {self.total:>10,}")
        lines.append("extended count (+ BN, residual adds, pooling):")
        lines += [f"  {name:<16} {n:>10,}" for name, n in self.extra_ops]
        lines.append(f"  {'total':<16} {self.extended_total:>10,}")
        return "\n".join(lines)


def count_macs(config: ModelConfig, frames: int) -> MacReport:
    if frames <= 0:
        raise ValueError("frames must be positive")
    c, f, n, t = config.channels, config.n_features, config.num_classes, frames
    report = MacReport(frames)
    for i, k in enumerate(config.kernels, start=1):
        cin = f if i == 1 else c
        report.layers.append((f"block{i}.dw", cin * k * t))
        report.layers.append((f"block{i}.pw", cin * c * t))
        report.extra_ops.append((f"block{i}.bn", 2 * c * t))
        if i > 1:
            report.layers.append((f"block{i}.res_pw", cin * c * t))
            report.extra_ops.append((f"block{i}.res_bn", 2 * c * t))
            report.extra_ops.append((f"block{i}.add", c * t))
    report.layers.append(("head.conv", c * f * t))
    report.extra_ops.append(("head.bn", 2 * f * t))
    report.extra_ops.append(("avgpool", f * t))
    report.layers.append(("classifier", f * n))
    return report


class _Counter:
    def __init__(self):
        self.count = 0


def _ref_depthwise(x, w, counter):
    c_n, t_n = len(x), len(x[0])
    k_n = len(w[0])
    p = (k_n - 1) // 2
    out = []
    for c in range(c_n):
        row = [0.0] * p + x[c] + [0.0] * p
        wc = w[c]
        out_row = []
        for t in range(t_n):
            acc = 0.0
            for k in range(k_n):
                acc += wc[k] * row[t + k]
                counter.count += 1
            out_row.append(acc)
        out.append(out_row)
    return out


def _ref_pointwise(x, w, b, counter):
    t_n = len(x[0])
    out = []
    for o, wo in enumerate(w):
        out_row = []
        for t in range(t_n):
            acc = 0.0 if b is None else b[o]
            for c, wc in enumerate(wo):
                acc += wc * x[c][t]
                counter.count += 1
            out_row.append(acc)
        out.append(out_row)
    return out


def _ref_bn(x, bn):
    mean, var = bn.running_mean.tolist(), bn.running_var.tolist()
    g, b = bn.gamma.value.tolist(), bn.beta.value.tolist()
    return [
        [g[c] * (v - mean[c]) / float(np.sqrt(var[c] + bn.eps)) + b[c] for v in row] for c, row in enumerate(x)
    ]


def instrumented_multiply_count(features: np.ndarray, model: SparkNet) -> tuple[int, np.ndarray]:
    """Scalar-loop eval forward that counts every conv/linear multiply.

    Returns (multiply count, logits). Independent of the vectorized kernels, so
    it doubles as a forward-pass oracle. Expects one (F, T) matrix.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise ShapeError("instrumented_multiply_count takes a single (F, T) matrix")
    counter = _Counter()
    x = feats.tolist()
    for block in model.blocks:
        y = _ref_depthwise(x, block.dw.weight.value.tolist(), counter)
        y = _ref_pointwise(y, block.pw.weight.value.tolist(), None, counter)
        y = _ref_bn(y, block.bn)
        if block.residual:
            s = _ref_pointwise(x, block.res_pw.weight.value.tolist(), None, counter)
            s = _ref_bn(s, block.res_bn)
            y = [[a + b for a, b in zip(ra, rb)] for ra, rb in zip(y, s)]
        x = [[v if v > 0 else 0.0 for v in row] for row in y]
    head = model.head_conv
    mu = _ref_bn(_ref_pointwise(x, head.weight.value.tolist(), head.bias.value.tolist(), counter), model.head_bn)
    pooled = [sum(min(1.0, max(0.0, 0.5 + float(np.tanh(v)))) for v in row) / len(row) for row in mu]
    w, b = model.classifier.weight.value.tolist(), model.classifier.bias.value.tolist()
    logits = []
    for o in range(len(w)):
        acc = b[o]
        for j, v in enumerate(pooled):
            acc += w[o][j] * v
            counter.count += 1
        logits.append(acc)
    return counter.count, np.array(logits)
