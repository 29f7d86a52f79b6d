"""Layer kernels with hand-written backward passes.

Activations are float64 arrays shaped (batch, channels, time). Parameters may be
stored in float32 but every forward/backward casts to float64 before accumulating.
Each layer caches what its backward needs during ``forward``; call ``backward``
once per forward.
"""

from __future__ import annotations

import numpy as np

from sparknet.errors import ShapeError

_sliding = np.lib.stride_tricks.sliding_window_view


class Parameter:
    """A trainable array with its gradient and momentum buffer."""

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)
        self.momentum_buf = np.zeros_like(value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def accumulate(self, g: np.ndarray) -> None:
        self.grad += g.astype(self.grad.dtype, copy=False)

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape}, dtype={self.value.dtype})"


def _f64(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


def _check_input(x: np.ndarray, channels: int, name: str) -> None:
    if x.ndim != 3 or x.shape[1] != channels:
        raise ShapeError(f"{name}: expected input (batch, {channels}, time), got {x.shape}")


class DepthwiseConv1d:
    """Per-channel temporal convolution, stride 1, symmetric zero padding, no bias."""

    def __init__(self, channels: int, kernel_size: int, weight: np.ndarray):
        if kernel_size % 2 != 1:
            raise ShapeError(f"kernel size must be odd, got {kernel_size}")
        if weight.shape != (channels, kernel_size):
            raise ShapeError(f"depthwise weight must be ({channels}, {kernel_size}), got {weight.shape}")
        self.channels = channels
        self.kernel_size = kernel_size
        self.weight = Parameter(weight)
        self._windows = None

    @property
    def pad(self) -> int:
        return (self.kernel_size - 1) // 2

    def params(self) -> dict[str, Parameter]:
        return {"weight": self.weight}

    def forward(self, x: np.ndarray) -> np.ndarray:
        _check_input(x, self.channels, "depthwise_conv1d")
        p = self.pad
        xp = np.pad(_f64(x), ((0, 0), (0, 0), (p, p)))
        self._windows = _sliding(xp, self.kernel_size, axis=2)  # (B, C, T, K)
        return np.einsum("bctk,ck->bct", self._windows, _f64(self.weight.value))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        self.weight.accumulate(np.einsum("bctk,bct->ck", self._windows, dy))
        p = self.pad
        # transposed correlation: in[t] receives w[k] * dy[t + p - k]
        dyp = np.pad(dy, ((0, 0), (0, 0), (p, p)))
        flipped = _f64(self.weight.value)[:, ::-1]
        dx = np.einsum("bctk,ck->bct", _sliding(dyp, self.kernel_size, axis=2), flipped)
        self._windows = None
        return dx


class PointwiseConv1d:
    """Per-frame channel mixing (1x1 convolution) with optional bias."""

    def __init__(self, in_channels: int, out_channels: int, weight: np.ndarray, bias: np.ndarray | None = None):
        if weight.shape != (out_channels, in_channels):
            raise ShapeError(f"pointwise weight must be ({out_channels}, {in_channels}), got {weight.shape}")
        if bias is not None and bias.shape != (out_channels,):
            raise ShapeError(f"pointwise bias must be ({out_channels},), got {bias.shape}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.weight = Parameter(weight)
        self.bias = Parameter(bias) if bias is not None else None
        self._x = None

    def params(self) -> dict[str, Parameter]:
        out = {"weight": self.weight}
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        _check_input(x, self.in_channels, "pointwise_conv1d")
        self._x = _f64(x)
        y = np.einsum("oc,bct->bot", _f64(self.weight.value), self._x)
        if self.bias is not None:
            y += _f64(self.bias.value)[None, :, None]
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        self.weight.accumulate(np.einsum("bot,bct->oc", dy, self._x))
        if self.bias is not None:
            self.bias.accumulate(dy.sum(axis=(0, 2)))
        dx = np.einsum("oc,bot->bct", _f64(self.weight.value), dy)
        self._x = None
        return dx


class BatchNorm1d:
    """Batch normalization over (batch, time) per channel.

    Train mode normalizes with batch statistics (biased variance) and updates
    the running statistics with the unbiased variance; eval mode uses the
    running statistics only.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def params(self) -> dict[str, Parameter]:
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self) -> dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        _check_input(x, self.channels, "batchnorm1d")
        x = _f64(x)
        if train:
            n = x.shape[0] * x.shape[2]
            if n < 2:
                raise ShapeError("batchnorm1d in train mode needs at least 2 values per channel")
            mean = x.mean(axis=(0, 2))
            var = x.var(axis=(0, 2))
            m = self.momentum
            self.running_mean[...] = (1 - m) * self.running_mean + m * mean
            self.running_var[...] = (1 - m) * self.running_var + m * var * n / (n - 1)
        else:
            mean = _f64(self.running_mean)
            var = _f64(self.running_var)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
        self._cache = (xhat, inv_std, train)
        return _f64(self.gamma.value)[None, :, None] * xhat + _f64(self.beta.value)[None, :, None]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat, inv_std, train = self._cache
        self._cache = None
        self.gamma.accumulate((dy * xhat).sum(axis=(0, 2)))
        self.beta.accumulate(dy.sum(axis=(0, 2)))
        dxhat = dy * _f64(self.gamma.value)[None, :, None]
        if not train:
            return dxhat * inv_std[None, :, None]
        mean_dxhat = dxhat.mean(axis=(0, 2), keepdims=True)
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=(0, 2), keepdims=True)
        return (dxhat - mean_dxhat - xhat * mean_dxhat_xhat) * inv_std[None, :, None]


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dx = np.where(self._mask, dy, 0.0)
        self._mask = None
        return dx


class Tanh:
    def __init__(self):
        self._y = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._y = np.tanh(x)
        return self._y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dx = dy * (1.0 - self._y**2)
        self._y = None
        return dx


def avg_pool_time(x: np.ndarray) -> np.ndarray:
    """(B, C, T) -> (B, C) mean over time."""
    return x.mean(axis=-1)


def avg_pool_time_backward(dy: np.ndarray, time: int) -> np.ndarray:
    return np.repeat(dy[..., None] / time, time, axis=-1)


class Linear:
    def __init__(self, in_features: int, out_features: int, weight: np.ndarray, bias: np.ndarray):
        if weight.shape != (out_features, in_features) or bias.shape != (out_features,):
            raise ShapeError(
                f"linear expects weight ({out_features}, {in_features}) and bias ({out_features},), "
                f"got {weight.shape} and {bias.shape}"
            )
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(weight)
        self.bias = Parameter(bias)
        self._x = None

    def params(self) -> dict[str, Parameter]:
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"linear: expected (batch, {self.in_features}), got {x.shape}")
        self._x = _f64(x)
        return self._x @ _f64(self.weight.value).T + _f64(self.bias.value)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        self.weight.accumulate(dy.T @ self._x)
        self.bias.accumulate(dy.sum(axis=0))
        dx = dy @ _f64(self.weight.value)
        self._x = None
        return dx


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits.

    ``logits`` is (B, classes) and ``targets`` holds B class indices. A single
    1-D logit vector with a scalar target is also accepted.
    """
    logits = _f64(logits)
    single = logits.ndim == 1
    if single:
        logits = logits[None, :]
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if targets.shape != (logits.shape[0],):
        raise ShapeError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    logp = log_softmax(logits)
    rows = np.arange(logits.shape[0])
    loss = float(-logp[rows, targets].mean())
    grad = np.exp(logp)
    grad[rows, targets] -= 1.0
    grad /= logits.shape[0]
    return loss, (grad[0] if single else grad)
