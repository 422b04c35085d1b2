"""Reverse-mode layers in float64 numpy.

Each layer owns its parameters, caches what its backward pass needs during
a train-mode forward, and implements backward(dout) -> dx while
accumulating parameter gradients. There is no general graph: Sequential
and Residual cover the two fixed architectures (residual CNN embedder and
fully connected autoencoder).

Image-like tensors are channels-last (B, H, W, C): convolution then
reduces to an im2col built from nine contiguous block copies plus a single
BLAS matmul, and the per-frame flatten before the embedding projection is
a free reshape. Convolutions are stride-1 "same" only, which also lets the
input gradient be expressed as a convolution by the flipped kernels.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError

# Posteriors exposed to callers are clamped into the open interval (0, 1);
# only relevant for absurd logits, losses always use log_softmax directly.
_POSTERIOR_MIN = 1e-300
_POSTERIOR_MAX = 1.0 - 1e-16

# Conv keeps its im2col patch matrix for backward below this size and
# recomputes it above, trading memory against one extra gather.
_COLS_CACHE_BYTES = 64 * 2**20


class Parameter:
    """Trainable tensor: value plus a same-shape gradient accumulator."""

    def __init__(self, value: np.ndarray, name: str = ""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    def params(self) -> list[Parameter]:
        return []

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError

    def _require_cache(self, cache):
        if cache is None:
            raise ContractError(
                f"{type(self).__name__}.backward called without a cached "
                "train-mode forward"
            )
        return cache


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, bias: bool = True,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.n_in, self.n_out, self.use_bias = n_in, n_out, bias
        self.weight = Parameter(kaiming_uniform(rng, (n_out, n_in), n_in), "weight")
        self.bias = Parameter(np.zeros(n_out), "bias") if bias else None
        self._x = None

    def params(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def forward(self, x, train):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ContractError(f"Dense expects (B, {self.n_in}), got {x.shape}")
        if train:
            self._x = x
        y = x @ self.weight.value.T
        if self.bias is not None:
            y += self.bias.value
        return y

    def backward(self, dout):
        x = self._require_cache(self._x)
        self.weight.grad += dout.T @ x
        if self.bias is not None:
            self.bias.grad += dout.sum(axis=0)
        return dout @ self.weight.value

    def spec(self):
        return {"type": "dense", "in": self.n_in, "out": self.n_out,
                "bias": self.use_bias}


def _pad_spatial(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    B, H, W, C = x.shape
    out = np.zeros((B, H + 2 * pad, W + 2 * pad, C))
    out[:, pad : pad + H, pad : pad + W, :] = x
    return out


def _im2col(x: np.ndarray, kernel: int, pad: int) -> tuple[np.ndarray, tuple[int, int]]:
    """(B, H, W, C) -> ((B*Ho*Wo, k*k*C), (Ho, Wo)) patch matrix, stride 1."""
    B, H, W, C = x.shape
    ho = H + 2 * pad - kernel + 1
    wo = W + 2 * pad - kernel + 1
    xp = _pad_spatial(x, pad)
    cols = np.empty((B, ho, wo, kernel, kernel, C))
    for u in range(kernel):
        for v in range(kernel):
            cols[:, :, :, u, v, :] = xp[:, u : u + ho, v : v + wo, :]
    return cols.reshape(B * ho * wo, kernel * kernel * C), (ho, wo)


class Conv2d(Layer):
    """Same convolution on channels-last maps: stride 1, pad (kernel-1)/2.

    Weights are stored as (k, k, c_in, c_out) so the im2col matmul needs no
    reshuffling; checkpoints carry the same layout.
    """

    def __init__(self, c_in: int, c_out: int, kernel: int = 3,
                 rng: np.random.Generator | None = None, bias: bool = True):
        if kernel % 2 != 1:
            raise ContractError("Conv2d supports odd kernels only")
        rng = rng or np.random.default_rng(0)
        self.c_in, self.c_out, self.kernel = c_in, c_out, kernel
        self.pad = (kernel - 1) // 2
        fan_in = c_in * kernel * kernel
        self.weight = Parameter(
            kaiming_uniform(rng, (kernel, kernel, c_in, c_out), fan_in), "weight"
        )
        self.bias = Parameter(np.zeros(c_out), "bias") if bias else None
        self._x = None
        self._cols = None

    def params(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def forward(self, x, train):
        if x.ndim != 4 or x.shape[3] != self.c_in:
            raise ContractError(f"Conv2d expects (B, H, W, {self.c_in}), got {x.shape}")
        B = x.shape[0]
        cols, (ho, wo) = _im2col(x, self.kernel, self.pad)
        if train:
            self._x = x
            self._cols = cols if cols.nbytes <= _COLS_CACHE_BYTES else None
        out = cols @ self.weight.value.reshape(-1, self.c_out)
        if self.bias is not None:
            out += self.bias.value
        return out.reshape(B, ho, wo, self.c_out)

    def backward(self, dout):
        x = self._require_cache(self._x)
        B, H, W, _ = x.shape
        k = self.kernel
        dout_mat = dout.reshape(B * H * W, self.c_out)
        cols = self._cols
        if cols is None:
            cols, _ = _im2col(x, k, self.pad)
        self.weight.grad += (cols.T @ dout_mat).reshape(self.weight.shape)
        if self.bias is not None:
            self.bias.grad += dout_mat.sum(axis=0)
        # dx = convolution of dout with the spatially flipped kernels and
        # in/out channels swapped; stride 1 makes this another im2col matmul.
        w_flip = self.weight.value[::-1, ::-1].transpose(0, 1, 3, 2)
        dcols, _ = _im2col(dout, k, k - 1 - self.pad)
        dx = dcols @ w_flip.reshape(-1, self.c_in)
        return dx.reshape(B, H, W, self.c_in)

    def spec(self):
        return {"type": "conv2d", "in": self.c_in, "out": self.c_out,
                "kernel": self.kernel, "stride": 1, "pad": self.pad,
                "bias": self.bias is not None}


class ReLU(Layer):
    def __init__(self):
        self._mask = None

    def forward(self, x, train):
        if train:
            self._mask = x > 0.0
        return np.maximum(x, 0.0)

    def backward(self, dout):
        return dout * self._require_cache(self._mask)

    def spec(self):
        return {"type": "relu"}


class BatchNorm(Layer):
    """Batch normalization over the batch (and spatial dims for 4-D input).

    Features sit on the last axis for both (B, C) and (B, H, W, C) inputs.
    Train mode normalizes with biased batch statistics and updates the
    running estimates with momentum 0.1; eval mode uses the running
    statistics, making inference deterministic and batch-independent.
    """

    def __init__(self, num_features: int, eps: float = 1e-5, momentum: float = 0.1):
        self.num_features = num_features
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(num_features), "gamma")
        self.beta = Parameter(np.zeros(num_features), "beta")
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def set_buffers(self, buffers: dict[str, np.ndarray]):
        self.running_mean = np.asarray(buffers["running_mean"], dtype=np.float64)
        self.running_var = np.asarray(buffers["running_var"], dtype=np.float64)

    def forward(self, x, train):
        if x.ndim not in (2, 4):
            raise ContractError(f"BatchNorm expects 2-D or 4-D input, got {x.ndim}-D")
        if x.shape[-1] != self.num_features:
            raise ContractError(
                f"BatchNorm expects {self.num_features} features on the last "
                f"axis, got {x.shape[-1]}"
            )
        axes = tuple(range(x.ndim - 1))
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - mean) * inv_std
        if train:
            self._cache = (x_hat, inv_std, axes, x.size // self.num_features)
        return self.gamma.value * x_hat + self.beta.value

    def backward(self, dout):
        x_hat, inv_std, axes, n = self._require_cache(self._cache)
        self.gamma.grad += (dout * x_hat).sum(axis=axes)
        self.beta.grad += dout.sum(axis=axes)
        dxhat = dout * self.gamma.value
        term = (
            n * dxhat
            - dxhat.sum(axis=axes, keepdims=True)
            - x_hat * (dxhat * x_hat).sum(axis=axes, keepdims=True)
        )
        return inv_std / n * term

    def spec(self):
        return {"type": "batch_norm", "features": self.num_features,
                "eps": self.eps, "momentum": self.momentum}


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x, train):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def spec(self):
        return {"type": "sequential", "layers": [l.spec() for l in self.layers]}


class Residual(Layer):
    """x -> relu(x + inner(x)); inner preserves the input shape."""

    def __init__(self, inner: Sequential):
        self.inner = inner
        self._mask = None

    def params(self):
        return self.inner.params()

    def forward(self, x, train):
        y = x + self.inner.forward(x, train)
        if train:
            self._mask = y > 0.0
        return np.maximum(y, 0.0)

    def backward(self, dout):
        dsum = dout * self._require_cache(self._mask)
        return dsum + self.inner.backward(dsum)

    def spec(self):
        return {"type": "residual", "inner": self.inner.spec()["layers"]}


class FramewiseDense(Layer):
    """Shared linear map applied to each time frame of a (B, H, W, C) map.

    Frame h is flattened to a W*C vector and projected to d_out with the
    same weights for every frame; output is (B, H, d_out).
    """

    def __init__(self, c_in: int, width: int, d_out: int,
                 rng: np.random.Generator | None = None):
        self.c_in, self.width, self.d_out = c_in, width, d_out
        self.dense = Dense(width * c_in, d_out, bias=True, rng=rng)
        self._shape = None

    def params(self):
        return self.dense.params()

    def forward(self, x, train):
        if x.ndim != 4 or x.shape[3] != self.c_in or x.shape[2] != self.width:
            raise ContractError(
                f"FramewiseDense expects (B, H, {self.width}, {self.c_in}), "
                f"got {x.shape}"
            )
        B, H, W, C = x.shape
        if train:
            self._shape = (B, H, W, C)
        flat = np.ascontiguousarray(x).reshape(B * H, W * C)
        return self.dense.forward(flat, train).reshape(B, H, self.d_out)

    def backward(self, dout):
        B, H, W, C = self._require_cache(self._shape)
        dflat = self.dense.backward(dout.reshape(B * H, self.d_out))
        return dflat.reshape(B, H, W, C)

    def spec(self):
        return {"type": "framewise_dense", "channels": self.c_in,
                "width": self.width, "out": self.d_out}


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax, finite for any finite logits."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax clamped into the open interval (0, 1)."""
    p = np.exp(log_softmax(logits))
    return np.clip(p, _POSTERIOR_MIN, _POSTERIOR_MAX)


def cross_entropy_from_logits(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-row cross entropy and its gradient w.r.t. the logits.

    Returns (losses of shape (N,), dlogits of shape (N, n_classes)); the
    gradient is of the summed loss, softmax(logits) - onehot(labels).
    """
    if logits.shape[0] != labels.shape[0]:
        raise ContractError("logits and labels disagree on the row count")
    logp = log_softmax(logits)
    rows = np.arange(labels.shape[0])
    losses = -logp[rows, labels]
    dlogits = np.exp(logp)
    dlogits[rows, labels] -= 1.0
    return losses, dlogits
