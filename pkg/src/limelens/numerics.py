"""Dense tensor arithmetic for the two classifier networks.

Layer forward/backward passes, the binary cross-entropy loss and the SGD
update rule all live here. Everything is float64 numpy and pure: the same
inputs (including dropout masks) produce bit-identical outputs, which the
explanation pipeline relies on.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, DataError, DimensionError, StateError

# Clamp applied to probabilities before the log in the BCE loss.
BCE_EPSILON = 1e-7


class LayerKind(str, Enum):
    DENSE = "dense"
    CONV2D = "conv2d"
    AVGPOOL2D = "avgpool2d"
    DROPOUT = "dropout"
    FLATTEN = "flatten"
    ACTIVATION = "activation"


@dataclass
class LayerParams:
    """Parameters and hyper-parameters of a single layer."""

    kind: LayerKind
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    activation: str | None = None  # "relu" | "sigmoid"
    rate: float | None = None      # dropout keep-out rate
    window: int = 2                # pooling window == stride
    stride: int = 1                # conv stride (fixed at 1)

    def validate(self) -> None:
        if self.kind == LayerKind.DENSE:
            if self.weights is None or self.weights.ndim != 2:
                raise ConfigError("dense layer requires 2-d weights [in_dim, out_dim]")
            if self.bias is None or self.bias.shape != (self.weights.shape[1],):
                raise ConfigError("dense bias shape must be [out_dim]")
        elif self.kind == LayerKind.CONV2D:
            w = self.weights
            if w is None or w.ndim != 4:
                raise ConfigError("conv2d weights must be [out_c, in_c, kh, kw]")
            if w.shape[2:] != (3, 3) or self.stride != 1:
                raise ConfigError("only 3x3 kernels with stride 1 are supported")
            if self.bias is None or self.bias.shape != (w.shape[0],):
                raise ConfigError("conv2d bias shape must be [out_channels]")
        elif self.kind == LayerKind.AVGPOOL2D:
            if self.window != 2:
                raise ConfigError("only 2x2/stride-2 average pooling is supported")
        elif self.kind == LayerKind.DROPOUT:
            if self.rate is None or not 0.0 <= self.rate < 1.0:
                raise ConfigError(f"dropout rate must be in [0, 1), got {self.rate}")
        elif self.kind == LayerKind.ACTIVATION:
            if self.activation not in ("relu", "sigmoid"):
                raise ConfigError(f"unknown activation {self.activation!r}")


def require_finite(arr: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{what} contains non-finite values")
    return arr


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Two-branch form avoids overflow warnings for large |x|.
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation_apply(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ConfigError(f"unknown activation {kind!r}")


def dense_forward(x: np.ndarray, params: LayerParams) -> np.ndarray:
    """Affine map: out[b, j] = sum_i x[b, i] W[i, j] + bias[j]."""
    w, b = params.weights, params.bias
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(
            f"dense input shape {tuple(x.shape)} does not match weights {tuple(w.shape)}"
        )
    return x @ w + b


def _im2col(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """[B, C, Hp, Wp] padded input -> [B*H*W, C*kh*kw] patch matrix."""
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    b, c, h, w = windows.shape[:4]
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * kh * kw)


def _conv2d_with_cols(x: np.ndarray, params: LayerParams) -> tuple[np.ndarray, np.ndarray]:
    w = params.weights
    if x.ndim != 4 or x.shape[1] != w.shape[1]:
        raise DimensionError(
            f"conv2d input shape {tuple(x.shape)} does not match kernel {tuple(w.shape)}"
        )
    batch, _, h, wid = x.shape
    out_c, in_c, kh, kw = w.shape
    pad = kh // 2  # SAME zero-padding: spatial dims preserved
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = _im2col(xp, kh, kw)
    out = cols @ w.reshape(out_c, in_c * kh * kw).T + params.bias
    out = out.reshape(batch, h, wid, out_c).transpose(0, 3, 1, 2)
    return out, cols


def conv2d_forward(x: np.ndarray, params: LayerParams) -> np.ndarray:
    """Cross-correlation with SAME zero-padding, 3x3 kernel, stride 1."""
    return _conv2d_with_cols(x, params)[0]


def _conv2d_backward(
    dout: np.ndarray, cols: np.ndarray, x_shape: tuple, params: LayerParams
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    batch, in_c, h, w = x_shape
    out_c, _, kh, kw = params.weights.shape
    pad = kh // 2
    dmat = dout.transpose(0, 2, 3, 1).reshape(-1, out_c)
    dw = (dmat.T @ cols).reshape(params.weights.shape)
    db = dmat.sum(axis=0)
    dcols = (dmat @ params.weights.reshape(out_c, -1)).reshape(batch, h, w, in_c, kh, kw)
    dxp = np.zeros((batch, in_c, h + 2 * pad, w + 2 * pad))
    for ki in range(kh):
        for kj in range(kw):
            dxp[:, :, ki:ki + h, kj:kj + w] += dcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
    dx = dxp[:, :, pad:pad + h, pad:pad + w]
    return dx, dw, db


def avgpool2d_forward(x: np.ndarray, window: int = 2, stride: int = 2) -> np.ndarray:
    """2x2/stride-2 mean pooling; spatial dims must be even."""
    if window != 2 or stride != 2:
        raise ConfigError("only 2x2/stride-2 average pooling is supported")
    if x.ndim != 4 or x.shape[2] % 2 != 0 or x.shape[3] % 2 != 0:
        raise DimensionError(f"avgpool2d needs even spatial dims, got {tuple(x.shape)}")
    b, c, h, w = x.shape
    return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def binary_cross_entropy(p: np.ndarray, y: np.ndarray) -> float:
    """Mean of -[y ln p + (1-y) ln(1-p)] with p clamped to [eps, 1-eps]."""
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if p.shape != y.shape:
        raise DimensionError(f"probability length {p.shape[0]} != label length {y.shape[0]}")
    if np.any((y != 0.0) & (y != 1.0)):
        raise DataError("labels must be 0 or 1")
    pc = np.clip(p, BCE_EPSILON, 1.0 - BCE_EPSILON)
    return float(np.mean(-(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))))


@dataclass
class ForwardCache:
    """Per-layer values recorded during a forward pass, consumed by backward()."""

    output: np.ndarray
    layer_caches: list = field(default_factory=list)
    train: bool = False


def network_forward(
    layers: list[LayerParams],
    x: np.ndarray,
    *,
    train: bool = False,
    dropout_rng: np.random.Generator | None = None,
) -> ForwardCache:
    """Run x through the layer stack, caching what backward() needs.

    In training mode dropout draws one mask per layer from dropout_rng and
    scales kept units by 1/(1-rate), so inference needs no extra scaling.
    """
    caches = []
    for layer in layers:
        if layer.kind == LayerKind.DENSE:
            caches.append(x)
            x = dense_forward(x, layer)
        elif layer.kind == LayerKind.CONV2D:
            out, cols = _conv2d_with_cols(x, layer)
            caches.append((x.shape, cols))
            x = out
        elif layer.kind == LayerKind.AVGPOOL2D:
            caches.append(x.shape)
            x = avgpool2d_forward(x, layer.window, layer.window)
        elif layer.kind == LayerKind.DROPOUT:
            if train and layer.rate > 0.0:
                if dropout_rng is None:
                    raise ConfigError("training-mode dropout requires a dropout_rng")
                mask = (dropout_rng.random(x.shape) >= layer.rate) / (1.0 - layer.rate)
                caches.append(mask)
                x = x * mask
            else:
                caches.append(None)
        elif layer.kind == LayerKind.FLATTEN:
            caches.append(x.shape)
            x = x.reshape(x.shape[0], -1)
        elif layer.kind == LayerKind.ACTIVATION:
            if layer.activation == "relu":
                caches.append(x > 0)
                x = relu(x)
            else:
                x = sigmoid(x)
                caches.append(x)
        else:  # pragma: no cover - enum is closed
            raise ConfigError(f"unknown layer kind {layer.kind}")
    return ForwardCache(output=x, layer_caches=caches, train=train)


def backward(
    layers: list[LayerParams], cache: ForwardCache | None, batch_y: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray] | None]:
    """Gradient of the mean BCE loss w.r.t. every weight and bias.

    Returns one (dW, db) pair per parameterized layer, None elsewhere,
    aligned with the layer list.
    """
    if cache is None or cache.output is None:
        raise StateError("backward called before a cached forward pass")
    y = np.asarray(batch_y, dtype=np.float64).reshape(-1)
    p = cache.output.reshape(-1)
    if p.shape != y.shape:
        raise DimensionError(f"output length {p.shape[0]} != label length {y.shape[0]}")
    n = p.shape[0]

    # d(mean BCE)/dp with the clamp: zero gradient where the clamp is active.
    pc = np.clip(p, BCE_EPSILON, 1.0 - BCE_EPSILON)
    inside = (p > BCE_EPSILON) & (p < 1.0 - BCE_EPSILON)
    delta = np.where(inside, (pc - y) / (pc * (1.0 - pc)) / n, 0.0)
    delta = delta.reshape(cache.output.shape)

    grads: list[tuple[np.ndarray, np.ndarray] | None] = [None] * len(layers)
    for idx in range(len(layers) - 1, -1, -1):
        layer = layers[idx]
        layer_cache = cache.layer_caches[idx]
        if layer.kind == LayerKind.DENSE:
            x_in = layer_cache
            grads[idx] = (x_in.T @ delta, delta.sum(axis=0))
            delta = delta @ layer.weights.T
        elif layer.kind == LayerKind.CONV2D:
            x_shape, cols = layer_cache
            delta, dw, db = _conv2d_backward(delta, cols, x_shape, layer)
            grads[idx] = (dw, db)
        elif layer.kind == LayerKind.AVGPOOL2D:
            b, c, h, w = layer_cache
            delta = np.repeat(np.repeat(delta, 2, axis=2), 2, axis=3) / 4.0
        elif layer.kind == LayerKind.DROPOUT:
            if layer_cache is not None:
                delta = delta * layer_cache
        elif layer.kind == LayerKind.FLATTEN:
            delta = delta.reshape(layer_cache)
        elif layer.kind == LayerKind.ACTIVATION:
            if layer.activation == "relu":
                delta = delta * layer_cache
            else:
                s = layer_cache
                delta = delta * s * (1.0 - s)
    return grads


def sgd_step(
    param: np.ndarray,
    grad: np.ndarray,
    velocity: np.ndarray,
    lr: float,
    momentum: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Momentum SGD: v <- momentum*v + g; theta <- theta - lr*v."""
    if lr <= 0.0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
    if param.shape != grad.shape or param.shape != velocity.shape:
        raise DimensionError(
            f"mismatched shapes: param {param.shape}, grad {grad.shape}, velocity {velocity.shape}"
        )
    v_new = momentum * velocity + grad
    return param - lr * v_new, v_new
