"""Builders, training loop and persistence for the MLP and CNN classifiers.

Both architectures are fixed: the MLP is three 128-unit ReLU layers with
dropout before a single sigmoid output; the CNN is five conv+avgpool
blocks (32/64/128/256/512 channels, 3x3, stride 1, SAME padding) followed
by two 1024-unit ReLU layers, dropout, and the sigmoid output.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .data import CLASS_MAP, Dataset, POLICY_SIZES
from .errors import ConfigError, DataError, DimensionError, FormatError
from .numerics import (
    LayerKind,
    LayerParams,
    backward,
    binary_cross_entropy,
    network_forward,
    require_finite,
    sgd_step,
)

ARCH_MLP = "MLP"
ARCH_CNN = "CNN"

WEIGHTS_MAGIC = b"LMNW"
WEIGHTS_VERSION = 1

# Fixed chunk size for batched inference: results must not depend on how
# callers fan work out, so the chunking never varies with worker count.
INFERENCE_CHUNK = 64


@dataclass
class Network:
    id: str
    architecture: str
    input_shape: tuple[int, int, int]
    layers: list[LayerParams]
    class_map: dict[int, str] = field(default_factory=lambda: dict(CLASS_MAP))
    init_seed: int = 0

    def predict(self, image: np.ndarray) -> "PredictionResult":
        return predict(self, image)

    def predict_batch(self, images: np.ndarray) -> np.ndarray:
        return predict_probabilities(self, images)


@dataclass
class TrainingConfig:
    batch_size: int = 32
    max_epochs: int = 150
    patience: int = 10
    lr: float = 0.01
    momentum: float = 0.9
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, max_epochs and patience must all be >= 1")
        if self.lr <= 0.0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")


@dataclass
class TrainingHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0


@dataclass
class PredictionResult:
    probability: float
    predicted_class: str
    threshold: float = 0.5

    def to_document(self, model_id: str = "", image_id: str = "") -> dict:
        return {
            "version": 1,
            "model_id": model_id,
            "image_id": image_id,
            "probability": float(self.probability),
            "predicted_class": self.predicted_class,
            "threshold": float(self.threshold),
        }


class EarlyStopping:
    """Stop when validation loss has not strictly improved for `patience` epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_epoch = 0
        self.best_loss = np.inf

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record one epoch's validation loss; return True when training should stop."""
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
            return False
        return epoch - self.best_epoch >= self.patience


def _validate_input_shape(input_shape) -> tuple[int, int, int]:
    shape = tuple(int(v) for v in input_shape)
    if len(shape) != 3 or shape[0] != 3 or shape[1] != shape[2] or shape[1] not in POLICY_SIZES:
        raise ConfigError(
            f"input shape must be [3, s, s] with s in {POLICY_SIZES}, got {list(input_shape)}"
        )
    return shape


def _he_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def _glorot_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _dense(rng, in_dim: int, out_dim: int, final: bool = False) -> LayerParams:
    if final:
        w = _glorot_uniform(rng, (in_dim, out_dim), in_dim, out_dim)
    else:
        w = _he_uniform(rng, (in_dim, out_dim), in_dim)
    return LayerParams(LayerKind.DENSE, weights=w, bias=np.zeros(out_dim))


def _conv(rng, in_c: int, out_c: int) -> LayerParams:
    fan_in = in_c * 9
    w = _he_uniform(rng, (out_c, in_c, 3, 3), fan_in)
    return LayerParams(LayerKind.CONV2D, weights=w, bias=np.zeros(out_c))


def build_mlp(input_shape, seed: int = 0) -> Network:
    """Flatten -> 3x Dense(128)+ReLU -> Dropout(0.5) -> Dense(1)+Sigmoid."""
    shape = _validate_input_shape(input_shape)
    rng = np.random.default_rng(seed)
    flat = shape[0] * shape[1] * shape[2]
    layers = [LayerParams(LayerKind.FLATTEN)]
    in_dim = flat
    for _ in range(3):
        layers.append(_dense(rng, in_dim, 128))
        layers.append(LayerParams(LayerKind.ACTIVATION, activation="relu"))
        in_dim = 128
    layers.append(LayerParams(LayerKind.DROPOUT, rate=0.5))
    layers.append(_dense(rng, in_dim, 1, final=True))
    layers.append(LayerParams(LayerKind.ACTIVATION, activation="sigmoid"))
    for layer in layers:
        layer.validate()
    return Network(id="mlp", architecture=ARCH_MLP, input_shape=shape, layers=layers, init_seed=seed)


def build_cnn(input_shape, seed: int = 0) -> Network:
    """Five Conv(3x3, SAME)+ReLU -> AvgPool(2x2) blocks, then the dense head."""
    shape = _validate_input_shape(input_shape)
    rng = np.random.default_rng(seed)
    layers: list[LayerParams] = []
    in_c, side = shape[0], shape[1]
    for out_c in (32, 64, 128, 256, 512):
        layers.append(_conv(rng, in_c, out_c))
        layers.append(LayerParams(LayerKind.ACTIVATION, activation="relu"))
        layers.append(LayerParams(LayerKind.AVGPOOL2D, window=2))
        in_c = out_c
        side //= 2
    layers.append(LayerParams(LayerKind.FLATTEN))
    in_dim = in_c * side * side
    for _ in range(2):
        layers.append(_dense(rng, in_dim, 1024))
        layers.append(LayerParams(LayerKind.ACTIVATION, activation="relu"))
        in_dim = 1024
    layers.append(LayerParams(LayerKind.DROPOUT, rate=0.5))
    layers.append(_dense(rng, in_dim, 1, final=True))
    layers.append(LayerParams(LayerKind.ACTIVATION, activation="sigmoid"))
    for layer in layers:
        layer.validate()
    return Network(id="cnn", architecture=ARCH_CNN, input_shape=shape, layers=layers, init_seed=seed)


def predict_probabilities(network: Network, images: np.ndarray) -> np.ndarray:
    """Probabilities of the positive class for a batch [n, c, h, w]."""
    if images.ndim != 4 or tuple(images.shape[1:]) != network.input_shape:
        raise DimensionError(
            f"batch shape {tuple(images.shape)} does not match input shape "
            f"{tuple(network.input_shape)}"
        )
    probs = np.empty(images.shape[0])
    for start in range(0, images.shape[0], INFERENCE_CHUNK):
        chunk = images[start:start + INFERENCE_CHUNK]
        out = network_forward(network.layers, chunk, train=False).output
        probs[start:start + chunk.shape[0]] = out[:, 0]
    return probs


def predict(network: Network, image: np.ndarray) -> PredictionResult:
    """Classify one [c, h, w] image; ties at p = 0.5 go to the positive class."""
    if tuple(image.shape) != network.input_shape:
        raise DimensionError(
            f"image shape {tuple(image.shape)} does not match input shape "
            f"{tuple(network.input_shape)}"
        )
    p = float(network_forward(network.layers, image[None, ...], train=False).output[0, 0])
    label = network.class_map[1] if p >= 0.5 else network.class_map[0]
    return PredictionResult(probability=p, predicted_class=label)


def dataset_to_arrays(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    inverse = {label: value for value, label in CLASS_MAP.items()}
    x = np.stack([s.pixels for s in dataset.samples])
    y = np.array([inverse[s.label] for s in dataset.samples], dtype=np.float64)
    return x, y


def _copy_network(network: Network) -> Network:
    layers = [
        replace(
            layer,
            weights=None if layer.weights is None else layer.weights.copy(),
            bias=None if layer.bias is None else layer.bias.copy(),
        )
        for layer in network.layers
    ]
    return replace(network, layers=layers, class_map=dict(network.class_map))


def _mean_loss_and_accuracy(network: Network, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    probs = predict_probabilities(network, x)
    loss = binary_cross_entropy(probs, y)
    accuracy = float(np.mean((probs >= 0.5).astype(np.float64) == y))
    return loss, accuracy


def train(
    network: Network,
    train_set: Dataset,
    val_set: Dataset,
    config: TrainingConfig,
) -> tuple[Network, TrainingHistory]:
    """SGD training with early stopping on validation loss.

    The incoming network is left untouched; a private copy is trained.
    The returned network carries the weights of the best epoch (lowest
    validation loss). Bit-reproducible for identical seed/config/data.
    """
    config.validate()
    if len(train_set) == 0 or len(val_set) == 0:
        raise DataError("training and validation sets must be non-empty")
    x_train, y_train = dataset_to_arrays(train_set)
    x_val, y_val = dataset_to_arrays(val_set)

    net = _copy_network(network)
    shuffle_rng = np.random.default_rng([config.seed, 0])
    dropout_rng = np.random.default_rng([config.seed, 1])
    velocities = [
        None if layer.weights is None else (np.zeros_like(layer.weights), np.zeros_like(layer.bias))
        for layer in net.layers
    ]

    history = TrainingHistory()
    stopper = EarlyStopping(config.patience)
    best_params: list[tuple[np.ndarray, np.ndarray] | None] = []

    n = x_train.shape[0]
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            cache = network_forward(net.layers, xb, train=True, dropout_rng=dropout_rng)
            loss_sum += binary_cross_entropy(cache.output[:, 0], yb) * len(idx)
            grads = backward(net.layers, cache, yb)
            for li, grad in enumerate(grads):
                if grad is None:
                    continue
                layer = net.layers[li]
                vel_w, vel_b = velocities[li]
                layer.weights, vel_w = sgd_step(layer.weights, grad[0], vel_w, config.lr, config.momentum)
                layer.bias, vel_b = sgd_step(layer.bias, grad[1], vel_b, config.lr, config.momentum)
                velocities[li] = (vel_w, vel_b)

        val_loss, val_acc = _mean_loss_and_accuracy(net, x_val, y_val)
        history.train_loss.append(loss_sum / n)
        history.val_loss.append(val_loss)
        history.val_accuracy.append(val_acc)

        stop = stopper.update(epoch, val_loss)
        if stopper.best_epoch == epoch:
            best_params = [
                None if layer.weights is None else (layer.weights.copy(), layer.bias.copy())
                for layer in net.layers
            ]
        if stop:
            history.stopped_epoch = epoch
            break
    else:
        history.stopped_epoch = config.max_epochs

    history.best_epoch = stopper.best_epoch
    for layer, saved in zip(net.layers, best_params):
        if saved is not None:
            layer.weights, layer.bias = saved[0].copy(), saved[1].copy()
    return net, history


def _layer_descriptor(layer: LayerParams) -> dict:
    return {
        "kind": layer.kind.value,
        "activation": layer.activation,
        "rate": layer.rate,
        "window": layer.window,
        "stride": layer.stride,
        "weights_shape": None if layer.weights is None else list(layer.weights.shape),
        "bias_shape": None if layer.bias is None else list(layer.bias.shape),
    }


def save_weights(network: Network, path) -> None:
    """Write the versioned weights file (magic, metadata, float32 arrays)."""
    meta = {
        "id": network.id,
        "architecture": network.architecture,
        "input_shape": list(network.input_shape),
        "class_map": {str(k): v for k, v in network.class_map.items()},
        "init_seed": network.init_seed,
        "layers": [_layer_descriptor(layer) for layer in network.layers],
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<I", WEIGHTS_VERSION))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        for layer in network.layers:
            if layer.weights is not None:
                fh.write(layer.weights.astype("<f4").tobytes())
                fh.write(layer.bias.astype("<f4").tobytes())


def load_weights(path) -> Network:
    """Read a weights file back into a float64 Network."""
    with open(path, "rb") as fh:
        buf = fh.read()
    offset = 0

    def take(count: int, what: str) -> bytes:
        nonlocal offset
        if offset + count > len(buf):
            raise FormatError(f"truncated weights file: {what} at offset {offset}")
        chunk = buf[offset:offset + count]
        offset += count
        return chunk

    if take(4, "magic") != WEIGHTS_MAGIC:
        raise FormatError("bad magic bytes at offset 0 (not a limelens weights file)")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != WEIGHTS_VERSION:
        raise FormatError(f"unsupported weights version {version} at offset 4")
    (meta_len,) = struct.unpack("<I", take(4, "metadata length"))
    meta_start = offset
    try:
        meta = json.loads(take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt metadata at offset {meta_start}: {exc}") from exc

    try:
        layers = []
        for desc in meta["layers"]:
            layers.append(
                LayerParams(
                    kind=LayerKind(desc["kind"]),
                    activation=desc["activation"],
                    rate=desc["rate"],
                    window=desc["window"],
                    stride=desc["stride"],
                )
            )
            layers[-1]._shapes = (desc["weights_shape"], desc["bias_shape"])  # type: ignore[attr-defined]
        network = Network(
            id=meta["id"],
            architecture=meta["architecture"],
            input_shape=tuple(meta["input_shape"]),
            layers=layers,
            class_map={int(k): v for k, v in meta["class_map"].items()},
            init_seed=meta["init_seed"],
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"invalid metadata document at offset {meta_start}: {exc}") from exc

    for layer in network.layers:
        w_shape, b_shape = layer._shapes  # type: ignore[attr-defined]
        del layer._shapes  # type: ignore[attr-defined]
        if w_shape is None:
            continue
        w_count = int(np.prod(w_shape))
        b_count = int(np.prod(b_shape))
        at = offset
        w_raw = take(4 * w_count, "weight array")
        b_raw = take(4 * b_count, "bias array")
        layer.weights = np.frombuffer(w_raw, dtype="<f4").reshape(w_shape).astype(np.float64)
        layer.bias = np.frombuffer(b_raw, dtype="<f4").reshape(b_shape).astype(np.float64)
        require_finite(layer.weights, f"weights at offset {at}")
        layer.validate()
    if offset != len(buf):
        raise FormatError(f"trailing bytes at offset {offset}")
    return network


def predicted_labels(network: Network, dataset: Dataset) -> list[str]:
    x, _ = dataset_to_arrays(dataset)
    probs = predict_probabilities(network, x)
    return [network.class_map[1] if p >= 0.5 else network.class_map[0] for p in probs]
