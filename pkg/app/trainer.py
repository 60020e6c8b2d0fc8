import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .datasets import Dataset
from .exceptions import EmptyDatasetError, NonFiniteError, ShapeMismatchError, TrainingDivergedError
from .layers import Conv2D, Dense, Flatten, MaxPool2D, ReLU
from .models import TrainConfig
from .network import Network, ParameterGradients, loss_and_parameter_gradients
from .preprocessing import PreprocessTransform

logger = logging.getLogger(__name__)


def _init_weight(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, fan_out: int, scheme: str):
    if scheme == "xavier":
        scale = math.sqrt(2.0 / (fan_in + fan_out))
    else:
        scale = math.sqrt(2.0 / fan_in)
    return rng.normal(0.0, scale, size=shape)


def _conv(rng, in_channels: int, out_channels: int, kernel: int, scheme: str) -> Conv2D:
    weight = _init_weight(rng, (out_channels, in_channels, kernel, kernel),
                          in_channels * kernel * kernel, out_channels * kernel * kernel, scheme)
    return Conv2D(weight, np.zeros(out_channels), stride=1, padding=kernel // 2)


def _dense(rng, in_features: int, out_features: int, scheme: str) -> Dense:
    weight = _init_weight(rng, (out_features, in_features), in_features, out_features, scheme)
    return Dense(weight, np.zeros(out_features))


def reference_cnn(input_shape: Sequence[int] = (3, 32, 32), num_classes: int = 10, seed: int = 0,
                  init: str = "he", dtype=np.float32, widths: Tuple[int, int, int] = (16, 32, 128)) -> Network:
    """Conv(16)-ReLU-MaxPool-Conv(32)-ReLU-MaxPool-Flatten-Dense(128)-ReLU-Dense(classes)."""
    channels, height, width = input_shape
    rng = np.random.default_rng(seed)
    c1, c2, hidden = widths
    features = c2 * (height // 2 // 2) * (width // 2 // 2)
    if features == 0:
        raise ShapeMismatchError("input too small for two 2x2 poolings", actual=tuple(input_shape))
    layers = [
        _conv(rng, channels, c1, 3, init), ReLU(), MaxPool2D(2),
        _conv(rng, c1, c2, 3, init), ReLU(), MaxPool2D(2),
        Flatten(),
        _dense(rng, features, hidden, init), ReLU(),
        _dense(rng, hidden, num_classes, init),
    ]
    return Network(layers, input_shape, num_classes).astype(dtype)


def linear_classifier(input_shape: Sequence[int], num_classes: int, seed: int = 0, init: str = "xavier",
                      dtype=np.float32) -> Network:
    rng = np.random.default_rng(seed)
    features = int(np.prod(input_shape))
    return Network([Flatten(), _dense(rng, features, num_classes, init)], input_shape, num_classes).astype(dtype)


ARCHITECTURES = {"reference_cnn": reference_cnn, "linear": linear_classifier}


def sgd_step(params: ParameterGradients, grads: ParameterGradients, lr: float,
             velocity: Optional[ParameterGradients] = None,
             momentum: float = 0.0) -> Tuple[ParameterGradients, ParameterGradients]:
    """
    Classical momentum update, returning new parameters and velocity:
    ``v <- momentum * v + g``; ``w <- w - lr * v``.
    """
    if len(params) != len(grads) or (velocity is not None and len(velocity) != len(params)):
        raise ShapeMismatchError("parameter, gradient and velocity lists differ in length")
    new_params, new_velocity = [], []
    for index, (layer_params, layer_grads) in enumerate(zip(params, grads)):
        layer_velocity = velocity[index] if velocity is not None else {}
        updated, moved = {}, {}
        for name, weight in layer_params.items():
            grad = layer_grads.get(name)
            if grad is None or grad.shape != weight.shape:
                raise ShapeMismatchError(f"gradient for {name!r} does not match parameter", layer_index=index,
                                         expected=weight.shape, actual=None if grad is None else grad.shape)
            previous = layer_velocity.get(name)
            v = grad if previous is None else momentum * previous + grad
            moved[name] = v
            updated[name] = weight - lr * v
        new_params.append(updated)
        new_velocity.append(moved)
    return new_params, new_velocity


def learning_rate_at(config: TrainConfig, epoch: int) -> float:
    if config.lr_schedule == "step":
        return config.learning_rate * config.decay_factor ** (epoch // config.decay_every)
    if config.lr_schedule == "cosine":
        return 0.5 * config.learning_rate * (1 + math.cos(math.pi * epoch / config.epochs))
    return config.learning_rate


@dataclass(frozen=True)
class TrainingResult:
    network: Network
    loss_curve: List[float]


def train(network: Network, dataset: Dataset, config: TrainConfig, transform: Optional[PreprocessTransform] = None,
          progress: bool = False) -> TrainingResult:
    """
    Mini-batch SGD with momentum on the mean cross-entropy.

    Deterministic for a fixed seed: epoch e shuffles with a generator seeded
    by (seed, e), and the initial weights come with ``network``.
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot train on an empty dataset")
    images = dataset.images.astype(network.dtype, copy=False)
    if transform is not None:
        images = transform.apply(images)
    labels = dataset.labels
    current = network
    params = network.parameters()
    velocity = None
    curve: List[float] = []
    epochs = tqdm(range(config.epochs), desc="train", disable=not progress)
    for epoch in epochs:
        lr = learning_rate_at(config, epoch)
        order = np.random.default_rng([config.seed, epoch]).permutation(len(dataset))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            index = order[start:start + config.batch_size]
            try:
                loss, grads = loss_and_parameter_gradients(current, images[index], labels[index])
            except NonFiniteError as exc:
                raise TrainingDivergedError(epoch, float("nan")) from exc
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            params, velocity = sgd_step(params, grads, lr, velocity, config.momentum)
            current = current.with_parameters(params)
            total += loss * len(index)
        curve.append(total / len(order))
        logger.info("epoch %d/%d: lr=%.4g loss=%.4f", epoch + 1, config.epochs, lr, curve[-1])
        epochs.set_postfix(loss=f"{curve[-1]:.4f}")
    return TrainingResult(current, curve)

