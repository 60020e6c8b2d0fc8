"""Builders for small networks and datasets shared by the test modules."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.datasets import Dataset
from app.layers import AvgPool2D, BatchNormInference, Conv2D, Dense, Flatten, MaxPool2D, ReLU
from app.network import Network
from app.trainer import linear_classifier, reference_cnn


def dense(rng, fan_in, fan_out):
    return Dense(rng.normal(0, 1 / np.sqrt(fan_in), (fan_out, fan_in)), rng.normal(0, 0.1, fan_out))


def conv(rng, c_in, c_out, k, stride=1, padding=0):
    fan_in = c_in * k * k
    return Conv2D(rng.normal(0, 1 / np.sqrt(fan_in), (c_out, c_in, k, k)), rng.normal(0, 0.1, c_out),
                  stride=stride, padding=padding)


def batch_norm(rng, channels):
    return BatchNormInference(rng.uniform(0.5, 1.5, channels), rng.normal(0, 0.1, channels),
                              rng.normal(0, 0.1, channels), rng.uniform(0.5, 2.0, channels))


def random_network(seed, input_shape=(2, 5, 5), num_classes=3) -> Network:
    """A float64 network of at most five layers and 500 parameters, drawn from one of five templates."""
    rng = np.random.default_rng(seed)
    c, h, w = input_shape
    features = c * h * w
    template = seed % 5
    if template == 0:
        layers = [Flatten(), dense(rng, features, 6), ReLU(), dense(rng, 6, num_classes)]
    elif template == 1:
        layers = [conv(rng, c, 3, 3, padding=1), ReLU(), MaxPool2D(2), Flatten(),
                  dense(rng, 3 * (h // 2) * (w // 2), num_classes)]
    elif template == 2:
        side = (h + 2 - 3) // 2 + 1
        layers = [conv(rng, c, 2, 3, stride=2, padding=1), batch_norm(rng, 2), ReLU(), Flatten(),
                  dense(rng, 2 * side * side, num_classes)]
    elif template == 3:
        layers = [Flatten(), dense(rng, features, 5), batch_norm(rng, 5), ReLU(), dense(rng, 5, num_classes)]
    else:
        side = (h - 1) // 2
        layers = [conv(rng, c, 2, 2), AvgPool2D(2), ReLU(), Flatten(), dense(rng, 2 * side * side, num_classes)]
    return Network(layers, input_shape, num_classes)


def kink_margin(network: Network, x: np.ndarray) -> float:
    """Distance of the forward pass from the nearest ReLU or max-pool switching point."""
    margin = np.inf
    out = x
    for layer in network.layers:
        if isinstance(layer, ReLU):
            margin = min(margin, float(np.abs(out).min()))
        elif isinstance(layer, MaxPool2D):
            k, s = layer.size, layer.stride
            windows = sliding_window_view(out, (k, k), axis=(2, 3))[:, :, ::s, ::s]
            ranked = np.sort(windows.reshape(windows.shape[:4] + (k * k,)), axis=-1)
            gaps = ranked[..., -1] - ranked[..., -2]
            # exact ties only occur between units a preceding ReLU switched off
            gaps = gaps[gaps > 0]
            if gaps.size:
                margin = min(margin, float(gaps.min()))
        out, _ = layer.forward(out)
    return margin


def linear_model(weight, bias=None, input_shape=None, dtype=np.float64) -> Network:
    """Flatten -> Dense with the given (classes, features) weight."""
    weight = np.asarray(weight, dtype=dtype)
    bias = np.zeros(weight.shape[0], dtype=dtype) if bias is None else np.asarray(bias, dtype=dtype)
    input_shape = input_shape or (weight.shape[1],)
    return Network([Flatten(), Dense(weight, bias)], input_shape, weight.shape[0])


def constant_model(predicted_class, num_classes, input_shape=(3, 4, 4), dtype=np.float64) -> Network:
    """Predicts ``predicted_class`` for every input."""
    features = int(np.prod(input_shape))
    bias = np.zeros(num_classes, dtype=dtype)
    bias[predicted_class] = 1.0
    return linear_model(np.zeros((num_classes, features)), bias, input_shape, dtype)


def small_cnn(seed=0, input_shape=(3, 8, 8), num_classes=10, dtype=np.float32) -> Network:
    return reference_cnn(input_shape, num_classes, seed=seed, widths=(4, 8, 16), dtype=dtype)


def random_linear(seed=0, input_shape=(3, 4, 4), num_classes=2, dtype=np.float64) -> Network:
    return linear_classifier(input_shape, num_classes, seed=seed, dtype=dtype)


def dataset_from(images, labels, class_names=None) -> Dataset:
    return Dataset(np.asarray(images), np.asarray(labels, dtype=np.int64), class_names, "test")
