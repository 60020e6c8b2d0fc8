from typing import Any, Dict, Tuple, Type

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import ConfigurationError, ShapeMismatchError
from .layer_interface import Layer, Shape


def _windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(N, C, H, W) -> (N, C, Ho, Wo, kh, kw) strided view of the sliding windows."""
    return sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def _spatial_out(size: int, kernel: int, stride: int, padding: int = 0) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _tap(offset: int, count: int, stride: int) -> slice:
    # positions covered by kernel offset ``offset`` across ``count`` outputs
    return slice(offset, offset + stride * (count - 1) + 1, stride)


def _require_image(layer: Layer, input_shape: Shape) -> Tuple[int, int, int]:
    if len(input_shape) != 3:
        raise ShapeMismatchError(f"{layer.kind} expects (channels, height, width) input", actual=input_shape)
    return input_shape


class Dense(Layer):
    """Fully connected layer ``y = x W^T + b``; trailing input axes are flattened."""

    kind = "Dense"
    trainable = ("weight", "bias")

    def __init__(self, weight, bias):
        super().__init__({"weight": weight, "bias": bias})
        w, b = self.params["weight"], self.params["bias"]
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ShapeMismatchError("Dense weight must be (out, in) with bias (out,)",
                                     expected=(w.shape[0],) if w.ndim == 2 else None, actual=b.shape)

    def output_shape(self, input_shape: Shape) -> Shape:
        features = int(np.prod(input_shape))
        if features != self.params["weight"].shape[1]:
            raise ShapeMismatchError("Dense input features do not match weight",
                                     expected=(self.params["weight"].shape[1],), actual=input_shape)
        return (self.params["weight"].shape[0],)

    def forward(self, x):
        flat = x.reshape(x.shape[0], -1)
        return flat @ self.params["weight"].T + self.params["bias"], (x.shape, flat)

    def backward(self, grad_out, cache):
        shape, flat = cache
        grads = {"weight": grad_out.T @ flat, "bias": grad_out.sum(axis=0)}
        return (grad_out @ self.params["weight"]).reshape(shape), grads


class Conv2D(Layer):
    """2-D cross-correlation with zero padding; weight is (out, in, kh, kw)."""

    kind = "Conv2D"
    trainable = ("weight", "bias")

    def __init__(self, weight, bias, stride: int = 1, padding: int = 0):
        super().__init__({"weight": weight, "bias": bias})
        if stride < 1 or padding < 0:
            raise ConfigurationError(f"Conv2D needs stride >= 1 and padding >= 0, got {stride}/{padding}")
        self.stride = int(stride)
        self.padding = int(padding)
        w, b = self.params["weight"], self.params["bias"]
        if w.ndim != 4 or b.shape != (w.shape[0],):
            raise ShapeMismatchError("Conv2D weight must be (out, in, kh, kw) with bias (out,)", actual=w.shape)

    def hyperparameters(self) -> Dict[str, Any]:
        return {"stride": self.stride, "padding": self.padding}

    def output_shape(self, input_shape: Shape) -> Shape:
        c, h, w = _require_image(self, input_shape)
        out_c, in_c, kh, kw = self.params["weight"].shape
        if c != in_c:
            raise ShapeMismatchError("Conv2D input channels do not match weight", expected=(in_c, h, w), actual=input_shape)
        ho = _spatial_out(h, kh, self.stride, self.padding)
        wo = _spatial_out(w, kw, self.stride, self.padding)
        if ho < 1 or wo < 1:
            raise ShapeMismatchError("Conv2D kernel larger than padded input", actual=input_shape)
        return (out_c, ho, wo)

    def forward(self, x):
        p = self.padding
        padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        _, _, kh, kw = self.params["weight"].shape
        windows = _windows(padded, kh, kw, self.stride)
        out = np.tensordot(windows, self.params["weight"], axes=([1, 4, 5], [1, 2, 3]))
        out = np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + self.params["bias"][None, :, None, None]
        return out, (x.shape, windows)

    def backward(self, grad_out, cache):
        shape, windows = cache
        weight = self.params["weight"]
        _, _, kh, kw = weight.shape
        n, _, ho, wo = grad_out.shape
        p, s = self.padding, self.stride
        grads = {
            "weight": np.tensordot(grad_out, windows, axes=([0, 2, 3], [0, 2, 3])),
            "bias": grad_out.sum(axis=(0, 2, 3)),
        }
        grad_padded = np.zeros((n, shape[1], shape[2] + 2 * p, shape[3] + 2 * p), dtype=grad_out.dtype)
        for i in range(kh):
            for j in range(kw):
                contribution = np.tensordot(grad_out, weight[:, :, i, j], axes=([1], [0]))
                grad_padded[:, :, _tap(i, ho, s), _tap(j, wo, s)] += contribution.transpose(0, 3, 1, 2)
        grad_in = grad_padded[:, :, p:p + shape[2], p:p + shape[3]] if p else grad_padded
        return grad_in, grads


class ReLU(Layer):
    kind = "ReLU"

    def output_shape(self, input_shape: Shape) -> Shape:
        return tuple(input_shape)

    def forward(self, x):
        return np.maximum(x, 0), x > 0

    def backward(self, grad_out, cache):
        # subgradient at exactly 0 is 0
        return grad_out * cache, {}


class _Pool2D(Layer):
    def __init__(self, size: int = 2, stride: int = None):
        super().__init__()
        self.size = int(size)
        self.stride = int(stride) if stride is not None else self.size
        if self.size < 1 or self.stride < 1:
            raise ConfigurationError(f"{self.kind} needs size and stride >= 1")

    def hyperparameters(self) -> Dict[str, Any]:
        return {"size": self.size, "stride": self.stride}

    def output_shape(self, input_shape: Shape) -> Shape:
        c, h, w = _require_image(self, input_shape)
        ho, wo = _spatial_out(h, self.size, self.stride), _spatial_out(w, self.size, self.stride)
        if ho < 1 or wo < 1:
            raise ShapeMismatchError(f"{self.kind} window larger than input", actual=input_shape)
        return (c, ho, wo)


class MaxPool2D(_Pool2D):
    kind = "MaxPool2D"

    def forward(self, x):
        k = self.size
        windows = _windows(x, k, k, self.stride)
        n, c, ho, wo = windows.shape[:4]
        flat = windows.reshape(n, c, ho, wo, k * k)
        # argmax picks the first maximal element, which fixes the subgradient on ties
        winner = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, winner[..., None], axis=-1)[..., 0]
        return out, (x.shape, winner)

    def backward(self, grad_out, cache):
        shape, winner = cache
        k, s = self.size, self.stride
        _, _, ho, wo = grad_out.shape
        grad_in = np.zeros(shape, dtype=grad_out.dtype)
        for position in range(k * k):
            i, j = divmod(position, k)
            grad_in[:, :, _tap(i, ho, s), _tap(j, wo, s)] += np.where(winner == position, grad_out, 0)
        return grad_in, {}


class AvgPool2D(_Pool2D):
    kind = "AvgPool2D"

    def forward(self, x):
        windows = _windows(x, self.size, self.size, self.stride)
        return windows.mean(axis=(-2, -1)), x.shape

    def backward(self, grad_out, cache):
        k, s = self.size, self.stride
        _, _, ho, wo = grad_out.shape
        share = grad_out / (k * k)
        grad_in = np.zeros(cache, dtype=grad_out.dtype)
        for i in range(k):
            for j in range(k):
                grad_in[:, :, _tap(i, ho, s), _tap(j, wo, s)] += share
        return grad_in, {}


class BatchNormInference(Layer):
    """
    Batch normalization with frozen running statistics.

    Normalizes along axis 1 (channels for images, features for vectors).
    ``gamma`` and ``beta`` are trainable; the running statistics never
    receive gradients.
    """

    kind = "BatchNormInference"
    trainable = ("gamma", "beta")

    def __init__(self, gamma, beta, running_mean, running_var, eps: float = 1e-5):
        super().__init__({"gamma": gamma, "beta": beta, "running_mean": running_mean, "running_var": running_var})
        self.eps = float(eps)
        shapes = {name: value.shape for name, value in self.params.items()}
        if len(set(shapes.values())) != 1 or self.params["gamma"].ndim != 1:
            raise ShapeMismatchError(f"BatchNormInference parameters must share one 1-D shape, got {shapes}")
        if np.any(self.params["running_var"] <= 0):
            raise ConfigurationError("BatchNormInference running_var entries must be strictly positive")

    def hyperparameters(self) -> Dict[str, Any]:
        return {"eps": self.eps}

    def output_shape(self, input_shape: Shape) -> Shape:
        channels = self.params["gamma"].shape[0]
        if not input_shape or input_shape[0] != channels:
            raise ShapeMismatchError("BatchNormInference channel count mismatch",
                                     expected=(channels,), actual=input_shape)
        return tuple(input_shape)

    def _broadcast(self, value: np.ndarray, ndim: int) -> np.ndarray:
        return value.reshape((1, -1) + (1,) * (ndim - 2))

    def forward(self, x):
        ndim = x.ndim
        inv_std = 1.0 / np.sqrt(self.params["running_var"] + self.eps)
        normalized = (x - self._broadcast(self.params["running_mean"], ndim)) * self._broadcast(inv_std, ndim)
        out = normalized * self._broadcast(self.params["gamma"], ndim) + self._broadcast(self.params["beta"], ndim)
        return out, normalized

    def backward(self, grad_out, cache):
        ndim = grad_out.ndim
        axes = tuple(a for a in range(ndim) if a != 1)
        inv_std = 1.0 / np.sqrt(self.params["running_var"] + self.eps)
        grads = {"gamma": (grad_out * cache).sum(axis=axes), "beta": grad_out.sum(axis=axes)}
        scale = self._broadcast(self.params["gamma"] * inv_std, ndim)
        return grad_out * scale, grads


class Flatten(Layer):
    kind = "Flatten"

    def output_shape(self, input_shape: Shape) -> Shape:
        return (int(np.prod(input_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad_out, cache):
        return grad_out.reshape(cache), {}


LAYER_KINDS: Dict[str, Type[Layer]] = {
    cls.kind: cls for cls in (Conv2D, Dense, ReLU, MaxPool2D, AvgPool2D, BatchNormInference, Flatten)
}


def build_layer(kind: str, params: Dict[str, np.ndarray] = None, hyperparameters: Dict[str, Any] = None) -> Layer:
    """Factory used by the model file loader to rebuild a layer from its description."""
    try:
        cls = LAYER_KINDS[kind]
    except KeyError:
        raise ConfigurationError(f"Unknown layer kind {kind!r}; expected one of {sorted(LAYER_KINDS)}") from None
    return cls(**(params or {}), **(hyperparameters or {}))
