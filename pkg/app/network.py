from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import LabelRangeError, NonFiniteError, ShapeMismatchError
from .layers import Layer

ParameterGradients = List[Dict[str, np.ndarray]]


class Network:
    """
    Sequential differentiable classifier.

    A network is immutable once built: ``with_parameters`` and ``astype``
    return new instances. Forward and gradient calls keep their intermediate
    state on the stack, so one network can serve concurrent callers.
    """

    def __init__(self, layers: Sequence[Layer], input_shape: Sequence[int], num_classes: int, dtype=None):
        if num_classes < 1:
            raise ValueError(f"num_classes must be positive, got {num_classes}")
        self.layers: Tuple[Layer, ...] = tuple(layers)
        self.input_shape: Tuple[int, ...] = tuple(int(d) for d in input_shape)
        self.num_classes = int(num_classes)
        if dtype is None:
            dtype = next((p.dtype for layer in self.layers for p in layer.params.values()), np.float64)
        self.dtype = np.dtype(dtype)
        self.layer_shapes = self._check_shapes()

    def _check_shapes(self) -> List[Tuple[int, ...]]:
        shapes = [self.input_shape]
        for index, layer in enumerate(self.layers):
            try:
                shapes.append(tuple(layer.output_shape(shapes[-1])))
            except ShapeMismatchError as exc:
                raise ShapeMismatchError(f"{layer.kind}: {exc.message}", layer_index=index,
                                         expected=exc.expected, actual=exc.actual) from exc
        if shapes[-1] != (self.num_classes,):
            raise ShapeMismatchError("network output does not match num_classes",
                                     layer_index=len(self.layers) - 1,
                                     expected=(self.num_classes,), actual=shapes[-1])
        return shapes

    def with_parameters(self, params: ParameterGradients) -> "Network":
        layers = [layer.with_params(p) if p else layer for layer, p in zip(self.layers, params)]
        return Network(layers, self.input_shape, self.num_classes, self.dtype)

    def astype(self, dtype) -> "Network":
        return Network([layer.astype(dtype) for layer in self.layers], self.input_shape, self.num_classes, dtype)

    def parameters(self) -> ParameterGradients:
        return [{name: layer.params[name] for name in layer.trainable} for layer in self.layers]

    def parameter_count(self) -> int:
        return sum(layer.parameter_count() for layer in self.layers)

    def _prepare(self, batch: np.ndarray) -> np.ndarray:
        x = np.asarray(batch, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ShapeMismatchError("input batch does not match network input shape",
                                     layer_index=0, expected=self.input_shape, actual=x.shape[1:])
        return x

    def _forward(self, batch: np.ndarray) -> Tuple[np.ndarray, list]:
        x = self._prepare(batch)
        caches = []
        for index, layer in enumerate(self.layers):
            x, cache = layer.forward(x)
            if not np.all(np.isfinite(x)):
                raise NonFiniteError(index, "forward")
            caches.append(cache)
        return x, caches

    def _backward(self, grad_logits: np.ndarray, caches: list) -> Tuple[np.ndarray, ParameterGradients]:
        grad = grad_logits
        param_grads: ParameterGradients = [{} for _ in self.layers]
        for index in range(len(self.layers) - 1, -1, -1):
            grad, param_grads[index] = self.layers[index].backward(grad, caches[index])
            if not np.all(np.isfinite(grad)):
                raise NonFiniteError(index, "backward")
        return grad, param_grads

    def __repr__(self) -> str:
        return f"Network(input_shape={self.input_shape}, num_classes={self.num_classes}, layers={list(self.layers)})"


def _check_labels(labels: np.ndarray, batch_size: int, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (batch_size,):
        raise ShapeMismatchError("one label per batch element required", expected=(batch_size,), actual=labels.shape)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelRangeError(f"labels must lie in [0, {num_classes}), got range [{labels.min()}, {labels.max()}]")
    return labels.astype(np.int64)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def per_sample_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """-log softmax(logits)[label] for every row, stabilized by max-subtraction."""
    labels = _check_labels(labels, logits.shape[0], logits.shape[1])
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    return log_norm - shifted[np.arange(len(labels)), labels]


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy over the batch."""
    return float(per_sample_cross_entropy(np.asarray(logits), labels).mean())


def _loss_gradient(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    grad = softmax(logits)
    grad[np.arange(len(labels)), labels] -= 1
    return grad


def forward(network: Network, batch: np.ndarray) -> np.ndarray:
    """Pre-softmax logits, shape (batch, num_classes)."""
    return network._forward(batch)[0]


def predict(network: Network, batch: np.ndarray) -> np.ndarray:
    """Arg-max class per sample; ties resolve to the lowest class index."""
    return forward(network, batch).argmax(axis=1)


def loss_and_input_gradient(network: Network, batch: np.ndarray, labels: np.ndarray,
                            input_scale: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Per-sample losses, logits and the input gradient in one pass.

    The gradient is taken of the *sum* of per-sample losses, so the gradient
    of sample i depends only on sample i. ``input_scale`` multiplies the
    result (chain rule through a diagonal affine pre-processing step).
    """
    logits, caches = network._forward(batch)
    labels = _check_labels(labels, logits.shape[0], network.num_classes)
    losses = per_sample_cross_entropy(logits, labels)
    grad, _ = network._backward(_loss_gradient(logits, labels), caches)
    if input_scale is not None:
        grad = grad * input_scale
    return losses, logits, grad


def input_gradient(network: Network, batch: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return loss_and_input_gradient(network, batch, labels)[2]


def loss_and_parameter_gradients(network: Network, batch: np.ndarray,
                                 labels: np.ndarray) -> Tuple[float, ParameterGradients]:
    """
    Mean loss and the gradients of every trainable parameter.

    Returns one dict per layer; frozen parameters (batch-norm running
    statistics) and parameter-free layers have no entries.
    """
    logits, caches = network._forward(batch)
    labels = _check_labels(labels, logits.shape[0], network.num_classes)
    loss = float(per_sample_cross_entropy(logits, labels).mean())
    grad_logits = _loss_gradient(logits, labels) / logits.shape[0]
    _, grads = network._backward(grad_logits, caches)
    return loss, grads


def parameter_gradients(network: Network, batch: np.ndarray, labels: np.ndarray) -> ParameterGradients:
    return loss_and_parameter_gradients(network, batch, labels)[1]
