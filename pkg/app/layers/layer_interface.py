from abc import ABC, abstractmethod
from typing import Any, Dict, Optional, Tuple

import numpy as np

Shape = Tuple[int, ...]


class Layer(ABC):
    """
    A differentiable, immutable network layer.

    Parameters are stored read-only; training produces new layers through
    ``with_params`` instead of mutating existing ones, so a constructed layer
    can be shared between concurrent forward/backward calls.
    """

    kind: str = ""
    # Parameter names that receive gradients; everything else is frozen.
    trainable: Tuple[str, ...] = ()

    def __init__(self, params: Optional[Dict[str, np.ndarray]] = None):
        self.params: Dict[str, np.ndarray] = {}
        for name, value in (params or {}).items():
            array = np.array(value, copy=True)
            array.setflags(write=False)
            self.params[name] = array

    def hyperparameters(self) -> Dict[str, Any]:
        return {}

    @abstractmethod
    def output_shape(self, input_shape: Shape) -> Shape:
        """Validate ``input_shape`` (batch axis excluded) against the parameters and return the output shape."""

    @abstractmethod
    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        """Return the layer output and the cache needed by ``backward``."""

    @abstractmethod
    def backward(self, grad_out: np.ndarray, cache: Any) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        """Return the gradient w.r.t. the layer input and the gradients of the trainable parameters."""

    def with_params(self, params: Dict[str, np.ndarray]) -> "Layer":
        merged = {**self.params, **params}
        return type(self)(**merged, **self.hyperparameters())

    def astype(self, dtype) -> "Layer":
        return self.with_params({name: value.astype(dtype) for name, value in self.params.items()})

    def parameter_count(self) -> int:
        return int(sum(self.params[name].size for name in self.trainable))

    def __repr__(self) -> str:
        hyper = ", ".join(f"{k}={v}" for k, v in self.hyperparameters().items())
        shapes = ", ".join(f"{k}{tuple(v.shape)}" for k, v in self.params.items())
        return f"{type(self).__name__}({', '.join(p for p in (shapes, hyper) if p)})"
