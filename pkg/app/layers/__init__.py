from .layer_interface import Layer
from .layer_implementations import (
    LAYER_KINDS,
    AvgPool2D,
    BatchNormInference,
    Conv2D,
    Dense,
    Flatten,
    MaxPool2D,
    ReLU,
    build_layer,
)
