import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from .exceptions import ConfigurationError, ShapeMismatchError

logger = logging.getLogger(__name__)

PIXEL_LEVELS = 255


class TransformKind(str, Enum):
    IDENTITY = "identity"
    MEAN_PIXEL_SUBTRACT = "mean_pixel_subtract"
    PER_CHANNEL_NORMALIZE = "per_channel_normalize"


@dataclass(frozen=True, eq=False)
class PreprocessTransform:
    """
    Model-specific affine input transform applied before the first layer.

    - identity: no parameters.
    - mean_pixel_subtract: ``mean`` holds one value per channel and location (C, H, W).
    - per_channel_normalize: ``mean`` and ``std`` hold one value per channel (C,).
    """

    kind: TransformKind = TransformKind.IDENTITY
    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None
    _channels: int = field(default=0, repr=False)

    def __post_init__(self):
        kind = TransformKind(self.kind)
        object.__setattr__(self, "kind", kind)
        mean = None if self.mean is None else np.array(self.mean, dtype=np.float64)
        std = None if self.std is None else np.array(self.std, dtype=np.float64)
        if kind is TransformKind.IDENTITY:
            if mean is not None or std is not None:
                raise ConfigurationError("identity transform carries no parameters")
        elif kind is TransformKind.MEAN_PIXEL_SUBTRACT:
            if mean is None or mean.ndim != 3 or std is not None:
                raise ConfigurationError("mean_pixel_subtract needs a (C, H, W) mean and no std")
        else:
            if mean is None or std is None or mean.ndim != 1 or mean.shape != std.shape:
                raise ConfigurationError("per_channel_normalize needs per-channel mean and std of equal length")
            if np.any(std <= 0):
                raise ConfigurationError("per_channel_normalize std entries must be strictly positive")
        for array in (mean, std):
            if array is not None:
                array.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        object.__setattr__(self, "_channels", 0 if mean is None else int(mean.shape[0]))

    @classmethod
    def identity(cls) -> "PreprocessTransform":
        return cls(TransformKind.IDENTITY)

    @classmethod
    def mean_pixel_subtract(cls, mean) -> "PreprocessTransform":
        return cls(TransformKind.MEAN_PIXEL_SUBTRACT, mean=mean)

    @classmethod
    def per_channel_normalize(cls, mean: Sequence[float], std: Sequence[float]) -> "PreprocessTransform":
        return cls(TransformKind.PER_CHANNEL_NORMALIZE, mean=mean, std=std)

    @property
    def is_identity(self) -> bool:
        return self.kind is TransformKind.IDENTITY

    def _check(self, x: np.ndarray) -> None:
        if self.is_identity:
            return
        if x.ndim != 4 or x.shape[1] != self._channels:
            raise ShapeMismatchError(f"{self.kind.value} transform expects (N, {self._channels}, H, W) input",
                                     actual=x.shape)
        if self.kind is TransformKind.MEAN_PIXEL_SUBTRACT and x.shape[1:] != self.mean.shape:
            raise ShapeMismatchError("mean image does not match input", expected=self.mean.shape, actual=x.shape[1:])

    def _channel_view(self, values: np.ndarray, dtype) -> np.ndarray:
        return values.astype(dtype).reshape(1, -1, 1, 1)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        self._check(x)
        if self.kind is TransformKind.IDENTITY:
            return x
        if self.kind is TransformKind.MEAN_PIXEL_SUBTRACT:
            return x - self.mean.astype(x.dtype)[None]
        return (x - self._channel_view(self.mean, x.dtype)) / self._channel_view(self.std, x.dtype)

    def invert(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z)
        self._check(z)
        if self.kind is TransformKind.IDENTITY:
            return z
        if self.kind is TransformKind.MEAN_PIXEL_SUBTRACT:
            return z + self.mean.astype(z.dtype)[None]
        return z * self._channel_view(self.std, z.dtype) + self._channel_view(self.mean, z.dtype)

    def amplification_factor(self, channels: Optional[int] = None) -> np.ndarray:
        """Per-channel scale that ``apply`` gives to an input-space perturbation."""
        channels = self._channels or channels or 3
        if self.kind is TransformKind.PER_CHANNEL_NORMALIZE:
            return 1.0 / self.std
        return np.ones(channels)

    def gradient_scale(self, dtype=np.float64) -> Optional[np.ndarray]:
        """d apply(x) / dx broadcastable to (N, C, H, W); None when it is one everywhere."""
        if self.kind is not TransformKind.PER_CHANNEL_NORMALIZE:
            return None
        return self._channel_view(1.0 / self.std, dtype)

    def valid_range(self, input_shape: Tuple[int, ...], dtype=np.float64) -> Tuple[np.ndarray, np.ndarray]:
        """Lower and upper network-space images of the pixel range [0, 1], shape (1, *input_shape)."""
        lower = self.apply(np.zeros((1,) + tuple(input_shape), dtype=dtype))
        upper = self.apply(np.ones((1,) + tuple(input_shape), dtype=dtype))
        return lower, upper

    def describe(self) -> dict:
        summary = {"kind": self.kind.value}
        if self.kind is TransformKind.PER_CHANNEL_NORMALIZE:
            summary["mean"] = self.mean.tolist()
            summary["std"] = self.std.tolist()
            summary["amplification_factor"] = self.amplification_factor().tolist()
        elif self.kind is TransformKind.MEAN_PIXEL_SUBTRACT:
            summary["mean_shape"] = list(self.mean.shape)
        return summary


def apply(t: PreprocessTransform, x: np.ndarray) -> np.ndarray:
    return t.apply(x)


def invert(t: PreprocessTransform, z: np.ndarray) -> np.ndarray:
    return t.invert(z)


def amplification_factor(t: PreprocessTransform, channels: Optional[int] = None) -> np.ndarray:
    return t.amplification_factor(channels)


def fit_transform(kind: TransformKind, images: np.ndarray) -> PreprocessTransform:
    """
    Estimate transform statistics from a training set in [0, 1].

    mean_pixel_subtract uses the mean pixel per location and channel;
    per_channel_normalize uses the per-channel mean and standard deviation.
    """
    kind = TransformKind(kind)
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[0] == 0:
        raise ShapeMismatchError("fit_transform expects a non-empty (N, C, H, W) image batch", actual=images.shape)
    if kind is TransformKind.IDENTITY:
        return PreprocessTransform.identity()
    if kind is TransformKind.MEAN_PIXEL_SUBTRACT:
        return PreprocessTransform.mean_pixel_subtract(images.mean(axis=0))
    std = images.std(axis=(0, 2, 3))
    if np.any(std <= 0):
        raise ConfigurationError("cannot standardize a channel with zero variance")
    logger.info("Fitted per-channel statistics: mean=%s std=%s", images.mean(axis=(0, 2, 3)), std)
    return PreprocessTransform.per_channel_normalize(images.mean(axis=(0, 2, 3)), std)


def quantize_round_even(x: np.ndarray) -> np.ndarray:
    """
    Map pixels to the 8-bit grid: ``round_half_to_even(v * 255) / 255``.

    Only defined on the valid pixel range [0, 1].
    """
    x = np.asarray(x)
    if x.size and (np.min(x) < 0 or np.max(x) > 1):
        raise ConfigurationError(f"quantization needs values in [0, 1], got [{np.min(x)}, {np.max(x)}]")
    # np.rint rounds half to even
    return (np.rint(x * PIXEL_LEVELS) / PIXEL_LEVELS).astype(x.dtype, copy=False)
