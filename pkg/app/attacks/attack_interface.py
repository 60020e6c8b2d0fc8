from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from ..models import AttackSpace, Norm, ThreatModel
from ..network import Network, loss_and_input_gradient, per_sample_cross_entropy
from ..preprocessing import PreprocessTransform


@dataclass(frozen=True)
class AttackResult:
    adversarial: np.ndarray
    predictions: np.ndarray
    # prediction differs from the label (untargeted success)
    success: np.ndarray
    loss: np.ndarray
    perturbation_norm: np.ndarray
    # (steps + 1, batch): loss before every step plus the final loss
    loss_history: Optional[np.ndarray] = None


def per_sample_norm(delta: np.ndarray, norm: Norm) -> np.ndarray:
    flat = np.asarray(delta, dtype=np.float64).reshape(delta.shape[0], -1)
    if Norm(norm) is Norm.LINF:
        return np.abs(flat).max(axis=1) if flat.shape[1] else np.zeros(flat.shape[0])
    return np.sqrt((flat ** 2).sum(axis=1))


class AttackTarget:
    """
    What the attacker differentiates: a network, its pre-processing and the
    space in which the perturbation is measured.

    In input space the attacker perturbs pixels in [0, 1] and the transform is
    part of the model call. In network space the attacker perturbs the
    transformed representation directly and the valid range is the image of
    [0, 1] under the transform.
    """

    def __init__(self, network: Network, transform: Optional[PreprocessTransform] = None,
                 space: AttackSpace = AttackSpace.INPUT):
        self.network = network
        self.transform = transform or PreprocessTransform.identity()
        # identity pre-processing makes both spaces coincide
        self.space = AttackSpace.INPUT if self.transform.is_identity else AttackSpace(space)
        self._bounds: Dict[np.dtype, Tuple[np.ndarray, np.ndarray]] = {}

    def to_attack_space(self, images: np.ndarray) -> np.ndarray:
        """Map clean [0, 1] images into the space the attack perturbs."""
        images = np.asarray(images, dtype=self.network.dtype)
        return images if self.space is AttackSpace.INPUT else self.transform.apply(images)

    def to_pixel_space(self, x: np.ndarray) -> np.ndarray:
        return x if self.space is AttackSpace.INPUT else self.transform.invert(x)

    def _network_input(self, x: np.ndarray) -> np.ndarray:
        return self.transform.apply(x) if self.space is AttackSpace.INPUT else x

    def bounds(self, dtype) -> Tuple[np.ndarray, np.ndarray]:
        dtype = np.dtype(dtype)
        if dtype not in self._bounds:
            shape = (1,) + self.network.input_shape
            if self.space is AttackSpace.INPUT:
                lower, upper = np.zeros(shape, dtype=dtype), np.ones(shape, dtype=dtype)
            else:
                lower, upper = self.transform.valid_range(self.network.input_shape, dtype=dtype)
            self._bounds[dtype] = (lower, upper)
        return self._bounds[dtype]

    def clip(self, x: np.ndarray) -> np.ndarray:
        lower, upper = self.bounds(x.dtype)
        return np.clip(x, lower, upper)

    def loss_and_gradient(self, x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        scale = self.transform.gradient_scale(x.dtype) if self.space is AttackSpace.INPUT else None
        losses, logits, grad = loss_and_input_gradient(self.network, self._network_input(x), y, input_scale=scale)
        return losses, logits, grad.astype(x.dtype, copy=False)

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.network._forward(self._network_input(x))[0]

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.logits(x).argmax(axis=1)

    def losses(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return per_sample_cross_entropy(self.logits(x), y)


class Attack(ABC):
    """A white-box untargeted attack bound to a preset configuration."""

    name: str = ""

    @abstractmethod
    def run(self, target: AttackTarget, x: np.ndarray, y: np.ndarray, tm: ThreatModel, *,
            seed: int = 0, sample_ids: Optional[np.ndarray] = None, restart: int = 0) -> AttackResult:
        """
        Attack a batch.

        ``sample_ids`` are the global dataset indices of the batch rows; random
        initializations derive their seed from (seed, sample_id, restart) so
        results do not depend on how the dataset is split into batches.
        """
