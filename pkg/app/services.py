import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .attacks import AttackTarget, get_attack
from .config import get_worker_count
from .datasets import Dataset
from .exceptions import AttackError, EmptyDatasetError, EvaluationError, LabelRangeError, ShapeMismatchError
from .models import AttackSpace, EvalConfig, EvalReport
from .network import Network, predict
from .preprocessing import PreprocessTransform, quantize_round_even

logger = logging.getLogger(__name__)


def confusion_matrix(truths: Sequence[int], predictions: Sequence[int], num_classes: int) -> np.ndarray:
    """Counts with rows = true class and columns = predicted class."""
    truths, predictions = np.asarray(truths, dtype=np.int64), np.asarray(predictions, dtype=np.int64)
    if truths.shape != predictions.shape or truths.ndim != 1:
        raise ShapeMismatchError("truths and predictions must be equal-length vectors",
                                 expected=truths.shape, actual=predictions.shape)
    for name, values in (("truths", truths), ("predictions", predictions)):
        if values.size and (values.min() < 0 or values.max() >= num_classes):
            raise LabelRangeError(f"{name} must lie in [0, {num_classes})")
    counts = np.bincount(truths * num_classes + predictions, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def misclassification_spread(confusion: np.ndarray) -> List[Optional[float]]:
    """
    Per true class, the entropy of its off-diagonal row normalized by
    ln(num_classes - 1): 0 when all errors go to one class, 1 when they are
    uniform over the other classes. Classes without errors report None.
    """
    confusion = np.asarray(confusion, dtype=np.float64)
    classes = confusion.shape[0]
    spread: List[Optional[float]] = []
    for row in range(classes):
        errors = np.delete(confusion[row], row)
        total = errors.sum()
        if total == 0:
            spread.append(None)
            continue
        if classes <= 2:
            # a single receiving class: errors cannot spread
            spread.append(0.0)
            continue
        p = errors[errors > 0] / total
        entropy = float(-(p * np.log(p)).sum())
        spread.append(entropy / math.log(classes - 1))
    return spread


def prediction_sinks(confusion: np.ndarray, top_k: int = 2) -> Tuple[List[float], List[int]]:
    """
    Share of all misclassifications received by each predicted class, and the
    ``top_k`` classes receiving the most (lowest index first on ties).
    """
    confusion = np.asarray(confusion, dtype=np.float64)
    received = confusion.sum(axis=0) - np.diag(confusion)
    total = received.sum()
    shares = received / total if total else np.zeros_like(received)
    order = sorted(range(len(received)), key=lambda c: (-received[c], c))
    return shares.tolist(), [c for c in order[:top_k] if received[c] > 0]


class EvaluationService:
    """Runs the robustness evaluation protocol against one model."""

    def __init__(self, network: Network, transform: Optional[PreprocessTransform] = None,
                 model_name: str = "model", workers: Optional[int] = None, progress: bool = False):
        self.network = network
        self.transform = transform or PreprocessTransform.identity()
        self.model_name = model_name
        self.workers = workers or get_worker_count()
        self.progress = progress

    def _images(self, dataset: Dataset) -> np.ndarray:
        if len(dataset) == 0:
            raise EmptyDatasetError("cannot evaluate on an empty dataset")
        return np.asarray(dataset.images, dtype=self.network.dtype)

    def clean_predictions(self, dataset: Dataset, batch_size: int = 256) -> np.ndarray:
        """
        Predictions on unmodified inputs, with the model's pre-processing applied.

        Args:
            dataset: Images in [0, 1] and their labels
            batch_size: Samples per forward pass

        Returns:
            np.ndarray: One predicted class per sample
        """
        images = self._images(dataset)
        return np.concatenate([
            predict(self.network, self.transform.apply(images[start:start + batch_size]))
            for start in range(0, len(images), batch_size)
        ])

    def clean_accuracy(self, dataset: Dataset, batch_size: int = 256) -> float:
        return float((self.clean_predictions(dataset, batch_size) == dataset.labels).mean())

    def robust_accuracy(self, dataset: Dataset, config: EvalConfig, label: Optional[str] = None) -> EvalReport:
        """
        Accuracy over the full dataset after attacking every initially-correct sample.

        Misclassified clean samples are never attacked and count as successes
        with their clean prediction. In input space the attack perturbs pixels
        and the pre-processing runs inside the model call; in network space the
        pre-processing runs first and the attack perturbs its output. With
        ``post_quantize`` the adversarial pixels are rounded to the 8-bit grid
        before the final prediction.

        Args:
            dataset: Test images in [0, 1] and labels
            config: Threat model, preset, seed and batch size
            label: Row label for comparison tables (defaults to the preset name)

        Returns:
            EvalReport: Accuracies, confusion matrix and misclassification analysis
        """
        started = time.perf_counter()
        images = self._images(dataset)
        labels = np.asarray(dataset.labels, dtype=np.int64)
        num_classes = self.network.num_classes

        clean = self.clean_predictions(dataset, config.batch_size)
        correct = clean == labels
        final = clean.copy()

        tm = config.threat
        target = AttackTarget(self.network, self.transform, tm.space)
        if target.space is not tm.space:
            logger.warning("%s: identity pre-processing, %s space coincides with input space; reporting input space",
                           self.model_name, tm.space.value)
            config = config.model_copy(update={"threat": tm.model_copy(update={"space": target.space})})
        attack = get_attack(config.attack_preset, tm)
        attacked = np.flatnonzero(correct)
        batches = [attacked[start:start + config.batch_size] for start in range(0, len(attacked), config.batch_size)]
        logger.info("%s / %s: attacking %d of %d samples (%s space, %d workers)", self.model_name,
                    config.attack_preset, len(attacked), len(labels), target.space.value, self.workers)

        def run_batch(index: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
            x = target.to_attack_space(images[index])
            try:
                result = attack.run(target, x, labels[index], tm, seed=config.seed, sample_ids=index)
            except AttackError as exc:
                raise EvaluationError(f"attack failed in batch starting here: {exc}",
                                      sample_index=int(index[0])) from exc
            adversarial, predictions = result.adversarial, result.predictions
            if config.post_quantize and target.space is AttackSpace.INPUT:
                adversarial = quantize_round_even(adversarial)
                predictions = target.predict(adversarial)
            # a sample left exactly at its clean input keeps its clean prediction
            unchanged = np.all((adversarial == x).reshape(len(index), -1), axis=1)
            return index, np.where(unchanged, clean[index], predictions)

        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            results = pool.map(run_batch, batches)
            for index, predictions in tqdm(results, total=len(batches), desc=config.attack_preset,
                                           disable=not self.progress):
                final[index] = predictions

        confusion = confusion_matrix(labels, final, num_classes)
        row_totals = confusion.sum(axis=1)
        per_class = [float(confusion[c, c] / row_totals[c]) if row_totals[c] else None for c in range(num_classes)]
        flipped = int((correct & (final != labels)).sum())
        shares, top = prediction_sinks(confusion)
        report = EvalReport(
            model_name=self.model_name,
            label=label or config.attack_preset,
            num_samples=len(labels),
            num_attacked=len(attacked),
            clean_accuracy=float(correct.mean()),
            robust_accuracy=float(np.trace(confusion) / len(labels)),
            attack_success_rate=flipped / len(attacked) if len(attacked) else None,
            confusion=confusion.tolist(),
            per_class_robust_accuracy=per_class,
            misclassification_spread=misclassification_spread(confusion),
            prediction_sinks=shares,
            top_sinks=top,
            class_names=dataset.class_names,
            config=config,
            duration_seconds=time.perf_counter() - started,
        )
        logger.info("%s / %s: clean=%.4f robust=%.4f (%.1fs)", self.model_name, report.label,
                    report.clean_accuracy, report.robust_accuracy, report.duration_seconds)
        return report


def clean_accuracy(model: Network, transform: Optional[PreprocessTransform], dataset: Dataset) -> float:
    return EvaluationService(model, transform).clean_accuracy(dataset)


def robust_accuracy(model: Network, transform: Optional[PreprocessTransform], dataset: Dataset,
                    config: EvalConfig) -> EvalReport:
    return EvaluationService(model, transform).robust_accuracy(dataset, config)
