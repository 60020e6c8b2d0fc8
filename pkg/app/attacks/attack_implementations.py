import logging
from typing import Callable, Optional, Sequence, Union

import numpy as np

from ..exceptions import AttackError, ConfigurationError, NonFiniteError
from ..models import Norm, ThreatModel
from .attack_interface import Attack, AttackResult, AttackTarget, per_sample_norm
from .presets import Algorithm, AttackPreset, resolve_preset

logger = logging.getLogger(__name__)

InitFn = Callable[..., np.ndarray]
AttackFn = Callable[..., AttackResult]


def _per_sample(values: np.ndarray, ndim: int) -> np.ndarray:
    return values.reshape((-1,) + (1,) * (ndim - 1))


def clip_linf(delta: np.ndarray, epsilon: float) -> np.ndarray:
    """Coordinate-wise clamp of the perturbation to [-epsilon, epsilon]."""
    return np.clip(delta, -epsilon, epsilon)


def project_l2(delta: np.ndarray, epsilon: float) -> np.ndarray:
    """Per-sample radial projection onto the L2 ball of radius epsilon (axis 0 is the batch)."""
    delta = np.asarray(delta)
    norms = per_sample_norm(delta, Norm.L2)
    factor = np.ones_like(norms)
    outside = norms > epsilon
    factor[outside] = epsilon / norms[outside]
    return (delta * _per_sample(factor, delta.ndim)).astype(delta.dtype, copy=False)


def _project(delta: np.ndarray, tm: ThreatModel) -> np.ndarray:
    return clip_linf(delta, tm.epsilon) if tm.norm is Norm.LINF else project_l2(delta, tm.epsilon)


def _ascent_direction(grad: np.ndarray, norm: Norm) -> np.ndarray:
    if norm is Norm.LINF:
        # sign(0) = 0
        return np.sign(grad)
    norms = per_sample_norm(grad, Norm.L2)
    # zero-gradient samples keep a zero direction
    inverse = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    return (grad * _per_sample(inverse, grad.ndim)).astype(grad.dtype, copy=False)


def zero_init(shape, tm: ThreatModel, seed: int, sample_ids: np.ndarray, restart: int, dtype) -> np.ndarray:
    return np.zeros(shape, dtype=dtype)


def uniform_ball_init(shape, tm: ThreatModel, seed: int, sample_ids: np.ndarray, restart: int, dtype) -> np.ndarray:
    """
    Random start inside the budget ball.

    L-inf: uniform per coordinate in [-eps, eps]. L2: isotropic direction with
    radius eps * u ** (1 / d), i.e. uniform in the ball. Each row draws from its
    own generator seeded by (seed, sample_id, restart).
    """
    dims = int(np.prod(shape[1:]))
    out = np.empty((shape[0], dims), dtype=np.float64)
    for row, sample_id in enumerate(sample_ids):
        rng = np.random.default_rng([int(seed), int(sample_id), int(restart)])
        if tm.norm is Norm.LINF:
            out[row] = rng.uniform(-tm.epsilon, tm.epsilon, size=dims)
        else:
            direction = rng.standard_normal(dims)
            length = np.linalg.norm(direction)
            direction = direction / length if length > 0 else np.zeros(dims)
            out[row] = direction * (tm.epsilon * rng.uniform() ** (1.0 / dims))
    return out.reshape(shape).astype(dtype)


def _into_budget(target: AttackTarget, x: np.ndarray, candidate: np.ndarray, tm: ThreatModel) -> np.ndarray:
    """
    Project ``candidate - x`` onto the budget and clip to the valid range in
    float64, then cast back to the dtype of ``x``. Coordinates that rounding
    pushes past the budget move one ulp toward x.
    """
    x64 = x.astype(np.float64)
    projected = target.clip(x64 + _project(np.asarray(candidate, dtype=np.float64) - x64, tm))
    x_adv = target.clip(projected.astype(x.dtype))
    if x_adv.dtype == np.float64:
        return x_adv
    # one pass settles L-inf; L2 rows may need a few
    for _ in range(8):
        delta = x_adv.astype(np.float64) - x64
        if tm.norm is Norm.LINF:
            over = np.abs(delta) > tm.epsilon
        else:
            rows = per_sample_norm(delta, Norm.L2) > tm.epsilon
            over = (delta != 0) & _per_sample(rows, delta.ndim)
        if not over.any():
            break
        x_adv[over] = np.nextafter(x_adv[over], x[over])
    return x_adv


def _finish(target: AttackTarget, x: np.ndarray, x_adv: np.ndarray, y: np.ndarray, tm: ThreatModel,
            history: Sequence[np.ndarray]) -> AttackResult:
    losses = target.losses(x_adv, y) if x_adv.shape[0] else np.zeros(0)
    predictions = target.predict(x_adv) if x_adv.shape[0] else np.zeros(0, dtype=np.int64)
    return AttackResult(
        adversarial=x_adv,
        predictions=predictions,
        success=predictions != y,
        loss=losses,
        perturbation_norm=per_sample_norm(x_adv - x, tm.norm),
        loss_history=np.stack(list(history) + [losses]),
    )


def _iterate(target: AttackTarget, x: np.ndarray, y: np.ndarray, tm: ThreatModel, start: np.ndarray,
             iterations: int, alpha: float) -> AttackResult:
    """
    Shared update loop of every attack: step along the ascent direction, project
    the accumulated perturbation onto the budget, clip to the valid range.
    Range clipping moves coordinates toward x, so it never breaks the budget.
    """
    x_adv = target.clip(start)
    history = []
    for iteration in range(iterations):
        try:
            losses, _, grad = target.loss_and_gradient(x_adv, y)
        except NonFiniteError as exc:
            raise AttackError(str(exc), iteration=iteration) from exc
        if not np.all(np.isfinite(grad)):
            raise AttackError("non-finite input gradient", iteration=iteration)
        history.append(losses)
        step = alpha * _ascent_direction(grad, tm.norm).astype(np.float64)
        x_adv = _into_budget(target, x, x_adv.astype(np.float64) + step, tm)
    return _finish(target, x, x_adv, y, tm, history)


def _require(tm: ThreatModel, norm: Norm, name: str) -> None:
    if tm.norm is not norm:
        raise ConfigurationError(f"{name} is defined for the {norm.value} norm, got {tm.norm.value}")


def _as_batch(x, y):
    return np.asarray(x), np.asarray(y)


def fgsm(target: AttackTarget, x: np.ndarray, y: np.ndarray, tm: ThreatModel) -> AttackResult:
    """One signed-gradient step of size epsilon, clipped to the valid range."""
    _require(tm, Norm.LINF, "FGSM")
    x, y = _as_batch(x, y)
    return _iterate(target, x, y, tm, start=x, iterations=1, alpha=tm.epsilon)


def fgm(target: AttackTarget, x: np.ndarray, y: np.ndarray, tm: ThreatModel) -> AttackResult:
    """One L2-normalized gradient step of length epsilon, clipped to the valid range."""
    _require(tm, Norm.L2, "FGM")
    x, y = _as_batch(x, y)
    return _iterate(target, x, y, tm, start=x, iterations=1, alpha=tm.epsilon)


def bim(target: AttackTarget, x: np.ndarray, y: np.ndarray, tm: ThreatModel) -> AttackResult:
    """Basic iterative method: ``tm.iterations`` steps of size ``tm.alpha`` from the clean input."""
    x, y = _as_batch(x, y)
    return _iterate(target, x, y, tm, start=x, iterations=tm.iterations, alpha=tm.alpha)


def _random_start(target: AttackTarget, x: np.ndarray, tm: ThreatModel, seed: int,
                  sample_ids: Optional[np.ndarray], restart: int, init: InitFn) -> np.ndarray:
    sample_ids = np.arange(len(x)) if sample_ids is None else np.asarray(sample_ids)
    delta = init(x.shape, tm, seed, sample_ids, restart, np.float64)
    return _into_budget(target, x, x.astype(np.float64) + delta, tm)


def pgd(target: AttackTarget, x: np.ndarray, y: np.ndarray, tm: ThreatModel, *, seed: int = 0,
        sample_ids: Optional[np.ndarray] = None, restart: int = 0, init: InitFn = uniform_ball_init) -> AttackResult:
    """BIM started from a random point of the budget ball."""
    x, y = _as_batch(x, y)
    start = _random_start(target, x, tm, seed, sample_ids, restart, init)
    return _iterate(target, x, y, tm, start=start, iterations=tm.iterations, alpha=tm.alpha)


def random_start_step(target: AttackTarget, x: np.ndarray, y: np.ndarray, tm: ThreatModel, *, seed: int = 0,
                      sample_ids: Optional[np.ndarray] = None, restart: int = 0,
                      init: InitFn = uniform_ball_init) -> AttackResult:
    """
    Single FGSM/FGM step of size epsilon taken from a random point of the
    budget ball; the total perturbation is projected back onto the budget.
    """
    x, y = _as_batch(x, y)
    start = _random_start(target, x, tm, seed, sample_ids, restart, init)
    return _iterate(target, x, y, tm, start=start, iterations=1, alpha=tm.epsilon)


def with_restarts(attack: AttackFn, k: int, target: AttackTarget, x: np.ndarray, y: np.ndarray, tm: ThreatModel,
                  *, seed: int = 0, sample_ids: Optional[np.ndarray] = None) -> AttackResult:
    """
    Run ``attack`` up to ``k`` times per sample.

    A sample keeps the first restart that misclassifies it; otherwise the
    restart with the highest final loss (earliest on ties). Restarts after a
    success are skipped for that sample.
    """
    if k < 1:
        raise ConfigurationError(f"restart count must be >= 1, got {k}")
    x, y = _as_batch(x, y)
    sample_ids = np.arange(len(x)) if sample_ids is None else np.asarray(sample_ids)
    best = attack(target, x, y, tm, seed=seed, sample_ids=sample_ids, restart=0)
    fields = {name: np.array(getattr(best, name), copy=True)
              for name in ("adversarial", "predictions", "success", "loss", "perturbation_norm", "loss_history")}
    for restart in range(1, k):
        pending = np.flatnonzero(~fields["success"])
        if not pending.size:
            break
        result = attack(target, x[pending], y[pending], tm, seed=seed, sample_ids=sample_ids[pending],
                        restart=restart)
        better = result.success | (result.loss > fields["loss"][pending])
        rows = pending[better]
        for name in ("adversarial", "predictions", "success", "loss", "perturbation_norm"):
            fields[name][rows] = getattr(result, name)[better]
        fields["loss_history"][:, rows] = result.loss_history[:, better]
        logger.debug("restart %d: %d/%d pending samples improved", restart, rows.size, pending.size)
    return AttackResult(**fields)


class SingleStepAttack(Attack):
    """FGSM (L-inf) or FGM (L2), optionally from a random start."""

    def __init__(self, random_start: bool = False, init: InitFn = uniform_ball_init):
        self.random_start = random_start
        self.init = init
        self.name = "single-step-random" if random_start else "single-step"

    def run(self, target, x, y, tm, *, seed=0, sample_ids=None, restart=0):
        if self.random_start:
            return random_start_step(target, x, y, tm, seed=seed, sample_ids=sample_ids, restart=restart,
                                     init=self.init)
        return fgsm(target, x, y, tm) if tm.norm is Norm.LINF else fgm(target, x, y, tm)


class BasicIterativeAttack(Attack):
    name = "bim"

    def run(self, target, x, y, tm, *, seed=0, sample_ids=None, restart=0):
        return bim(target, x, y, tm)


class ProjectedGradientAttack(Attack):
    name = "pgd"

    def __init__(self, init: InitFn = uniform_ball_init):
        self.init = init

    def run(self, target, x, y, tm, *, seed=0, sample_ids=None, restart=0):
        return pgd(target, x, y, tm, seed=seed, sample_ids=sample_ids, restart=restart, init=self.init)


class RestartedAttack(Attack):
    def __init__(self, base: Attack, k: int):
        if k < 1:
            raise ConfigurationError(f"restart count must be >= 1, got {k}")
        self.base = base
        self.k = k
        self.name = f"{base.name}x{k}"

    def run(self, target, x, y, tm, *, seed=0, sample_ids=None, restart=0):
        return with_restarts(self.base.run, self.k, target, x, y, tm, seed=seed, sample_ids=sample_ids)


def get_attack(preset: Union[str, AttackPreset], tm: ThreatModel, init: InitFn = uniform_ball_init) -> Attack:
    """
    Build the attack for a preset under a threat model.

    ``tm.restarts`` decides whether random starts are used: 0 attacks from the
    clean input, k >= 1 runs k random starts with success-first retention.
    PGD always starts at random, so it runs at least once.
    """
    preset = resolve_preset(preset) if isinstance(preset, str) else preset
    if preset.algorithm is Algorithm.SINGLE_STEP:
        if tm.restarts == 0:
            return SingleStepAttack()
        return RestartedAttack(SingleStepAttack(random_start=True, init=init), tm.restarts)
    if preset.algorithm is Algorithm.BIM and tm.restarts == 0:
        return BasicIterativeAttack()
    return RestartedAttack(ProjectedGradientAttack(init=init), max(1, tm.restarts))
