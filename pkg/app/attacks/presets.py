import re
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional

from ..exceptions import ConfigurationError
from ..models import AttackSpace, Norm, ThreatModel


class Algorithm(str, Enum):
    SINGLE_STEP = "single_step"
    BIM = "bim"
    PGD = "pgd"


@dataclass(frozen=True)
class AttackPreset:
    name: str
    algorithm: Algorithm
    iterations: int = 1
    restarts: int = 0
    # None: the preset works under either norm
    norm: Optional[Norm] = None


REGISTERED_PRESETS: Dict[str, AttackPreset] = {
    "FGSM": AttackPreset("FGSM", Algorithm.SINGLE_STEP, norm=Norm.LINF),
    "FGSM-10": AttackPreset("FGSM-10", Algorithm.SINGLE_STEP, restarts=10, norm=Norm.LINF),
    "FGM": AttackPreset("FGM", Algorithm.SINGLE_STEP, norm=Norm.L2),
    "BIM-10": AttackPreset("BIM-10", Algorithm.BIM, iterations=10),
    "BIM-50": AttackPreset("BIM-50", Algorithm.BIM, iterations=50),
    "BIM-100": AttackPreset("BIM-100", Algorithm.BIM, iterations=100),
    "PGD-50-10": AttackPreset("PGD-50-10", Algorithm.PGD, iterations=50, restarts=10),
}

# Same naming scheme as the registered presets: FGSM-<restarts>, BIM-<iterations>, PGD-<iterations>-<restarts>
_PATTERNS = (
    (re.compile(r"^FGSM-(\d+)$"), lambda m: AttackPreset(m.group(0), Algorithm.SINGLE_STEP,
                                                          restarts=int(m.group(1)), norm=Norm.LINF)),
    (re.compile(r"^FGM-(\d+)$"), lambda m: AttackPreset(m.group(0), Algorithm.SINGLE_STEP,
                                                         restarts=int(m.group(1)), norm=Norm.L2)),
    (re.compile(r"^BIM-(\d+)$"), lambda m: AttackPreset(m.group(0), Algorithm.BIM, iterations=int(m.group(1)))),
    (re.compile(r"^PGD-(\d+)-(\d+)$"), lambda m: AttackPreset(m.group(0), Algorithm.PGD, iterations=int(m.group(1)),
                                                              restarts=int(m.group(2)))),
)


def resolve_preset(name: str) -> AttackPreset:
    if name in REGISTERED_PRESETS:
        return REGISTERED_PRESETS[name]
    for pattern, build in _PATTERNS:
        match = pattern.match(name)
        if match:
            preset = build(match)
            if preset.iterations < 1 or (preset.algorithm is Algorithm.PGD and preset.restarts < 1):
                break
            return preset
    raise ConfigurationError(
        f"Unknown attack preset {name!r}; registered presets are {', '.join(REGISTERED_PRESETS)}")


def build_threat(preset: str, norm: Optional[Norm] = None, epsilon: Optional[float] = None,
                 alpha: Optional[float] = None, space: AttackSpace = AttackSpace.INPUT,
                 iterations: Optional[int] = None, restarts: Optional[int] = None) -> ThreatModel:
    """
    Threat model for a preset, with optional overrides.

    The preset fixes the iteration and restart counts and, for FGSM/FGM, the norm.
    """
    resolved = resolve_preset(preset)
    norm = Norm(norm) if norm is not None else (resolved.norm or Norm.LINF)
    if resolved.norm is not None and norm is not resolved.norm:
        raise ConfigurationError(f"{resolved.name} is defined for the {resolved.norm.value} norm only")
    return ThreatModel(
        norm=norm,
        epsilon=epsilon,
        alpha=alpha,
        iterations=iterations if iterations is not None else resolved.iterations,
        restarts=restarts if restarts is not None else resolved.restarts,
        space=space,
    )


def canonical_name(algorithm: Algorithm, norm: Norm, iterations: int, restarts: int) -> str:
    """Preset name of the attack that ``get_attack`` builds for these counts."""
    if algorithm is Algorithm.SINGLE_STEP:
        base = "FGSM" if norm is Norm.LINF else "FGM"
        return f"{base}-{restarts}" if restarts else base
    if algorithm is Algorithm.BIM and restarts == 0:
        return f"BIM-{iterations}"
    # BIM with random starts is PGD; PGD always runs at least one start
    return f"PGD-{iterations}-{max(1, restarts)}"


def complete_threat(preset: str, tm: ThreatModel) -> ThreatModel:
    """Take the iteration and restart counts the caller left unset from the preset."""
    resolved = resolve_preset(preset)
    update = {}
    if "iterations" not in tm.model_fields_set:
        update["iterations"] = resolved.iterations
    if "restarts" not in tm.model_fields_set:
        update["restarts"] = resolved.restarts
    return tm.model_copy(update=update) if update else tm


def effective_preset(preset: str, tm: ThreatModel) -> str:
    """
    Name of the attack ``preset`` runs under ``tm``, e.g. BIM-10 with 20
    iterations is BIM-20. Raises when the threat contradicts the preset's norm
    or asks a single-step preset for several steps.
    """
    resolved = resolve_preset(preset)
    if resolved.norm is not None and tm.norm is not resolved.norm:
        raise ConfigurationError(f"{resolved.name} is defined for the {resolved.norm.value} norm only")
    if resolved.algorithm is Algorithm.SINGLE_STEP and tm.iterations != 1:
        raise ConfigurationError(f"{resolved.name} takes a single step, got iterations={tm.iterations}")
    return canonical_name(resolved.algorithm, tm.norm, tm.iterations, tm.restarts)
