from .attack_interface import Attack, AttackResult, AttackTarget, per_sample_norm
from .attack_implementations import (
    BasicIterativeAttack,
    ProjectedGradientAttack,
    RestartedAttack,
    SingleStepAttack,
    bim,
    clip_linf,
    fgm,
    fgsm,
    get_attack,
    pgd,
    project_l2,
    random_start_step,
    uniform_ball_init,
    with_restarts,
    zero_init,
)
from .presets import (
    REGISTERED_PRESETS,
    AttackPreset,
    build_threat,
    canonical_name,
    complete_threat,
    effective_preset,
    resolve_preset,
)
