"""Hard-label black-box adversarial attack toolkit."""

from .core import Criterion, Image, clamp_image, criterion_satisfied, l2_distance
from .blockdescent import (
    BlockDescentConfig,
    DistortionHistory,
    block_descent,
    craft_sample,
    init_delta,
    sma_delta,
)
from .grad_attacks import (
    BoundaryAttackStep,
    GradStepConfig,
    HopSkipJumpStep,
    SignOptStep,
    binary_search_to_boundary,
    find_untargeted_start,
    monte_carlo_direction,
)
from .hybrid import RamboConfig, rambo_attack
from .metrics import (
    AttackTrace,
    Stage,
    TraceRecord,
    asr,
    classify_hard,
    distortion_at,
    perturbation_heat_map,
    summarize,
)
from .oracles import (
    ConstantModel,
    LinearHalfspaceModel,
    MlpModel,
    Oracle,
    QuantizedDetectorModel,
    RegionBasedWrapper,
    ToyModel2D,
    default_toy_endpoints,
    plateau_model,
    toy_boundary_height,
    toy_optimal_distortion,
    toy_point,
)
from .presets import ATTACK_NAMES, AttackSettings, preset, rambo_config
from .stages import SwitchConfig, grad_estimation
from .harness import (
    EvaluationReport,
    LabeledImage,
    PairSpec,
    ProtocolConfig,
    ProtocolMode,
    build_hard_set,
    enumerate_pairs,
    run_attack,
    run_campaign,
    start_sensitivity_rows,
    synthesize_dataset,
)
from .server import OracleService, RemoteOracle, remote_oracle

__all__ = [name for name in dir() if not name.startswith("_")]
