"""Named hyperparameter bundles for every attack at each problem scale.

The two image-scale presets encode the published table of block-descent and
switching hyperparameters; the toy and plateau presets are tuned for the
bundled synthetic victims. A preset carries everything needed to build any
of the five attacks, so campaigns and the CLI stay declarative.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .blockdescent import BlockDescentConfig
from .errors import ConfigError
from .grad_attacks import GradStepConfig
from .hybrid import RamboConfig
from .stages import SwitchConfig

ATTACK_NAMES = ("boundary", "signopt", "hsj", "rambo-hsja", "rambo-sopt")


@dataclass(frozen=True)
class AttackSettings:
    """Everything needed to instantiate the attacks at one problem scale.

    ``epsilon_r`` is carried verbatim from the published hyperparameter
    table but is consumed by no algorithm here; it is kept as an inert,
    documented field rather than guessed into a behavior.
    """

    sopt: GradStepConfig
    hsj: GradStepConfig
    boundary: GradStepConfig
    stage1_window_hsja: int
    stage1_window_sopt: int
    stage3_window: int
    ge_epsilon_s: float
    epsilon_r: float
    bd: BlockDescentConfig
    init_tol: float = 1e-5


PRESETS: dict[str, AttackSettings] = {
    "cifar-scale": AttackSettings(
        sopt=GradStepConfig(directions_per_estimate=50, probe_radius=1e-3,
                            binary_search_tol=1e-5, initial_step_scale=0.2),
        hsj=GradStepConfig(directions_per_estimate=100, probe_radius=1.0,
                           binary_search_tol=1e-5, initial_step_scale=1.0),
        boundary=GradStepConfig(directions_per_estimate=1, probe_radius=1e-2,
                                binary_search_tol=1e-5, initial_step_scale=1e-2),
        stage1_window_hsja=500,
        stage1_window_sopt=400,
        stage3_window=400,
        ge_epsilon_s=0.01,
        epsilon_r=0.01,
        bd=BlockDescentConfig(half_width=1, blocks_per_craft=1, lam=1.2,
                              percentile=100.0, window_T=500, epsilon_s=0.01),
    ),
    "imagenet-scale": AttackSettings(
        sopt=GradStepConfig(directions_per_estimate=50, probe_radius=1e-3,
                            binary_search_tol=1e-5, initial_step_scale=0.2),
        hsj=GradStepConfig(directions_per_estimate=100, probe_radius=1.0,
                           binary_search_tol=1e-5, initial_step_scale=1.0),
        boundary=GradStepConfig(directions_per_estimate=1, probe_radius=1e-2,
                                binary_search_tol=1e-5, initial_step_scale=1e-2),
        stage1_window_hsja=2000,
        stage1_window_sopt=1000,
        stage3_window=1000,
        ge_epsilon_s=1.0,
        epsilon_r=0.1,
        bd=BlockDescentConfig(half_width=1, blocks_per_craft=16, lam=2.0,
                              percentile=50.0, window_T=1000, epsilon_s=0.1),
    ),
    "toy": AttackSettings(
        sopt=GradStepConfig(directions_per_estimate=10, probe_radius=0.05,
                            binary_search_tol=1e-6, initial_step_scale=0.2),
        hsj=GradStepConfig(directions_per_estimate=20, probe_radius=1.0,
                           binary_search_tol=1e-6, initial_step_scale=1.0),
        boundary=GradStepConfig(directions_per_estimate=1, probe_radius=0.3,
                                binary_search_tol=1e-6, initial_step_scale=0.05),
        stage1_window_hsja=250,
        stage1_window_sopt=250,
        stage3_window=250,
        ge_epsilon_s=0.01,
        epsilon_r=0.01,
        bd=BlockDescentConfig(half_width=0, blocks_per_craft=1, lam=1.2,
                              percentile=100.0, window_T=50, epsilon_s=0.01),
        init_tol=1e-6,
    ),
    "plateau": AttackSettings(
        sopt=GradStepConfig(directions_per_estimate=50, probe_radius=0.1,
                            binary_search_tol=1e-4, initial_step_scale=0.2),
        hsj=GradStepConfig(directions_per_estimate=100, probe_radius=1.0,
                           binary_search_tol=1e-4, initial_step_scale=1.0),
        boundary=GradStepConfig(directions_per_estimate=1, probe_radius=0.1,
                                binary_search_tol=1e-4, initial_step_scale=0.01),
        stage1_window_hsja=500,
        stage1_window_sopt=400,
        stage3_window=400,
        ge_epsilon_s=0.01,
        epsilon_r=0.01,
        bd=BlockDescentConfig(half_width=1, blocks_per_craft=1, lam=1.2,
                              percentile=100.0, window_T=200, epsilon_s=0.01),
        init_tol=1e-4,
    ),
}

# Published hard/non-hard selection thresholds, stored as named presets only.
HARD_THRESHOLDS = {"cifar-scale": 0.9, "imagenet-scale": 15.0}
EASY_THRESHOLDS = {"cifar-scale": 0.6, "imagenet-scale": 7.0}


def preset(name: str) -> AttackSettings:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; choose from {sorted(PRESETS)}"
        ) from None


def rambo_config(settings: AttackSettings, variant: str, budget: int) -> RamboConfig:
    """Wire a hybrid-attack config for the given budget.

    Stages one and two each get a soft cap of 40% of the budget (their
    switch criteria normally fire much earlier); stage three receives all
    remaining budget at run time.
    """
    if budget < 1:
        raise ConfigError("budget must be positive")
    stage1_window = (
        settings.stage1_window_hsja if variant == "hsja" else settings.stage1_window_sopt
    )
    stage_cap = max(2 * budget // 5, 1)
    stage1 = SwitchConfig(
        window_T=min(stage1_window, stage_cap),
        epsilon_s=settings.ge_epsilon_s,
        budget_cap=stage_cap,
    )
    stage3 = SwitchConfig(
        window_T=min(settings.stage3_window, stage_cap),
        epsilon_s=settings.ge_epsilon_s,
        budget_cap=stage_cap,
    )
    bd = replace(
        settings.bd,
        budget_cap=stage_cap,
        window_T=min(settings.bd.window_T, max(stage_cap // 2, 1)),
    )
    return RamboConfig(
        variant=variant,
        stage1=stage1,
        bd=bd,
        stage3=stage3,
        global_budget=budget,
        sopt=settings.sopt,
        hsj=settings.hsj,
        init_tol=settings.init_tol,
    )
