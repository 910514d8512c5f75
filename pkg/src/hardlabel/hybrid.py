"""The three-stage hybrid attack: estimate, block-descend, refine.

Stage one runs a gradient-estimation step function until its reduction rate
stalls, stage two runs block coordinate descent from that switch point to
escape whatever minimum trapped stage one, and stage three refines the
result with a second gradient-estimation pass on all remaining budget. The
stages run exactly once each, in order, under a single hard query budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blockdescent import BlockDescentConfig, block_descent
from .core import Criterion, Image, l2_distance
from .errors import ConfigError, InvalidEndpointsError, QueryBudgetExceeded
from .grad_attacks import GradStepConfig, HopSkipJumpStep, SignOptStep, find_untargeted_start
from .metrics import AttackTrace, Stage, TraceRecord
from .oracles import Oracle
from .stages import SwitchConfig, grad_estimation

VARIANTS = ("hsja", "sopt")


@dataclass(frozen=True)
class RamboConfig:
    """Wiring for the hybrid attack.

    Variant "hsja" uses the Monte Carlo step for stage one; variant "sopt"
    uses the sign-aggregation step for both gradient stages. Stage three is
    always the sign-aggregation step (the better refiner). Stage caps are
    soft and must leave room inside the global budget; stage three simply
    receives whatever budget remains.
    """

    variant: str
    stage1: SwitchConfig
    bd: BlockDescentConfig
    stage3: SwitchConfig
    global_budget: int
    sopt: GradStepConfig = GradStepConfig()
    hsj: GradStepConfig = GradStepConfig(probe_radius=1.0)
    init_tol: float = 1e-5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.global_budget < 1:
            raise ConfigError("global_budget must be positive")
        for name, window in (
            ("stage1", self.stage1.window_T),
            ("blockdescent", self.bd.window_T),
            ("stage3", self.stage3.window_T),
        ):
            if self.global_budget < window:
                raise ConfigError(
                    f"global budget {self.global_budget} is smaller than the "
                    f"{name} window of {window}"
                )
        if self.stage1.budget_cap + self.bd.budget_cap > self.global_budget:
            raise ConfigError("stage caps exceed the global budget")


def rambo_attack(
    oracle: Oracle,
    x: Image,
    x_start: Image | None,
    criterion: Criterion,
    cfg: RamboConfig,
    rng: np.random.Generator,
    *,
    pair_id: str = "attack",
    record_images: bool = False,
) -> tuple[Image, AttackTrace]:
    """Run the full three-stage hybrid under a hard global budget.

    In targeted mode ``x_start`` must be a correctly classified target-class
    image; in untargeted mode pass None to synthesize one from uniform
    draws. The returned trace concatenates the three stage traces on a
    single query axis and carries the globally best adversarial image.
    """
    start_q = oracle.query_count
    ceiling = start_q + cfg.global_budget
    if oracle.max_queries is None or oracle.max_queries > ceiling:
        oracle.max_queries = ceiling

    records: list[TraceRecord] = []
    best: Image | None = None
    best_d = float("inf")

    def track(img: Image | None):
        nonlocal best, best_d
        if img is None:
            return
        d = l2_distance(x, img)
        if d < best_d:
            best, best_d = img, d

    def extend(recs: list[TraceRecord]):
        # Stage-entry records spend no query; drop one that would collide
        # with the previous stage's last index so the axis stays strict.
        if records and recs and recs[0].query_index <= records[-1].query_index:
            recs = recs[1:]
        records.extend(recs)

    try:
        if criterion.satisfied(oracle.decide(x)):
            raise InvalidEndpointsError("source already satisfies the criterion")
        if x_start is None:
            if criterion.targeted:
                raise InvalidEndpointsError("targeted attacks need a starting image")
            x_start = find_untargeted_start(oracle, x, criterion, rng)
        elif not criterion.satisfied(oracle.decide(x_start)):
            raise InvalidEndpointsError("start does not satisfy the criterion")
        track(x_start)
        records.append(
            TraceRecord(
                oracle.query_count, l2_distance(x, x_start), Stage.INIT, True,
                x_start if record_images else None,
            )
        )

        if cfg.variant == "hsja":
            g1 = HopSkipJumpStep(cfg.hsj)
        else:
            g1 = SignOptStep(cfg.sopt)
        x_s, recs = grad_estimation(
            oracle, x, x_start, criterion, g1, cfg.stage1, rng,
            stage=Stage.G1, verify_endpoints=False, init_tol=cfg.init_tol,
            record_images=record_images,
        )
        extend(recs)
        track(x_s)

        x_s2, recs = block_descent(
            oracle, x, x_s, criterion, cfg.bd, rng, record_images=record_images
        )
        extend(recs)
        track(x_s2)

        remaining = ceiling - oracle.query_count
        if remaining > 0:
            g2 = SignOptStep(cfg.sopt)
            x_a, recs = grad_estimation(
                oracle, x, x_s2, criterion, g2, cfg.stage3, rng,
                stage=Stage.G2, verify_endpoints=False, init_tol=cfg.init_tol,
                budget_cap=remaining, record_images=record_images,
            )
            extend(recs)
            track(x_a)
    except QueryBudgetExceeded:
        pass  # the budget bound mid-stage; report the best so far

    trace = AttackTrace(
        pair_id=pair_id,
        records=records,
        best_image=best,
        queries_used=oracle.query_count - start_q,
    )
    if best is None:
        raise InvalidEndpointsError("budget exhausted before a start could be verified")
    return best, trace
