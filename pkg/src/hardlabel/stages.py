"""Stage wrapper that runs a gradient-estimation step until it stalls.

The wrapper accumulates the queries spent by each step call; whenever the
accumulator exceeds the window size it computes the distortion reduction
over the window and switches out when the reduction falls below the
threshold. Query counts per iteration vary, so windows are measured on the
first accumulator overflow after each reset rather than on exact
boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import Criterion, Image, l2_distance
from .errors import InvalidEndpointsError, QueryBudgetExceeded
from .grad_attacks import binary_search_to_boundary
from .metrics import Stage, TraceRecord
from .oracles import Oracle

GradStepFn = Callable[
    [Oracle, Image, Image, Criterion, np.random.Generator], tuple[Image, int]
]


@dataclass(frozen=True)
class SwitchConfig:
    """Window size, switching threshold, and soft query cap for one stage.

    ``epsilon_s = 0`` disables switching (the reduction per window is never
    negative), which is how standalone baseline runs consume their whole
    budget. The cap is soft: a stage checks it between iterations, so it can
    overshoot by at most one in-flight iteration; hard budgets live on the
    oracle itself.
    """

    window_T: int
    epsilon_s: float
    budget_cap: int

    def __post_init__(self):
        if self.window_T < 1:
            raise ValueError("window_T must be >= 1")
        if self.epsilon_s < 0:
            raise ValueError("epsilon_s must be non-negative")
        if self.budget_cap < self.window_T:
            raise ValueError("budget_cap must be at least one window")


def grad_estimation(
    oracle: Oracle,
    x: Image,
    x_start: Image,
    criterion: Criterion,
    step: GradStepFn,
    cfg: SwitchConfig,
    rng: np.random.Generator,
    *,
    stage: Stage = Stage.G1,
    verify_endpoints: bool = True,
    init_tol: float = 1e-5,
    budget_cap: int | None = None,
    record_images: bool = False,
    windows_out: list | None = None,
) -> tuple[Image, list[TraceRecord]]:
    """Run ``step`` from ``x_start`` until the reduction rate stalls.

    Returns the best adversarial found and the per-iteration trace records
    (query indices are absolute oracle-counter values). ``windows_out``,
    when given, collects ``(query_index, delta)`` at each window boundary
    for diagnostics. Raises InvalidEndpointsError when verification is on
    and the endpoints sit on the wrong sides of the boundary.
    """
    cap = cfg.budget_cap if budget_cap is None else budget_cap
    start_q = oracle.query_count
    if verify_endpoints:
        if criterion.satisfied(oracle.decide(x)):
            raise InvalidEndpointsError("source already satisfies the criterion")
        if not criterion.satisfied(oracle.decide(x_start)):
            raise InvalidEndpointsError("start does not satisfy the criterion")

    records: list[TraceRecord] = []
    x_cur = binary_search_to_boundary(
        oracle, x, x_start, criterion, init_tol, verify_endpoints=False
    )
    d_cur = l2_distance(x, x_cur)
    best, best_d = x_cur, d_cur
    records.append(
        TraceRecord(
            oracle.query_count, d_cur, stage, True,
            x_cur if record_images else None,
        )
    )

    window_base = d_cur  # baseline immediately after initialization
    n_window = 0
    while oracle.query_count - start_q < cap:
        try:
            x_new, used = step(oracle, x, x_cur, criterion, rng)
        except QueryBudgetExceeded:
            break
        accepted = x_new is not x_cur
        x_cur = x_new
        d_cur = l2_distance(x, x_cur)
        if d_cur < best_d:
            best, best_d = x_cur, d_cur
        records.append(
            TraceRecord(
                oracle.query_count, d_cur, stage, accepted,
                x_cur if (record_images and accepted) else None,
            )
        )
        n_window += used
        if used == 0 and not accepted:
            break  # the step has degenerated; nothing more can happen
        if n_window > cfg.window_T:
            delta = window_base - d_cur
            window_base = d_cur
            n_window = 0
            if windows_out is not None:
                windows_out.append((oracle.query_count, delta))
            if delta < cfg.epsilon_s:
                break
    return best, records
