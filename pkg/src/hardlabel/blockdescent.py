"""Randomized block coordinate descent over square pixel blocks.

Each craft picks block centers at random (without replacement within a
cycle), pushes every block coordinate one step of size delta toward the
corresponding source value, and queries the oracle only when the craft is
strictly closer to the source than the current iterate. The step size
decays by a fixed divisor per cycle, and switching is governed by a simple
moving average of the distortion-reduction rate over evaluated queries.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import Criterion, Image, l2_distance
from .errors import DegenerateStartError, InvalidSelectionError, QueryBudgetExceeded, ShapeError
from .metrics import Stage, TraceRecord
from .oracles import Oracle


@dataclass(frozen=True)
class BlockDescentConfig:
    """Geometry and schedule of the block descent stage.

    ``half_width`` n makes blocks span 2n+1 per side within one channel;
    ``blocks_per_craft`` m blocks are updated per craft; ``lam`` divides the
    step size after every cycle; ``percentile`` picks the initial step from
    the distribution of absolute source differences (nearest-rank).
    """

    half_width: int = 1
    blocks_per_craft: int = 1
    lam: float = 1.2
    percentile: float = 100.0
    window_T: int = 500
    epsilon_s: float = 0.01
    budget_cap: int = 10_000

    def __post_init__(self):
        if self.half_width < 0:
            raise ValueError("half_width must be non-negative")
        if self.blocks_per_craft < 1:
            raise ValueError("blocks_per_craft must be >= 1")
        if self.lam <= 1.0:
            raise ValueError("lam must be > 1")
        if not 0.0 <= self.percentile <= 100.0:
            raise ValueError("percentile must lie in [0, 100]")
        if self.window_T < 1:
            raise ValueError("window_T must be >= 1")
        if self.epsilon_s <= 0:
            raise ValueError("epsilon_s must be positive")
        if self.budget_cap < 1:
            raise ValueError("budget_cap must be >= 1")


def init_delta(x: Image, x_s: Image, percentile: float) -> float:
    """Nearest-rank percentile of the elementwise |x - x_s| distribution."""
    if x.dims != x_s.dims:
        raise ShapeError(f"dimension mismatch: {x.dims} vs {x_s.dims}")
    if not 0.0 <= percentile <= 100.0:
        raise ValueError("percentile must lie in [0, 100]")
    diffs = np.sort(np.abs(x.data - x_s.data))
    if diffs[-1] == 0.0:
        raise DegenerateStartError("start equals the source; step size would be zero")
    rank = max(1, int(np.ceil(percentile / 100.0 * diffs.size)))
    return float(diffs[rank - 1])


def craft_sample(
    x: Image,
    x_cur: Image,
    centers: list[tuple[int, int, int]],
    half_width: int,
    delta: float,
    *,
    clamp: bool = True,
) -> Image:
    """Push the selected blocks of ``x_cur`` one delta-step toward ``x``.

    Blocks are (2n+1)-wide squares in a single channel, clipped at image
    edges. A coordinate already within delta of its source value snaps to
    the source value exactly instead of crossing past it; coordinates equal
    to the source value do not move. Centers are applied in order, so
    overlapping blocks see earlier updates. Everything outside the selected
    blocks is untouched.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if len(set(centers)) != len(centers):
        raise InvalidSelectionError("duplicate block centers in one craft")
    src = x.as_chw()
    cur = np.array(x_cur.as_chw())
    c_max, w_max, h_max = x.dims
    n = half_width
    for (c, w, h) in centers:
        if not (0 <= c < c_max and 0 <= w < w_max and 0 <= h < h_max):
            raise InvalidSelectionError(f"center {(c, w, h)} outside {x.dims}")
        w0, w1 = max(0, w - n), min(w_max, w + n + 1)
        h0, h1 = max(0, h - n), min(h_max, h + n + 1)
        s = src[c, w0:w1, h0:h1]
        b = cur[c, w0:w1, h0:h1]
        diff = s - b
        b[:] = np.where(np.abs(diff) < delta, s, b + np.sign(diff) * delta)
    if clamp:
        np.clip(cur, 0.0, 1.0, out=cur)
    return Image.from_chw(cur)


class DistortionHistory:
    """Ring buffer of the last 2*window_T evaluated distortions."""

    def __init__(self, window_T: int):
        if window_T < 1:
            raise ValueError("window_T must be >= 1")
        self.window_T = window_T
        self._buf: deque[float] = deque(maxlen=2 * window_T)

    def append(self, value: float) -> None:
        self._buf.append(float(value))

    def __len__(self) -> int:
        return len(self._buf)

    @property
    def ready(self) -> bool:
        return len(self._buf) == 2 * self.window_T

    def values(self) -> list[float]:
        return list(self._buf)


def sma_delta(history: DistortionHistory, window_T: int) -> float | None:
    """Moving-average distortion reduction over the buffered window.

    Averages D_l - D_{l+T} over the T consecutive offsets covered by the
    buffered 2T most recent evaluated queries (newest included). Returns
    None while fewer than 2T values exist: not ready, do not switch yet.
    """
    vals = history.values()
    if len(vals) < 2 * window_T:
        return None
    vals = vals[-2 * window_T:]
    total = 0.0
    for i in range(window_T):
        total += vals[i] - vals[i + window_T]
    return total / window_T


def block_descent(
    oracle: Oracle,
    x: Image,
    x_s: Image,
    criterion: Criterion,
    cfg: BlockDescentConfig,
    rng: np.random.Generator,
    *,
    record_images: bool = False,
) -> tuple[Image, list[TraceRecord]]:
    """Descend from the switch point x_s toward x, one block craft at a time.

    Crafts that do not strictly reduce the distance to x are discarded
    without a query. Evaluated crafts record the post-decision distortion of
    the current iterate into the moving-average history; the stage switches
    out when the averaged reduction falls below epsilon_s, when the soft
    query cap is reached, or when the oracle's hard budget runs dry.
    Expects x_s adversarial and x not (the caller's precondition).
    """
    n_total = x.pixel_count
    m = cfg.blocks_per_craft
    if m > n_total:
        raise ValueError(f"blocks_per_craft {m} exceeds input dimension {n_total}")
    delta = init_delta(x, x_s, cfg.percentile)
    dims = x.dims
    x_cur, d_cur = x_s, l2_distance(x, x_s)
    history = DistortionHistory(cfg.window_T)
    start_q = oracle.query_count
    records = [
        TraceRecord(
            oracle.query_count, d_cur, Stage.BD, True,
            x_cur if record_images else None,
        )
    ]

    switch = False
    while not switch:
        order = rng.permutation(n_total)
        queried_this_cycle = 0
        for j in range(0, n_total, m):
            if oracle.query_count - start_q >= cfg.budget_cap:
                switch = True
                break
            group = order[j : j + m]  # the last craft of a cycle may be short
            centers = [
                tuple(int(v) for v in np.unravel_index(idx, dims)) for idx in group
            ]
            craft = craft_sample(
                x, x_cur, centers, cfg.half_width, delta, clamp=oracle.bounded
            )
            d_craft = l2_distance(x, craft)
            if not d_craft < d_cur:
                continue  # closer-only querying: rejected crafts cost nothing
            try:
                label = oracle.decide(craft)
            except QueryBudgetExceeded:
                switch = True
                break
            queried_this_cycle += 1
            accepted = criterion.satisfied(label)
            if accepted:
                x_cur, d_cur = craft, d_craft
            history.append(d_cur)
            records.append(
                TraceRecord(
                    oracle.query_count, d_cur, Stage.BD, accepted,
                    x_cur if (record_images and accepted) else None,
                )
            )
            if history.ready:
                delta_rate = sma_delta(history, cfg.window_T)
                if delta_rate is not None and delta_rate < cfg.epsilon_s:
                    switch = True
                    break
        delta /= cfg.lam
        # Dead-cycle guard: once the step size underflows nothing can ever
        # become strictly closer again, so stop rather than spin.
        if queried_this_cycle == 0 and (delta < 1e-14 or d_cur == 0.0):
            break
    return x_cur, records
