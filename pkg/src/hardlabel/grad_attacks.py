"""Gradient-estimation attack steps behind a single step-function contract.

A step object is called as ``step(oracle, source, current, criterion, rng)``
and returns ``(new_adversarial, queries_used)``. Steps only ever return
images that were actually queried and judged adversarial, and never hand
back an iterate farther from the source than the one they received; a step
that finds nothing better returns ``current`` unchanged. ``queries_used``
always equals the oracle-counter delta of the call.

Candidates are clamped to [0, 1] before querying bounded oracles; unbounded
domains (the 2-D toy victim) are queried as-is.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Criterion, Image, l2_distance
from .errors import InvalidEndpointsError
from .oracles import Oracle

HSJ_MAX_DIRECTIONS = 1000


@dataclass(frozen=True)
class GradStepConfig:
    """Shared knob set for the gradient-estimation steps.

    ``directions_per_estimate`` is the probe count per direction estimate
    (the per-step count for the sign-aggregation step; the base count of the
    square-root growth schedule for the Monte Carlo step). ``probe_radius``
    is the smoothing radius of sign probes, the distortion-relative probe
    scale of Monte Carlo probes, and the orthogonal-noise scale of the
    random-walk step. ``initial_step_scale`` seeds the line-search step size
    (random walk: the contraction weight toward the source).
    """

    directions_per_estimate: int = 50
    probe_radius: float = 1e-3
    binary_search_tol: float = 1e-5
    initial_step_scale: float = 0.2

    def __post_init__(self):
        if self.directions_per_estimate < 1:
            raise ValueError("directions_per_estimate must be >= 1")
        for name in ("probe_radius", "binary_search_tol", "initial_step_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")


def _query(oracle: Oracle, arr: np.ndarray, dims, criterion: Criterion):
    """Clamp (when the oracle is bounded), query, and keep the queried image."""
    if oracle.bounded:
        arr = np.clip(arr, 0.0, 1.0)
    img = Image(arr, *dims)
    return criterion.satisfied(oracle.decide(img)), img


def binary_search_to_boundary(
    oracle: Oracle,
    x: Image,
    x_adv: Image,
    criterion: Criterion,
    tol: float,
    *,
    verify_endpoints: bool = True,
) -> Image:
    """Bisect the segment [x, x_adv] down to an adversarial boundary point.

    The returned image was queried and satisfies the criterion; its segment
    parameter is within ``tol`` of the crossing. Endpoint verification costs
    two extra queries and raises when x is already adversarial or x_adv is
    not; callers that hold the precondition can skip it.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if x.dims != x_adv.dims:
        raise InvalidEndpointsError(f"dimension mismatch: {x.dims} vs {x_adv.dims}")
    if verify_endpoints:
        if criterion.satisfied(oracle.decide(x)):
            raise InvalidEndpointsError("x already satisfies the criterion")
        if not criterion.satisfied(oracle.decide(x_adv)):
            raise InvalidEndpointsError("x_adv does not satisfy the criterion")
    base = x.data
    span = x_adv.data - base
    lo, hi = 0.0, 1.0
    best = x_adv
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        # Segment points between in-box endpoints stay in-box: no clamping.
        img = Image(base + mid * span, *x.dims)
        if criterion.satisfied(oracle.decide(img)):
            hi = mid
            best = img
        else:
            lo = mid
    return best


def find_untargeted_start(
    oracle: Oracle, x: Image, criterion: Criterion, rng: np.random.Generator,
    max_draws: int = 1000,
) -> Image:
    """Sample uniform images until one is misclassified relative to y."""
    if criterion.targeted:
        raise ValueError("start synthesis applies to untargeted criteria only")
    n = x.pixel_count
    for _ in range(max_draws):
        img = Image(rng.uniform(0.0, 1.0, n), *x.dims)
        if criterion.satisfied(oracle.decide(img)):
            return img
    raise InvalidEndpointsError(
        f"no adversarial start found within {max_draws} uniform draws"
    )


def monte_carlo_direction(
    oracle: Oracle,
    point: Image,
    criterion: Criterion,
    count: int,
    radius: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray | None, int]:
    """Baseline-corrected Monte Carlo estimate of the boundary normal.

    Draws ``count`` random unit directions, queries the perturbed points at
    ``radius``, and averages the directions weighted +/-1 by adversarial
    outcome after subtracting the outcome mean. When every probe agrees the
    correction would zero out, so the unweighted (or negated) mean is used.
    Returns a unit vector, or None when the estimate degenerates.
    """
    base = point.data
    dims = point.dims
    n = base.size
    dirs = np.empty((count, n))
    outcomes = np.empty(count)
    for k in range(count):
        u = rng.standard_normal(n)
        u /= np.linalg.norm(u)
        cand = base + radius * u
        if oracle.bounded:
            cand = np.clip(cand, 0.0, 1.0)
            u = (cand - base) / radius  # the perturbation actually applied
        adv = criterion.satisfied(oracle.decide(Image(cand, *dims)))
        dirs[k] = u
        outcomes[k] = 1.0 if adv else -1.0
    mean_out = outcomes.mean()
    if mean_out == 1.0:
        grad = dirs.mean(axis=0)
    elif mean_out == -1.0:
        grad = -dirs.mean(axis=0)
    else:
        grad = ((outcomes - mean_out)[:, None] * dirs).mean(axis=0)
    norm = np.linalg.norm(grad)
    if norm == 0.0 or not np.isfinite(norm):
        return None, count
    return grad / norm, count


class BoundaryAttackStep:
    """One random-walk proposal along the boundary sphere.

    Draws Gaussian noise scaled by the orthogonal step, projects the
    perturbed iterate back onto the sphere of the current distortion around
    the source, contracts toward the source, and queries once. Rejection is
    a normal outcome. Both step scales adapt on the acceptance rate over a
    30-proposal window: multiplied by 1.5 above 50% acceptance, divided by
    1.5 below 20%.
    """

    WINDOW = 30

    def __init__(self, cfg: GradStepConfig):
        self.orth_scale = cfg.probe_radius
        self.contraction = cfg.initial_step_scale
        self._outcomes: list[bool] = []

    def __call__(self, oracle, source, current, criterion, rng):
        start_q = oracle.query_count
        src = source.data
        d = l2_distance(source, current)
        if d == 0.0:
            return current, 0
        noise = rng.standard_normal(src.size)
        noise *= self.orth_scale * d / np.linalg.norm(noise)
        v = (current.data + noise) - src
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return current, 0
        v *= d / nv
        cand = src + (1.0 - self.contraction) * v
        ok, img = _query(oracle, cand, source.dims, criterion)
        accepted = ok and l2_distance(source, img) <= d
        self._outcomes.append(accepted)
        if len(self._outcomes) >= self.WINDOW:
            rate = sum(self._outcomes) / len(self._outcomes)
            if rate > 0.5:
                self.orth_scale = min(self.orth_scale * 1.5, 2.0)
                self.contraction = min(self.contraction * 1.5, 0.5)
            elif rate < 0.2:
                self.orth_scale = max(self.orth_scale / 1.5, 1e-9)
                self.contraction = max(self.contraction / 1.5, 1e-9)
            self._outcomes.clear()
        return (img if accepted else current), oracle.query_count - start_q


class SignOptStep:
    """One sign-aggregation descent iteration.

    Maintains a unit direction from the source and the boundary distance
    along it. Each call estimates the sign of the directional derivative
    for Q random tilts (one query each), aggregates the signs into a
    descent direction, line-searches a rotation that shrinks the boundary
    distance, and re-localizes the boundary with a fine binary search.
    When no probe crosses the boundary there is no descent signal and the
    iterate is handed back unchanged (the stall path).
    """

    def __init__(self, cfg: GradStepConfig):
        self.cfg = cfg
        self.step_scale = cfg.initial_step_scale
        self.smoothing = cfg.probe_radius
        self._theta: np.ndarray | None = None
        self._dist = 0.0
        self._last_out: Image | None = None

    def _local_search(self, oracle, src, dims, criterion, direction, ref_dist):
        """Boundary distance along ``direction``, tracking the queried image.

        Expands outward when ref_dist is inside the benign region, shrinks
        inward when it is already adversarial, then bisects. Returns
        (distance, adversarial image) or None when no boundary is found
        within the expansion budget.
        """
        tol = self.cfg.binary_search_tol

        def probe(dist):
            return _query(oracle, src + dist * direction, dims, criterion)

        adv, img = probe(ref_dist)
        if adv:
            hi, hi_img = ref_dist, img
            lo = ref_dist * 0.99
            for _ in range(100):
                adv, img = probe(lo)
                if not adv:
                    break
                hi, hi_img = lo, img
                lo *= 0.99
            else:
                return hi, hi_img
        else:
            lo = ref_dist
            hi = ref_dist * 1.01
            hi_img = None
            for _ in range(25):
                adv, img = probe(hi)
                if adv:
                    hi_img = img
                    break
                lo = hi
                hi *= 1.01
            if hi_img is None:
                return None
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            adv, img = probe(mid)
            if adv:
                hi, hi_img = mid, img
            else:
                lo = mid
        return hi, hi_img

    def __call__(self, oracle, source, current, criterion, rng):
        start_q = oracle.query_count
        src = source.data
        dims = source.dims
        cur_dist = l2_distance(source, current)
        if cur_dist == 0.0:
            return current, 0
        if self._theta is None or self._last_out is not current:
            self._theta = (current.data - src) / cur_dist
            self._dist = cur_dist

        q = self.cfg.directions_per_estimate
        est = np.zeros(src.size)
        crossings = 0
        for _ in range(q):
            u = rng.standard_normal(src.size)
            u /= np.linalg.norm(u)
            probe_dir = self._theta + self.smoothing * u
            probe_dir /= np.linalg.norm(probe_dir)
            adv, _ = _query(oracle, src + self._dist * probe_dir, dims, criterion)
            if adv:
                est -= u  # the boundary is nearer along this tilt
                crossings += 1
            else:
                est += u
        if crossings == 0:
            self._last_out = current
            return current, oracle.query_count - start_q
        est /= q

        best_dist, best_theta, best_img = self._dist, self._theta, None
        alpha = self.step_scale
        improved = False
        for _ in range(15):
            cand = self._theta - alpha * est
            norm = np.linalg.norm(cand)
            if norm == 0.0:
                break
            cand /= norm
            found = self._local_search(oracle, src, dims, criterion, cand, best_dist)
            alpha *= 2.0
            if found is not None and found[0] < best_dist:
                best_dist, best_img = found
                best_theta = cand
                improved = True
            else:
                break
        if not improved:
            for _ in range(15):
                alpha *= 0.25
                if alpha < 1e-12:
                    break
                cand = self._theta - alpha * est
                norm = np.linalg.norm(cand)
                if norm == 0.0:
                    break
                cand /= norm
                found = self._local_search(oracle, src, dims, criterion, cand, self._dist)
                if found is not None and found[0] < self._dist:
                    best_dist, best_img = found
                    best_theta = cand
                    improved = True
                    break
        if alpha < 1e-4:
            alpha = self.cfg.initial_step_scale
            self.smoothing = max(self.smoothing * 0.1, 1e-8)
        self.step_scale = alpha

        if improved and best_img is not None:
            actual = l2_distance(source, best_img)
            if actual <= cur_dist:
                self._theta = best_theta
                self._dist = best_dist
                self._last_out = best_img
                return best_img, oracle.query_count - start_q
        self._last_out = current
        return current, oracle.query_count - start_q


class HopSkipJumpStep:
    """One Monte Carlo boundary-walk iteration.

    Binary-searches the iterate onto the boundary, estimates the boundary
    normal from a batch of probe queries (batch size grows with the square
    root of the step index), then runs a geometric step-size search along
    the estimate until an adversarial point is found. Falls back to the
    boundary point, which the binary search already moved closer to the
    source, when the excursion finds nothing usable.
    """

    def __init__(self, cfg: GradStepConfig, max_directions: int = HSJ_MAX_DIRECTIONS):
        self.cfg = cfg
        self.max_directions = max_directions
        self._t = 0

    def __call__(self, oracle, source, current, criterion, rng):
        start_q = oracle.query_count
        cur_dist = l2_distance(source, current)
        if cur_dist == 0.0:
            return current, 0
        boundary = binary_search_to_boundary(
            oracle, source, current, criterion, self.cfg.binary_search_tol,
            verify_endpoints=False,
        )
        b_dist = l2_distance(source, boundary)
        n = source.pixel_count
        count = min(
            int(np.ceil(self.cfg.directions_per_estimate * np.sqrt(self._t + 1))),
            self.max_directions,
        )
        radius = self.cfg.probe_radius * b_dist / np.sqrt(n)
        self._t += 1
        if radius <= 0.0:
            return boundary, oracle.query_count - start_q
        direction, _ = monte_carlo_direction(
            oracle, boundary, criterion, count, radius, rng
        )
        result, result_dist = boundary, b_dist
        if direction is not None:
            step = b_dist / np.sqrt(self._t)
            for _ in range(30):
                ok, img = _query(
                    oracle, boundary.data + step * direction, source.dims, criterion
                )
                if ok:
                    d = l2_distance(source, img)
                    # The excursion may leave the boundary but must never
                    # hand back something worse than the incoming iterate.
                    if d <= cur_dist:
                        result, result_dist = img, d
                    break
                step *= 0.5
                if step < 1e-12 * max(b_dist, 1.0):
                    break
        return result, oracle.query_count - start_q
