"""Hard-label decision oracles with exact query accounting.

Attacks interact with a victim exclusively through :meth:`Oracle.decide`,
which returns a class index and bumps the query counter by exactly one.
Setting :attr:`Oracle.max_queries` turns the counter into a hard budget:
once spent, further queries raise :class:`QueryBudgetExceeded` instead of
reaching the model, so no attack can silently overdraw.
"""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np

from .core import Image, Label
from .errors import QueryBudgetExceeded, ShapeError


class Oracle(ABC):
    """Abstract decision function: image in, top-1 class index out.

    ``bounded`` declares whether inputs are expected in [0, 1]; attacks
    clamp candidates before querying bounded oracles and leave unbounded
    ones (the 2-D toy domain) untouched.
    """

    class_count: int = 0
    bounded: bool = True

    def __init__(self):
        self._queries = 0
        self.max_queries: int | None = None

    @property
    def query_count(self) -> int:
        return self._queries

    def reset_queries(self) -> None:
        self._queries = 0

    def decide(self, x: Image) -> Label:
        if self.max_queries is not None and self._queries >= self.max_queries:
            raise QueryBudgetExceeded(
                f"query budget of {self.max_queries} is exhausted"
            )
        label = self._decide(x)
        self._queries += 1
        return label

    @abstractmethod
    def _decide(self, x: Image) -> Label:
        ...

    def _require_dims(self, x: Image, dims: tuple[int, int, int]) -> None:
        if x.dims != dims:
            raise ShapeError(f"oracle expects {dims}, got {x.dims}")


# ---------------------------------------------------------------------------
# 2-D toy victim


def toy_boundary_height(z1: float) -> float:
    """Height of the toy decision curve at coordinate z1."""
    return (z1 - 2.0) * (z1 - 1.0) ** 2 * (z1 + 1.0) ** 3


class ToyModel2D(Oracle):
    """Two-coordinate victim with a sextic decision curve.

    A point (z1, z2) is labelled 1 (target class) when it lies at or above
    the curve z2 = (z1-2)(z1-1)^2(z1+1)^3 and 0 (source class) otherwise.
    Points exactly on the curve belong to the target class, which keeps the
    target region closed so that binary search converges onto it. The toy
    domain is exempt from the [0, 1] pixel box: coordinates are unbounded.
    """

    class_count = 2
    bounded = False

    DIMS = (1, 2, 1)

    def _decide(self, x: Image) -> Label:
        self._require_dims(x, self.DIMS)
        z1 = float(x.data[0])
        z2 = float(x.data[1])
        return 1 if z2 >= toy_boundary_height(z1) else 0


# Default geometry: the source sits under the deep right-hand valley of the
# curve (bottom near z1 = 1.7374), while the start is high on the left wall.
# The initial source-start segment crosses the boundary over the shallow
# left valley, so descent along the boundary gets trapped near z1 = 0.21 at
# distance ~1.957 from the source; the true optimum is ~0.27104.
TOY_SOURCE_POINT = (1.74, -3.2)
TOY_START_POINT = (-1.3, 1.0)


def toy_point(z1: float, z2: float) -> Image:
    return Image(np.array([z1, z2]), 1, 2, 1)


def default_toy_endpoints() -> tuple[Image, Image]:
    """Default (source, start) pair, verified against a fresh toy model."""
    model = ToyModel2D()
    source = toy_point(*TOY_SOURCE_POINT)
    start = toy_point(*TOY_START_POINT)
    if model.decide(source) != 0:
        raise ValueError("default toy source is not source-class")
    if model.decide(start) != 1:
        raise ValueError("default toy start is not target-class")
    return source, start


def toy_optimal_distortion(
    source: Image, *, z1_span: tuple[float, float] = (-3.5, 3.5), grid: int = 200_001
) -> float:
    """Distance from a source-class point to the toy target region.

    The target region is the closed epigraph of the boundary curve, so the
    distance equals the minimum over z1 of the distance to (z1, curve(z1)).
    Computed by a dense grid scan followed by golden-section refinement.
    """
    sx = float(source.data[0])
    sy = float(source.data[1])

    def dist(z1):
        return np.hypot(z1 - sx, toy_boundary_height(z1) - sy)

    zs = np.linspace(z1_span[0], z1_span[1], grid)
    ys = (zs - 2.0) * (zs - 1.0) ** 2 * (zs + 1.0) ** 3
    ds = np.hypot(zs - sx, ys - sy)
    i = int(np.argmin(ds))
    lo = zs[max(i - 1, 0)]
    hi = zs[min(i + 1, grid - 1)]

    # Golden-section refinement on the bracketing interval.
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = dist(c), dist(d)
    for _ in range(200):
        if b - a < 1e-14:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = dist(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = dist(d)
    return float(min(fc, fd))


# ---------------------------------------------------------------------------
# Feed-forward stand-in victim

ACTIVATIONS = ("linear", "relu", "tanh")


class MlpModel(Oracle):
    """Fully connected feed-forward victim loaded from or saved to disk.

    Layers are (weight matrix, bias vector, activation tag) triples applied
    in order; the decision is the argmax of the final pre-softmax scores
    with ties broken toward the lowest index.
    """

    def __init__(
        self,
        layers: list[tuple[np.ndarray, np.ndarray, str]],
        channels: int,
        width: int,
        height: int,
    ):
        super().__init__()
        if not layers:
            raise ValueError("need at least one layer")
        dims = (channels, width, height)
        fan_in = channels * width * height
        checked = []
        for i, (w, b, act) in enumerate(layers):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.size:
                raise ShapeError(f"layer {i}: weight/bias shapes do not chain")
            if w.shape[1] != fan_in:
                raise ShapeError(
                    f"layer {i} expects fan-in {w.shape[1]}, previous width is {fan_in}"
                )
            fan_in = w.shape[0]
            checked.append((w, b, act))
        self.layers = checked
        self.dims = dims
        self.class_count = fan_in

    def scores(self, x: Image) -> np.ndarray:
        self._require_dims(x, self.dims)
        v = x.data
        for w, b, act in self.layers:
            v = w @ v + b
            if act == "relu":
                v = np.maximum(v, 0.0)
            elif act == "tanh":
                v = np.tanh(v)
        return v

    def _decide(self, x: Image) -> Label:
        return int(np.argmax(self.scores(x)))


def make_random_mlp(
    seed: int,
    dims: tuple[int, int, int] = (1, 4, 4),
    hidden: int = 12,
    classes: int = 3,
) -> MlpModel:
    """Small seeded two-layer network, handy as a deterministic victim."""
    rng = np.random.default_rng(seed)
    n = dims[0] * dims[1] * dims[2]
    w0 = rng.normal(0.0, 1.0, size=(hidden, n))
    b0 = rng.normal(0.0, 0.1, size=hidden)
    w1 = rng.normal(0.0, 1.0, size=(classes, hidden))
    b1 = rng.normal(0.0, 0.1, size=classes)
    return MlpModel([(w0, b0, "relu"), (w1, b1, "linear")], *dims)


# ---------------------------------------------------------------------------
# Synthetic victims used by tests and the evaluation harness


class ConstantModel(Oracle):
    """Returns the same label for every input; useful in tests."""

    def __init__(self, label: int, class_count: int, dims: tuple[int, int, int]):
        super().__init__()
        self.label = label
        self.class_count = class_count
        self.dims = dims

    def _decide(self, x: Image) -> Label:
        self._require_dims(x, self.dims)
        return self.label


class LinearHalfspaceModel(Oracle):
    """Two-class victim whose boundary is the hyperplane w.x + b = 0.

    Label 1 on the non-negative side. The normal is known analytically,
    which makes this the reference victim for direction-estimate tests.
    """

    class_count = 2

    def __init__(self, weights: np.ndarray, bias: float, dims: tuple[int, int, int]):
        super().__init__()
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.size != dims[0] * dims[1] * dims[2]:
            raise ShapeError("weight vector does not match the input dims")
        self.weights = w
        self.bias = float(bias)
        self.dims = dims

    def _decide(self, x: Image) -> Label:
        self._require_dims(x, self.dims)
        return 1 if float(self.weights @ x.data + self.bias) >= 0.0 else 0


class QuantizedDetectorModel(Oracle):
    """Victim with plateaued, localized, multi-well decision logic.

    Each of D detectors watches one salient square tile (its mask) across
    all channels. The tile is scored in per-channel square units: a unit is
    a TEMPLATE unit when its pixels sit within ``rim`` of the detector's
    template values, a FALLBACK unit when they sit within ``rim`` of the
    low-contrast fallback value, and stray otherwise. The detector score
    sums the in-well squared residuals plus ``stray_penalty`` per stray
    unit, floor-quantized into ``band``-wide steps; the detector fires when
    the quantized score stays within its quantized threshold and at least
    ``min_template_units`` units still match the template. The decision is
    the lowest-index firing detector, or the background class D.

    The construction is deliberately hostile to ray-parameterized descent:
    with ``stray_penalty`` above the threshold no unit may ever sit between
    wells, and moving along a ray toward the source drags every unit out of
    its well simultaneously. Trading a template unit for a fallback unit
    requires jumping the whole unit across the gap in one move, which is
    exactly what closer-only block descent does when its step snaps a block
    onto the source values. Scores are piecewise constant inside wells'
    quantization bands, so probe queries see flat responses there.
    """

    def __init__(
        self,
        templates: np.ndarray,
        masks: np.ndarray,
        units: list[np.ndarray],
        band: float,
        thresholds: np.ndarray,
        dims: tuple[int, int, int],
        fallback_value: float = 0.5,
        rim_sq: float = 0.15,
        stray_penalty: float = 5.0,
        min_template_units: int = 1,
    ):
        super().__init__()
        templates = np.asarray(templates, dtype=np.float64)
        masks = np.asarray(masks, dtype=bool)
        thresholds = np.asarray(thresholds, dtype=np.float64)
        n = dims[0] * dims[1] * dims[2]
        if templates.ndim != 2 or templates.shape[1] != n:
            raise ShapeError("templates must be (D, C*W*H)")
        if masks.shape != templates.shape:
            raise ShapeError("masks must match the template array shape")
        if len(units) != templates.shape[0]:
            raise ValueError("need one unit index array per detector")
        if thresholds.shape != (templates.shape[0],) or (thresholds <= 0).any():
            raise ValueError("need one positive threshold per detector")
        if band <= 0 or rim_sq <= 0 or stray_penalty <= 0:
            raise ValueError("band, rim_sq, and stray_penalty must be positive")
        if min_template_units < 1:
            raise ValueError("min_template_units must be >= 1")
        self.templates = templates
        self.masks = masks
        self.units = [np.asarray(u, dtype=np.intp) for u in units]
        self.band = float(band)
        self.thresholds = thresholds
        self.dims = dims
        self.fallback_value = float(fallback_value)
        self.rim_sq = float(rim_sq)
        self.stray_penalty = float(stray_penalty)
        self.min_template_units = int(min_template_units)
        self.detector_count = templates.shape[0]
        self.class_count = self.detector_count + 1  # background is the last label
        self._fire_bands = np.floor(thresholds / band).astype(np.int64)

    # Dataset synthesis: tile regions stay within well reach of the fallback
    # value; pixels outside every tile are decision-irrelevant and vary a
    # lot, which is where sample diversity comes from.
    sample_mask_sigma = 0.06
    sample_background_sigma = 0.25

    @property
    def background_label(self) -> int:
        return self.detector_count

    def detector_score(self, d: int, x: np.ndarray) -> tuple[float, int]:
        """(summed unit score, number of template units) for one detector."""
        idx = self.units[d]
        vals = x[idx]
        da = ((vals - self.templates[d][idx]) ** 2).sum(axis=1)
        db = ((vals - self.fallback_value) ** 2).sum(axis=1)
        is_template = da <= self.rim_sq
        is_fallback = ~is_template & (db <= self.rim_sq)
        score = np.where(
            is_template, da, np.where(is_fallback, db, self.stray_penalty)
        ).sum()
        return float(score), int(is_template.sum())

    def fires(self, d: int, x: np.ndarray) -> bool:
        score, template_units = self.detector_score(d, x)
        if template_units < self.min_template_units:
            return False
        return np.floor(score / self.band) <= self._fire_bands[d]

    def _decide(self, x: Image) -> Label:
        self._require_dims(x, self.dims)
        data = x.data
        for d in range(self.detector_count):
            if self.fires(d, data):
                return d
        return self.background_label


def _spaced_tiles(
    dims: tuple[int, int, int], count: int, tile_side: int
) -> list[tuple[int, int]]:
    c, w, h = dims
    grid = int(np.ceil(np.sqrt(count)))
    if grid * tile_side > min(w, h):
        raise ValueError("tiles do not fit the spatial grid")
    row_off = np.linspace(0, w - tile_side, grid).astype(int)
    col_off = np.linspace(0, h - tile_side, grid).astype(int)
    return [(row_off[k // grid], col_off[k % grid]) for k in range(count)]


def tile_masks(dims: tuple[int, int, int], count: int, tile_side: int) -> np.ndarray:
    """One square spatial tile per detector, replicated across channels."""
    c, w, h = dims
    masks = np.zeros((count, c, w, h), dtype=bool)
    for k, (r0, c0) in enumerate(_spaced_tiles(dims, count, tile_side)):
        masks[k, :, r0:r0 + tile_side, c0:c0 + tile_side] = True
    return masks.reshape(count, c * w * h)


def tile_units(
    dims: tuple[int, int, int], count: int, tile_side: int, unit_side: int
) -> list[np.ndarray]:
    """Per-detector (units, unit_size) coordinate index arrays.

    Units partition each detector's tile into per-channel squares of side
    ``unit_side``; ``unit_side`` must divide ``tile_side``.
    """
    if tile_side % unit_side:
        raise ValueError("unit_side must divide tile_side")
    c, w, h = dims
    flat = np.arange(c * w * h).reshape(c, w, h)
    out = []
    for (r0, c0) in _spaced_tiles(dims, count, tile_side):
        units = []
        for ch in range(c):
            for dr in range(0, tile_side, unit_side):
                for dc in range(0, tile_side, unit_side):
                    block = flat[
                        ch, r0 + dr : r0 + dr + unit_side, c0 + dc : c0 + dc + unit_side
                    ]
                    units.append(block.reshape(-1))
        out.append(np.stack(units))
    return out


PLATEAU_PRESETS: dict[str, dict] = {
    "default": {"dims": (3, 12, 12), "detectors": 3, "tile": 6, "unit": 3,
                "rim_sq": 0.15, "stray_penalty": 5.0, "min_units": 4,
                "threshold": 2.0, "band": 0.25, "seed": 20901},
    "k10": {"dims": (1, 8, 8), "detectors": 9, "tile": 2, "unit": 2,
            "rim_sq": 0.15, "stray_penalty": 5.0, "min_units": 1,
            "threshold": 0.5, "band": 0.05, "seed": 40127},
    "mini": {"dims": (1, 4, 4), "detectors": 2, "tile": 2, "unit": 2,
             "rim_sq": 0.15, "stray_penalty": 5.0, "min_units": 1,
             "threshold": 0.5, "band": 0.05, "seed": 90210},
}


def plateau_model(preset: str = "default") -> QuantizedDetectorModel:
    """Fresh plateau victim from a named preset (usable as an oracle factory)."""
    try:
        spec = PLATEAU_PRESETS[preset]
    except KeyError:
        raise ValueError(
            f"unknown plateau preset {preset!r}; choose from {sorted(PLATEAU_PRESETS)}"
        ) from None
    dims = spec["dims"]
    n = dims[0] * dims[1] * dims[2]
    count = spec["detectors"]
    rng = np.random.default_rng(spec["seed"])
    masks = tile_masks(dims, count, spec["tile"])
    # Templates carry a salient random pattern on their tile over a
    # low-contrast background, so class samples differ only locally. Tile
    # values keep a margin away from the fallback value, otherwise a
    # template that lands near it would fire on low-contrast inputs and
    # shadow every higher-index detector.
    templates = np.full((count, n), 0.5)
    for d in range(count):
        size = int(masks[d].sum())
        offsets = rng.uniform(0.25, 0.5, size) * rng.choice((-1.0, 1.0), size)
        templates[d, masks[d]] = 0.5 + offsets
    units = tile_units(dims, count, spec["tile"], spec["unit"])
    thresholds = np.full(count, spec["threshold"])
    return QuantizedDetectorModel(
        templates, masks, units, spec["band"], thresholds, dims,
        rim_sq=spec["rim_sq"], stray_penalty=spec["stray_penalty"],
        min_template_units=spec["min_units"],
    )


# ---------------------------------------------------------------------------
# Region-based defense wrapper


class RegionBasedWrapper(Oracle):
    """Majority-vote defense over a hypercube around the query point.

    Each decide draws ``sample_count`` points uniformly from
    [x - radius, x + radius] (clamped to [0, 1] when the inner oracle is
    bounded), queries the inner oracle on every sample, and returns the
    modal label with ties broken toward the lowest index. The wrapper's own
    counter advances by one per decide; the inner counter by sample_count.
    """

    def __init__(
        self,
        inner: Oracle,
        radius: float = 0.02,
        sample_count: int = 50,
        rng_seed: int = 0,
    ):
        super().__init__()
        if radius < 0:
            raise ValueError("radius must be non-negative")
        if sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        self.inner = inner
        self.radius = float(radius)
        self.sample_count = int(sample_count)
        self.rng_seed = int(rng_seed)
        self._rng = np.random.default_rng(rng_seed)
        self.class_count = inner.class_count
        self.bounded = inner.bounded

    def _decide(self, x: Image) -> Label:
        n = x.pixel_count
        offsets = self._rng.uniform(
            -self.radius, self.radius, size=(self.sample_count, n)
        )
        votes = np.zeros(self.class_count, dtype=np.int64)
        for k in range(self.sample_count):
            sample = x.data + offsets[k]
            if self.inner.bounded:
                sample = np.clip(sample, 0.0, 1.0)
            label = self.inner.decide(
                Image(sample, x.channels, x.width, x.height)
            )
            votes[label] += 1
        return int(np.argmax(votes))
