"""Evaluation protocols: pair enumeration, campaigns, and report artifacts.

Datasets are synthetic labeled image sets (Gaussian blobs per class around
the victim's prototypes when it has them, uniform draws otherwise), always
verified against the oracle before use. Campaigns run each pair against a
fresh oracle instance with a pair-derived RNG, merge results in pair order,
and serialize to an NDJSON trace stream, a CSV summary, and a JSON
aggregate block. Every byte of a report is determined by the master seed,
the protocol config, and the attack.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .core import Criterion, Image, l2_distance
from .errors import (
    ConfigError,
    DegenerateStartError,
    InvalidEndpointsError,
    ProtocolInfeasibleError,
    QueryBudgetExceeded,
)
from .hybrid import rambo_attack
from .grad_attacks import BoundaryAttackStep, HopSkipJumpStep, SignOptStep, find_untargeted_start
from .metrics import (
    AttackTrace,
    HardCaseRecord,
    Stage,
    TraceRecord,
    asr,
    classify_hard,
    summarize,
    write_traces_ndjson,
)
from .oracles import Oracle, QuantizedDetectorModel
from .presets import ATTACK_NAMES, AttackSettings, rambo_config
from .stages import SwitchConfig, grad_estimation

REPORT_SCHEMA_VERSION = 1
SUMMARY_COLUMNS = (
    "pair_id", "source_label", "target_label", "start_id",
    "final_distortion", "queries_used", "is_hard",
)


@dataclass(frozen=True)
class LabeledImage:
    image_id: str
    image: Image
    label: int


@dataclass(frozen=True)
class PairSpec:
    pair_id: str
    source_id: str
    source_label: int
    target_label: int | None  # None in untargeted mode
    start_id: str  # "auto" when the start is synthesized at attack time
    seed: int


class ProtocolMode(str, Enum):
    EXHAUSTIVE = "exhaustive"
    BALANCED = "balanced"
    UNTARGETED = "untargeted"
    START_SENSITIVITY = "start-sensitivity"


@dataclass(frozen=True)
class ProtocolConfig:
    mode: ProtocolMode
    n_source_classes: int
    n_samples_per_class: int
    m_targets_per_group: int = 1
    starts_per_pair: int = 1
    budget: int = 1000
    hard_threshold: float = 0.9
    master_seed: int = 0

    def __post_init__(self):
        if self.n_source_classes < 1 or self.n_samples_per_class < 1:
            raise ConfigError("need at least one source class and one sample")
        if self.mode == ProtocolMode.START_SENSITIVITY and self.starts_per_pair < 2:
            raise ConfigError("start-sensitivity needs at least two starts per pair")


# ---------------------------------------------------------------------------
# Synthetic datasets


def synthesize_dataset(
    oracle: Oracle,
    n_per_class: int,
    seed: int,
    *,
    noise: float = 0.08,
    draw_cap: int = 400,
) -> list[LabeledImage]:
    """Labeled images verified against the oracle, n per class where possible.

    Prototype-based victims get Gaussian blobs around their class
    prototypes; anything else gets uniform draws bucketed by the oracle's
    decisions. Classes that cannot reach ``n_per_class`` within the draw
    cap simply stay short; protocols raise when that makes them infeasible.
    """
    dims_attr = getattr(oracle, "dims", None)
    if dims_attr is None:
        raise ConfigError("oracle does not expose input dims")
    c, w, h = dims_attr
    n = c * w * h
    out: list[LabeledImage] = []
    if isinstance(oracle, QuantizedDetectorModel):
        in_any_tile = oracle.masks.any(axis=0)
        for k in range(oracle.class_count):
            rng = np.random.default_rng([seed, 101, k])
            found = 0
            for i in range(draw_cap):
                # Tile regions hug the fallback value (they are what the
                # detectors score); everything else varies freely, which is
                # where sample diversity comes from.
                arr = oracle.fallback_value + rng.normal(
                    0.0, oracle.sample_mask_sigma, n
                )
                arr[~in_any_tile] += rng.normal(
                    0.0, oracle.sample_background_sigma, int((~in_any_tile).sum())
                )
                if k < oracle.detector_count:
                    tile = oracle.masks[k]
                    arr[tile] = oracle.templates[k][tile] + rng.normal(
                        0.0, noise, int(tile.sum())
                    )
                img = Image(np.clip(arr, 0.0, 1.0), c, w, h)
                if oracle.decide(img) == k:
                    out.append(LabeledImage(f"c{k}s{found:03d}", img, k))
                    found += 1
                    if found >= n_per_class:
                        break
    else:
        rng = np.random.default_rng([seed, 102])
        counts = [0] * oracle.class_count
        for i in range(draw_cap * oracle.class_count):
            if min(counts) >= n_per_class:
                break
            img = Image(rng.uniform(0.0, 1.0, n), c, w, h)
            label = oracle.decide(img)
            if counts[label] < n_per_class:
                out.append(LabeledImage(f"c{label}s{counts[label]:03d}", img, label))
                counts[label] += 1
    return out


def eligible_by_class(
    dataset: Sequence[LabeledImage], oracle: Oracle
) -> dict[int, list[LabeledImage]]:
    """Group the correctly classified images by their label."""
    groups: dict[int, list[LabeledImage]] = {}
    for item in dataset:
        if oracle.decide(item.image) == item.label:
            groups.setdefault(item.label, []).append(item)
    return groups


def _shuffled(items: list[LabeledImage], master_seed: int, tag: int) -> list[LabeledImage]:
    rng = np.random.default_rng([master_seed, 17, tag])
    return [items[i] for i in rng.permutation(len(items))]


def _pair_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, 29, index]).generate_state(1)[0])


def _need(groups: dict[int, list[LabeledImage]], label: int, count: int) -> list[LabeledImage]:
    have = groups.get(label, [])
    if len(have) < count:
        raise ProtocolInfeasibleError(
            f"class {label}: need {count} eligible images, have {len(have)}",
            class_label=label,
        )
    return have


def enumerate_pairs(
    cfg: ProtocolConfig, dataset: Sequence[LabeledImage], oracle: Oracle
) -> list[PairSpec]:
    """Deterministic pair list for the protocol under the master seed."""
    groups = eligible_by_class(dataset, oracle)
    classes = sorted(groups)
    shuffled = {k: _shuffled(groups[k], cfg.master_seed, k) for k in classes}
    rng = np.random.default_rng([cfg.master_seed, 23])
    pairs: list[PairSpec] = []

    def add(source: LabeledImage, target: int | None, start_id: str):
        idx = len(pairs)
        pairs.append(
            PairSpec(
                pair_id=f"pair{idx:05d}",
                source_id=source.image_id,
                source_label=source.label,
                target_label=target,
                start_id=start_id,
                seed=_pair_seed(cfg.master_seed, idx),
            )
        )

    if cfg.mode == ProtocolMode.EXHAUSTIVE:
        if len(classes) < 2:
            raise ProtocolInfeasibleError("exhaustive protocol needs >= 2 classes")
        for c in classes:
            sources = _need(shuffled, c, cfg.n_samples_per_class)[: cfg.n_samples_per_class]
            for source in sources:
                for t in classes:
                    if t == c:
                        continue
                    start = _need(shuffled, t, 1)[0]
                    add(source, t, start.image_id)
    elif cfg.mode == ProtocolMode.BALANCED:
        if cfg.n_source_classes > len(classes):
            raise ProtocolInfeasibleError(
                f"need {cfg.n_source_classes} classes, have {len(classes)}"
            )
        chosen = [classes[i] for i in rng.permutation(len(classes))[: cfg.n_source_classes]]
        for c in chosen:
            sources = _need(shuffled, c, cfg.n_samples_per_class)[: cfg.n_samples_per_class]
            others = [t for t in classes if t != c]
            if cfg.m_targets_per_group > len(others):
                raise ProtocolInfeasibleError(
                    f"class {c}: need {cfg.m_targets_per_group} distinct targets, "
                    f"have {len(others)}",
                    class_label=c,
                )
            grp_rng = np.random.default_rng([cfg.master_seed, 37, c])
            targets = [others[i] for i in grp_rng.permutation(len(others))[: cfg.m_targets_per_group]]
            for source in sources:
                for t in targets:
                    start = _need(shuffled, t, 1)[0]
                    add(source, t, start.image_id)
    elif cfg.mode == ProtocolMode.UNTARGETED:
        chosen = [classes[i] for i in rng.permutation(len(classes))[: cfg.n_source_classes]]
        for c in chosen:
            sources = _need(shuffled, c, cfg.n_samples_per_class)[: cfg.n_samples_per_class]
            for source in sources:
                add(source, None, "auto")
    elif cfg.mode == ProtocolMode.START_SENSITIVITY:
        chosen = [classes[i] for i in rng.permutation(len(classes))[: cfg.n_source_classes]]
        for c in chosen:
            sources = _need(shuffled, c, cfg.n_samples_per_class)[: cfg.n_samples_per_class]
            others = [t for t in classes if t != c]
            if not others:
                raise ProtocolInfeasibleError("start-sensitivity needs >= 2 classes")
            grp_rng = np.random.default_rng([cfg.master_seed, 41, c])
            target = others[int(grp_rng.integers(len(others)))]
            starts = _need(shuffled, target, cfg.starts_per_pair)[: cfg.starts_per_pair]
            for source in sources:
                for start in starts:
                    add(source, target, start.image_id)
    else:  # pragma: no cover - enum is closed
        raise ConfigError(f"unknown protocol mode {cfg.mode!r}")
    return pairs


# ---------------------------------------------------------------------------
# Single-pair attack runner


def run_attack(
    name: str,
    oracle: Oracle,
    x: Image,
    x_start: Image | None,
    criterion: Criterion,
    settings: AttackSettings,
    budget: int,
    rng: np.random.Generator,
    *,
    pair_id: str = "attack",
    record_images: bool = False,
) -> tuple[Image, AttackTrace]:
    """Run one named attack under a hard query budget and return its trace."""
    if name not in ATTACK_NAMES:
        raise ConfigError(f"unknown attack {name!r}; choose from {ATTACK_NAMES}")
    if budget < 1:
        raise ConfigError("budget must be positive")
    if name == "rambo-hsja":
        return rambo_attack(
            oracle, x, x_start, criterion, rambo_config(settings, "hsja", budget),
            rng, pair_id=pair_id, record_images=record_images,
        )
    if name == "rambo-sopt":
        return rambo_attack(
            oracle, x, x_start, criterion, rambo_config(settings, "sopt", budget),
            rng, pair_id=pair_id, record_images=record_images,
        )

    start_q = oracle.query_count
    ceiling = start_q + budget
    if oracle.max_queries is None or oracle.max_queries > ceiling:
        oracle.max_queries = ceiling
    if name == "boundary":
        step = BoundaryAttackStep(settings.boundary)
        window = settings.stage1_window_sopt
    elif name == "signopt":
        step = SignOptStep(settings.sopt)
        window = settings.stage1_window_sopt
    else:
        step = HopSkipJumpStep(settings.hsj)
        window = settings.stage1_window_hsja
    # Baselines run alone: switching disabled, the budget is the only stop.
    sw = SwitchConfig(window_T=min(window, budget), epsilon_s=0.0, budget_cap=budget)

    records: list[TraceRecord] = []
    best: Image | None = None
    best_d = float("inf")
    try:
        if criterion.satisfied(oracle.decide(x)):
            raise InvalidEndpointsError("source already satisfies the criterion")
        if x_start is None:
            if criterion.targeted:
                raise InvalidEndpointsError("targeted attacks need a starting image")
            x_start = find_untargeted_start(oracle, x, criterion, rng)
        elif not criterion.satisfied(oracle.decide(x_start)):
            raise InvalidEndpointsError("start does not satisfy the criterion")
        best, best_d = x_start, l2_distance(x, x_start)
        records.append(
            TraceRecord(
                oracle.query_count, best_d, Stage.INIT, True,
                x_start if record_images else None,
            )
        )
        img, recs = grad_estimation(
            oracle, x, x_start, criterion, step, sw, rng,
            stage=Stage.G1, verify_endpoints=False, init_tol=settings.init_tol,
            record_images=record_images,
        )
        records.extend(recs)
        d = l2_distance(x, img)
        if d < best_d:
            best, best_d = img, d
    except QueryBudgetExceeded:
        pass
    trace = AttackTrace(
        pair_id=pair_id,
        records=records,
        best_image=best,
        queries_used=oracle.query_count - start_q,
    )
    if best is None:
        raise InvalidEndpointsError("budget exhausted before a start could be verified")
    return best, trace


# ---------------------------------------------------------------------------
# Campaigns


@dataclass(frozen=True)
class PairOutcome:
    pair: PairSpec
    final_distortion: float
    queries_used: int
    is_hard: bool
    failed: bool
    trace: AttackTrace | None


@dataclass
class EvaluationReport:
    attack: str
    budget: int
    hard_threshold: float
    eps_grid: tuple[float, ...]
    master_seed: int
    outcomes: list[PairOutcome] = field(default_factory=list)

    def finals(self) -> list[float]:
        return [o.final_distortion for o in self.outcomes if not o.failed]

    def hard_cases(self) -> list[HardCaseRecord]:
        return [
            HardCaseRecord(
                pair_id=o.pair.pair_id,
                final_distortion=o.final_distortion,
                budget=self.budget,
                threshold=self.hard_threshold,
                is_hard=o.is_hard,
            )
            for o in self.outcomes
        ]

    def aggregates(self) -> dict:
        finals = self.finals()
        agg: dict = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "kind": "evaluation-aggregate",
            "attack": self.attack,
            "budget": self.budget,
            "master_seed": self.master_seed,
            "pair_count": len(self.outcomes),
            "failed_count": sum(1 for o in self.outcomes if o.failed),
            "hard_threshold": self.hard_threshold,
            "hard_count": sum(1 for o in self.outcomes if o.is_hard),
        }
        if finals:
            mean, median, std = summarize(finals)
            agg.update(mean=mean, median=median, std=std)
            agg["asr"] = [
                {"epsilon": e, "rate": asr(finals, e)} for e in self.eps_grid
            ]
        else:
            agg.update(mean=None, median=None, std=None)
            agg["asr"] = []
        return agg


def _resolve(dataset_by_id: dict[str, LabeledImage], image_id: str) -> LabeledImage:
    try:
        return dataset_by_id[image_id]
    except KeyError:
        raise ProtocolInfeasibleError(f"unknown image id {image_id!r}") from None


def _run_pair(
    dataset_by_id: dict[str, LabeledImage],
    pair: PairSpec,
    attack: str,
    oracle_factory: Callable[[], Oracle],
    budget: int,
    settings: AttackSettings,
    hard_threshold: float,
    keep_traces: bool,
) -> PairOutcome:
    source = _resolve(dataset_by_id, pair.source_id)
    if pair.target_label is None:
        criterion = Criterion(targeted=False, reference_label=pair.source_label)
        x_start = None
        init_d = float("inf")
    else:
        criterion = Criterion(targeted=True, reference_label=pair.target_label)
        x_start = _resolve(dataset_by_id, pair.start_id).image
        init_d = l2_distance(source.image, x_start)

    if budget == 0:
        # Degenerate budget: report the initialization distortion untouched.
        trace = AttackTrace(pair_id=pair.pair_id, records=[], best_image=x_start)
        if x_start is not None:
            trace.records.append(TraceRecord(0, init_d, Stage.INIT, True))
        return PairOutcome(
            pair, init_d, 0, classify_hard(init_d, hard_threshold), x_start is None,
            trace if keep_traces else None,
        )

    oracle = oracle_factory()
    rng = np.random.default_rng(pair.seed)
    try:
        best, trace = run_attack(
            attack, oracle, source.image, x_start, criterion, settings, budget, rng,
            pair_id=pair.pair_id,
        )
        final = l2_distance(source.image, best)
        failed = False
    except (InvalidEndpointsError, DegenerateStartError, ConfigError):
        final = init_d
        failed = True
        trace = AttackTrace(pair_id=pair.pair_id, records=[], best_image=None,
                            queries_used=oracle.query_count)
    return PairOutcome(
        pair,
        final,
        trace.queries_used,
        classify_hard(final, hard_threshold),
        failed,
        trace if keep_traces else None,
    )


def run_campaign(
    dataset: Sequence[LabeledImage],
    pairs: Sequence[PairSpec],
    attack: str,
    oracle_factory: Callable[[], Oracle],
    budget: int,
    settings: AttackSettings,
    *,
    eps_grid: tuple[float, ...] = (0.3, 0.6, 0.9),
    hard_threshold: float = 0.9,
    master_seed: int = 0,
    workers: int = 1,
    keep_traces: bool = True,
) -> EvaluationReport:
    """Attack every pair against a fresh oracle; merge results in pair order.

    Worker parallelism never changes the report: each pair owns its oracle
    and RNG, and the assembler writes results back by pair index.
    """
    if attack not in ATTACK_NAMES:
        raise ConfigError(f"unknown attack {attack!r}")
    dataset_by_id = {item.image_id: item for item in dataset}
    report = EvaluationReport(
        attack=attack, budget=budget, hard_threshold=hard_threshold,
        eps_grid=tuple(eps_grid), master_seed=master_seed,
    )

    def job(pair: PairSpec) -> PairOutcome:
        return _run_pair(
            dataset_by_id, pair, attack, oracle_factory, budget, settings,
            hard_threshold, keep_traces,
        )

    if workers <= 1:
        report.outcomes = [job(p) for p in pairs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            report.outcomes = list(pool.map(job, pairs))
    return report


def build_hard_set(report: EvaluationReport, threshold: float) -> list[PairSpec]:
    """Pairs whose final distortion reached the threshold at this budget."""
    return [
        o.pair for o in report.outcomes
        if classify_hard(o.final_distortion, threshold, budget_met=True)
    ]


def start_sensitivity_rows(report: EvaluationReport) -> list[tuple[str, float, float]]:
    """Per-source (mean, population std) of finals across its starts."""
    groups: dict[str, list[float]] = {}
    for o in report.outcomes:
        if not o.failed:
            groups.setdefault(o.pair.source_id, []).append(o.final_distortion)
    rows = []
    for source_id in sorted(groups):
        vals = np.asarray(groups[source_id])
        rows.append((source_id, float(vals.mean()), float(vals.std())))
    return rows


# ---------------------------------------------------------------------------
# Report artifacts


def summary_csv_text(report: EvaluationReport) -> str:
    lines = [",".join(SUMMARY_COLUMNS)]
    for o in report.outcomes:
        target = "" if o.pair.target_label is None else str(o.pair.target_label)
        lines.append(
            ",".join(
                [
                    o.pair.pair_id,
                    str(o.pair.source_label),
                    target,
                    o.pair.start_id,
                    repr(float(o.final_distortion)),
                    str(o.queries_used),
                    "1" if o.is_hard else "0",
                ]
            )
        )
    return "\n".join(lines) + "\n"


def aggregate_json_text(report: EvaluationReport) -> str:
    return json.dumps(report.aggregates(), sort_keys=True, indent=2) + "\n"


def write_report(report: EvaluationReport, outdir: str) -> None:
    import os

    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "summary.csv"), "w", encoding="utf-8") as fh:
        fh.write(summary_csv_text(report))
    with open(os.path.join(outdir, "aggregate.json"), "w", encoding="utf-8") as fh:
        fh.write(aggregate_json_text(report))
    traces = [o.trace for o in report.outcomes if o.trace is not None]
    write_traces_ndjson(os.path.join(outdir, "traces.ndjson"), traces)


def read_summary_csv(path: str) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header != list(SUMMARY_COLUMNS):
            raise ValueError(f"{path}: unexpected summary columns {header}")
        for line in fh:
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(SUMMARY_COLUMNS):
                continue
            rows.append(dict(zip(SUMMARY_COLUMNS, parts)))
    return rows
