"""Attack traces, distortion statistics, success rates, and heat maps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .core import Image
from .errors import ShapeError, TraceUnavailableError, UndefinedStatisticError

TRACE_SCHEMA_VERSION = 1


class Stage(str, Enum):
    """Which attack stage produced a trace record."""

    INIT = "INIT"
    G1 = "G1"
    BD = "BD"
    G2 = "G2"


@dataclass(frozen=True)
class TraceRecord:
    query_index: int
    distortion: float
    stage: Stage
    accepted: bool
    image: Image | None = None


@dataclass
class AttackTrace:
    """Query-indexed distortion history of one attack run."""

    pair_id: str
    records: list[TraceRecord] = field(default_factory=list)
    best_image: Image | None = None
    queries_used: int = 0

    def check_consistency(self) -> None:
        last_q = -1
        best = float("inf")
        for rec in self.records:
            if rec.query_index <= last_q:
                raise ValueError("query_index must be strictly increasing")
            last_q = rec.query_index
            if rec.accepted:
                if rec.distortion > best + 1e-12:
                    raise ValueError("accepted distortions must be non-increasing")
                best = min(best, rec.distortion)

    def final_distortion(self) -> float:
        best = float("inf")
        for rec in self.records:
            if rec.accepted and rec.distortion < best:
                best = rec.distortion
        return best


def distortion_at(trace: AttackTrace, q: int) -> float:
    """Running-best distortion among accepted records up to query q."""
    best = None
    for rec in trace.records:
        if rec.query_index > q:
            break
        if rec.accepted and (best is None or rec.distortion < best):
            best = rec.distortion
    if best is None:
        raise TraceUnavailableError(f"no accepted record at or before query {q}")
    return best


def asr(finals: Sequence[float], epsilon: float) -> float:
    """Fraction of final distortions at or below the limit epsilon."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if len(finals) == 0:
        raise UndefinedStatisticError("ASR over an empty result set")
    hits = sum(1 for f in finals if f <= epsilon)
    return hits / len(finals)


def summarize(finals: Sequence[float]) -> tuple[float, float, float]:
    """(mean, lower-median, population std) of final distortions."""
    if len(finals) == 0:
        raise UndefinedStatisticError("summary of an empty result set")
    arr = np.sort(np.asarray(finals, dtype=np.float64))
    mean = float(arr.mean())
    median = float(arr[(arr.size - 1) // 2])
    std = float(arr.std())  # population form, ddof=0
    return mean, median, std


def classify_hard(final: float, threshold: float, budget_met: bool = True) -> bool:
    """A pair is hard when the budget was spent and final >= threshold."""
    return bool(budget_met and final >= threshold)


@dataclass(frozen=True)
class HardCaseRecord:
    pair_id: str
    final_distortion: float
    budget: int
    threshold: float
    is_hard: bool


def perturbation_heat_map(x: Image, x_a: Image) -> np.ndarray:
    """Channel-summed, max-normalized per-pixel perturbation magnitude.

    Returns a (W, H) grid in [0, 1]. An identically-zero perturbation maps
    to an all-zero grid rather than dividing by zero.
    """
    if x.dims != x_a.dims:
        raise ShapeError(f"dimension mismatch: {x.dims} vs {x_a.dims}")
    diff = np.abs(x.as_chw() - x_a.as_chw())
    a = diff.sum(axis=0)
    peak = a.max()
    if peak == 0.0:
        return np.zeros_like(a)
    return a / peak


def phm_to_csv(grid: np.ndarray) -> str:
    lines = [",".join(repr(float(v)) for v in row) for row in grid]
    return "\n".join(lines) + "\n"


def phm_to_text(grid: np.ndarray) -> str:
    lines = [" ".join(f"{float(v):.6f}" for v in row) for row in grid]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# NDJSON trace serialization: a version header line, then one record per line.


def trace_ndjson_lines(trace: AttackTrace) -> Iterable[str]:
    for rec in trace.records:
        yield json.dumps(
            {
                "pair_id": trace.pair_id,
                "query_index": rec.query_index,
                "distortion": rec.distortion,
                "stage": rec.stage.value,
                "accepted": rec.accepted,
            },
            sort_keys=True,
        )


def write_traces_ndjson(path: str, traces: Iterable[AttackTrace]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            json.dumps(
                {"schema_version": TRACE_SCHEMA_VERSION, "kind": "attack-trace"},
                sort_keys=True,
            )
            + "\n"
        )
        for trace in traces:
            for line in trace_ndjson_lines(trace):
                fh.write(line + "\n")


def read_traces_ndjson(path: str) -> dict[str, list[TraceRecord]]:
    """Recover per-pair records (images are not serialized)."""
    out: dict[str, list[TraceRecord]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "attack-trace":
            raise ValueError(f"{path}: not a trace stream")
        for line in fh:
            obj = json.loads(line)
            out.setdefault(obj["pair_id"], []).append(
                TraceRecord(
                    query_index=obj["query_index"],
                    distortion=obj["distortion"],
                    stage=Stage(obj["stage"]),
                    accepted=obj["accepted"],
                )
            )
    return out
