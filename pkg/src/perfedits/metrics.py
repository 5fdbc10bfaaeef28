"""Evaluation metrics: speedup, percent optimized, percent correct and Best@k."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .core import PerfMeasurement, UnitMismatchError
from .harness import Judgement

OPT_THRESHOLD = 0.10


def speedup(old: PerfMeasurement, new: PerfMeasurement) -> float:
    """``old / new``, unclamped."""
    if old.unit is not new.unit:
        raise UnitMismatchError(f"cannot compare {old.unit.value} with {new.unit.value}")
    return old.value / new.value


@dataclass(frozen=True)
class Candidate:
    sample_index: int
    verdict: Judgement
    new_runtime: PerfMeasurement | None = None

    @property
    def correct(self) -> bool:
        return self.verdict is Judgement.CORRECT and self.new_runtime is not None

    def to_json(self) -> dict:
        return {
            "sample_index": self.sample_index,
            "verdict": self.verdict.value,
            "new_runtime": self.new_runtime.to_json() if self.new_runtime else None,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> Candidate:
        rt = obj.get("new_runtime")
        return cls(
            int(obj["sample_index"]),
            Judgement(obj["verdict"]),
            PerfMeasurement.from_json(rt) if rt is not None else None,
        )


def clamped_speedup(old: PerfMeasurement, candidate: Candidate | None) -> float:
    """Speedup floored at 1.0; incorrect or missing candidates score 1.0."""
    if candidate is None or not candidate.correct:
        return 1.0
    return max(1.0, speedup(old, candidate.new_runtime))


def best_of_k(candidates: Sequence[Candidate], k: int | None = None) -> int | None:
    """Sample index of the fastest correct candidate among the first ``k`` samples.

    Candidates are ordered by ``sample_index`` before truncation; ties on
    runtime go to the lowest index.
    """
    pool = sorted(candidates, key=lambda c: c.sample_index)
    if k is not None:
        if k < 1:
            raise ValueError("k must be >= 1")
        pool = pool[:k]
    correct = [c for c in pool if c.correct]
    if not correct:
        return None
    return min(correct, key=lambda c: (c.new_runtime.value, c.sample_index)).sample_index


def counted_optimized(old: PerfMeasurement, candidate: Candidate | None, threshold: float = OPT_THRESHOLD) -> bool:
    """Correct and at least ``threshold`` relative improvement (inclusive)."""
    if candidate is None or not candidate.correct:
        return False
    if old.unit is not candidate.new_runtime.unit:
        raise UnitMismatchError("old and new runtimes use different units")
    o, n = old.value, candidate.new_runtime.value
    gain = (o - n) / o
    # inclusive boundary, tolerant of representation error in (o - n) / o
    return gain >= threshold or math.isclose(gain, threshold, rel_tol=1e-12, abs_tol=1e-15)


@dataclass(frozen=True)
class EvalRow:
    example_id: str
    old_runtime: PerfMeasurement
    candidates: tuple[Candidate, ...]
    best: int | None
    clamped_speedup: float
    counted_optimized: bool

    @property
    def any_correct(self) -> bool:
        return any(c.correct for c in self.candidates)

    def to_json(self) -> dict:
        return {
            "example_id": self.example_id,
            "old_runtime": self.old_runtime.to_json(),
            "candidates": [c.to_json() for c in self.candidates],
            "best": self.best,
            "clamped_speedup": self.clamped_speedup,
            "counted_optimized": self.counted_optimized,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> EvalRow:
        return cls(
            obj["example_id"],
            PerfMeasurement.from_json(obj["old_runtime"]),
            tuple(Candidate.from_json(c) for c in obj["candidates"]),
            obj.get("best"),
            float(obj["clamped_speedup"]),
            bool(obj["counted_optimized"]),
        )


def evaluate_row(
    example_id: str,
    old_runtime: PerfMeasurement,
    candidates: Iterable[Candidate],
    k: int | None = None,
    threshold: float = OPT_THRESHOLD,
) -> EvalRow:
    """Score one example with Best@k over its first ``k`` samples."""
    pool = sorted(candidates, key=lambda c: c.sample_index)
    if k is not None:
        pool = pool[:k]
    best = best_of_k(pool)
    chosen = next((c for c in pool if c.sample_index == best), None)
    return EvalRow(
        example_id=example_id,
        old_runtime=old_runtime,
        candidates=tuple(pool),
        best=best,
        clamped_speedup=clamped_speedup(old_runtime, chosen),
        counted_optimized=counted_optimized(old_runtime, chosen, threshold),
    )


@dataclass(frozen=True)
class MetricsSummary:
    pct_opt: float
    mean_speedup: float
    pct_correct: float
    k: int | None
    n_rows: int
    geomean_speedup: float

    def to_json(self) -> dict:
        return {
            "pct_opt": self.pct_opt,
            "mean_speedup": self.mean_speedup,
            "pct_correct": self.pct_correct,
            "k": self.k,
            "n_rows": self.n_rows,
            "secondary_geomean_speedup": self.geomean_speedup,
        }


def aggregate(rows: Sequence[EvalRow], k: int | None = None) -> MetricsSummary:
    """Corpus-level %Opt, arithmetic-mean clamped speedup and %Correct.

    Sums use ``math.fsum`` so the result does not depend on row order.
    The geometric mean is reported as a secondary statistic only.
    """
    if not rows:
        raise ValueError("cannot aggregate an empty set of rows")
    n = len(rows)
    return MetricsSummary(
        pct_opt=sum(r.counted_optimized for r in rows) / n,
        mean_speedup=math.fsum(r.clamped_speedup for r in rows) / n,
        pct_correct=sum(r.any_correct for r in rows) / n,
        k=k,
        n_rows=n,
        geomean_speedup=math.exp(math.fsum(math.log(r.clamped_speedup) for r in rows) / n),
    )


def write_summary(path: str | os.PathLike, summary: MetricsSummary, config: Mapping | None = None) -> None:
    payload = summary.to_json()
    payload["config"] = dict(config or {})
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
