"""Build slow/fast program pairs from judged submission logs.

The flow is ``build_trajectories`` -> ``relabel_runtimes`` -> ``make_pairs``
-> ``split_by_problem``; :func:`build_dataset` chains them. Every step is
deterministic given the corpus, the seed and a deterministic backend.
"""

from __future__ import annotations

import enum
import json
import math
import os
import re
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .backends import PerfBackend
from .core import Limits, PerfMeasurement, TestCase, sha256_text
from .harness import CompileConfig, Harness, Judgement, Verdict, judge, load_test_suite


class Status(str, enum.Enum):
    ACCEPTED = "Accepted"
    REJECTED = "Rejected"


class Split(str, enum.Enum):
    TRAIN = "Train"
    VAL = "Val"
    TEST = "Test"
    UNASSIGNED = "Unassigned"


class Provenance(str, enum.Enum):
    HUMAN = "Human"
    SELF_PLAY = "SelfPlay"


SPLIT_ORDER = (Split.TRAIN, Split.VAL, Split.TEST)


@dataclass(frozen=True)
class Submission:
    submission_id: str
    user_id: str
    problem_id: str
    timestamp: int
    language: str
    status: Status
    code: str

    @classmethod
    def from_json(cls, obj: Mapping, root: str | os.PathLike | None = None) -> Submission:
        """Parse one log record; raise ``ValueError`` naming the first problem found."""
        if not isinstance(obj, Mapping):
            raise ValueError("record is not a JSON object")
        required = ("submission_id", "user_id", "problem_id", "timestamp", "language", "status")
        for key in required:
            if key not in obj:
                raise ValueError(f"missing field {key!r}")
        if "code" in obj:
            code = obj["code"]
        elif "code_path" in obj:
            path = Path(root or ".") / obj["code_path"]
            try:
                code = path.read_text(encoding="utf-8")
            except OSError as exc:
                raise ValueError(f"unreadable code_path {obj['code_path']!r}: {exc.strerror}") from None
        else:
            raise ValueError("missing field 'code' (or 'code_path')")
        ts = obj["timestamp"]
        if isinstance(ts, bool) or not isinstance(ts, int) or ts < 0:
            raise ValueError(f"timestamp must be a non-negative integer, got {ts!r}")
        try:
            status = Status(obj["status"])
        except ValueError:
            raise ValueError(f"unknown status {obj['status']!r}") from None
        return cls(
            submission_id=str(obj["submission_id"]),
            user_id=str(obj["user_id"]),
            problem_id=str(obj["problem_id"]),
            timestamp=ts,
            language=str(obj["language"]),
            status=status,
            code=code,
        )


@dataclass(frozen=True)
class Reject:
    record_id: str
    reason: str

    def to_json(self) -> dict:
        return {"record_id": self.record_id, "reason": self.reason}


@dataclass(frozen=True)
class Trajectory:
    user_id: str
    problem_id: str
    programs: tuple[Submission, ...]

    def without(self, submission_ids: Iterable[str]) -> Trajectory:
        drop = set(submission_ids)
        return replace(self, programs=tuple(p for p in self.programs if p.submission_id not in drop))


@dataclass(frozen=True)
class ProgramPair:
    problem_id: str
    src: str
    tgt: str
    src_runtime: PerfMeasurement
    tgt_runtime: PerfMeasurement
    relative_improvement: float
    split: Split = Split.UNASSIGNED
    provenance: Provenance = Provenance.HUMAN
    src_id: str | None = None
    tgt_id: str | None = None
    class_id: str | None = None

    @property
    def pair_id(self) -> str:
        if self.src_id is not None and self.tgt_id is not None:
            return f"{self.problem_id}:{self.src_id}->{self.tgt_id}"
        return f"{self.problem_id}:{sha256_text(self.src)[:12]}->{sha256_text(self.tgt)[:12]}"

    @property
    def speedup(self) -> float:
        return self.src_runtime.value / self.tgt_runtime.value

    def to_json(self) -> dict:
        out = {
            "pair_id": self.pair_id,
            "problem_id": self.problem_id,
            "src_id": self.src_id,
            "tgt_id": self.tgt_id,
            "src": self.src,
            "tgt": self.tgt,
            "src_runtime": self.src_runtime.to_json(),
            "tgt_runtime": self.tgt_runtime.to_json(),
            "relative_improvement": self.relative_improvement,
            "split": self.split.value,
            "provenance": self.provenance.value,
        }
        if self.class_id is not None:
            out["class_id"] = self.class_id
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> ProgramPair:
        return cls(
            problem_id=obj["problem_id"],
            src=obj["src"],
            tgt=obj["tgt"],
            src_runtime=PerfMeasurement.from_json(obj["src_runtime"]),
            tgt_runtime=PerfMeasurement.from_json(obj["tgt_runtime"]),
            relative_improvement=float(obj["relative_improvement"]),
            split=Split(obj.get("split", Split.UNASSIGNED)),
            provenance=Provenance(obj.get("provenance", Provenance.HUMAN)),
            src_id=obj.get("src_id"),
            tgt_id=obj.get("tgt_id"),
            class_id=obj.get("class_id"),
        )


class MissingRuntimeError(KeyError):
    def __init__(self, program_id: str):
        self.program_id = program_id
        super().__init__(f"no runtime for program {program_id!r}")


def build_trajectories(records: Iterable[Submission | Mapping], rejects: list[Reject] | None = None) -> list[Trajectory]:
    """Group accepted submissions by (user, problem), ordered by (timestamp, id).

    Raw dict records are parsed here; malformed ones are appended to
    ``rejects`` instead of aborting the batch. Output is sorted by
    (problem_id, user_id).
    """
    groups: dict[tuple[str, str], list[Submission]] = defaultdict(list)
    for i, rec in enumerate(records):
        if not isinstance(rec, Submission):
            try:
                rec = Submission.from_json(rec)
            except ValueError as exc:
                if rejects is not None:
                    rid = rec.get("submission_id", f"#{i}") if isinstance(rec, Mapping) else f"#{i}"
                    rejects.append(Reject(str(rid), f"malformed: {exc}"))
                continue
        if rec.status is Status.ACCEPTED:
            groups[(rec.user_id, rec.problem_id)].append(rec)
    trajectories = [
        Trajectory(user, problem, tuple(sorted(subs, key=lambda s: (s.timestamp, s.submission_id))))
        for (user, problem), subs in groups.items()
    ]
    trajectories.sort(key=lambda t: (t.problem_id, t.user_id))
    return trajectories


def relative_improvement(slow: float, fast: float) -> float:
    return (slow - fast) / slow


def make_pairs(
    traj: Trajectory,
    runtimes: Mapping[str, PerfMeasurement],
    min_improvement: float = 0.10,
) -> list[ProgramPair]:
    """All (earlier, later) pairs whose relative improvement is strictly above the threshold."""
    progs = traj.programs
    for p in progs:
        if p.submission_id not in runtimes:
            raise MissingRuntimeError(p.submission_id)
    pairs = []
    for i in range(len(progs)):
        slow = runtimes[progs[i].submission_id]
        for j in range(i + 1, len(progs)):
            fast = runtimes[progs[j].submission_id]
            if fast.unit is not slow.unit:
                raise ValueError(f"unit mismatch between {progs[i].submission_id} and {progs[j].submission_id}")
            gain = relative_improvement(slow.value, fast.value)
            if gain > min_improvement:
                pairs.append(
                    ProgramPair(
                        problem_id=traj.problem_id,
                        src=progs[i].code,
                        tgt=progs[j].code,
                        src_runtime=slow,
                        tgt_runtime=fast,
                        relative_improvement=gain,
                        src_id=progs[i].submission_id,
                        tgt_id=progs[j].submission_id,
                    )
                )
    return pairs


@dataclass
class RelabelResult:
    runtimes: dict[str, PerfMeasurement]
    unmeasurable: dict[str, str] = field(default_factory=dict)


def relabel_runtimes(
    programs: Sequence[Submission],
    tests: Sequence[TestCase],
    backend: PerfBackend,
    *,
    compile_config: CompileConfig | None = None,
    limits: Limits | None = None,
    jobs: int = 1,
    allow_nondeterministic: bool = False,
) -> RelabelResult:
    """Measure each program as the sum of its per-test costs over ``tests``.

    Programs that fail to compile, fail any test or time out are reported as
    unmeasurable rather than given a runtime. Results are keyed by
    submission id and assembled in input order.
    """
    if not backend.descriptor.deterministic and not allow_nondeterministic:
        raise ValueError(f"backend {backend.descriptor.name!r} is not deterministic")
    harness = Harness(
        backend=backend,
        compile_config=compile_config or CompileConfig(),
        limits=limits or Limits(),
        fail_fast=True,
    )

    def one(sub: Submission):
        report = harness.evaluate_source(sub.code, tests, program_id=sub.submission_id)
        if judge(report) is Judgement.CORRECT:
            return sub.submission_id, report.total_runtime, None
        if not report.compile_ok:
            reason = "compile failure"
        else:
            bad = next(i for i, v in enumerate(report.verdicts) if v is not Verdict.PASS)
            reason = f"{report.verdicts[bad].value} on test {bad}"
            if report.diagnostics[bad]:
                reason += f" ({report.diagnostics[bad]})"
        return sub.submission_id, None, reason

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(one, programs))
    else:
        outcomes = [one(p) for p in programs]
    result = RelabelResult({})
    for sid, runtime, reason in outcomes:
        if runtime is not None:
            result.runtimes[sid] = runtime
        else:
            result.unmeasurable[sid] = reason
    return result


@dataclass(frozen=True)
class SplitAssignment:
    assignment: dict[str, Split]
    seed: int
    ratios: tuple[float, float, float]

    def problems(self, split: Split) -> list[str]:
        return sorted(p for p, s in self.assignment.items() if s is split)

    def apply(self, pairs: Iterable[ProgramPair]) -> list[ProgramPair]:
        return [replace(p, split=self.assignment.get(p.problem_id, Split.UNASSIGNED)) for p in pairs]

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "ratios": list(self.ratios),
            "splits": {p: self.assignment[p].value for p in sorted(self.assignment)},
        }


def _largest_remainder(n: int, ratios: Sequence[float]) -> list[int]:
    quotas = [round(r * n, 9) for r in ratios]
    counts = [math.floor(q) for q in quotas]
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    # every split with a nonzero ratio gets at least one problem
    for i, r in enumerate(ratios):
        if r > 0 and counts[i] == 0:
            donor = max(range(len(counts)), key=lambda j: (counts[j], -j))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def split_by_problem(
    pairs: Iterable[ProgramPair] | Iterable[str],
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> SplitAssignment:
    """Assign each problem to one of train/val/test.

    Problems are sorted, shuffled with a PCG64 stream seeded by ``seed`` and
    cut into contiguous blocks whose sizes come from largest-remainder
    rounding of ``ratios`` times the number of problems.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError("ratios must be three non-negative fractions")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    problems = sorted({p if isinstance(p, str) else p.problem_id for p in pairs})
    needed = sum(1 for r in ratios if r > 0)
    if len(problems) < needed:
        raise ValueError(f"{len(problems)} problem(s) cannot fill {needed} nonzero splits")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(len(problems))
    counts = _largest_remainder(len(problems), ratios)
    assignment: dict[str, Split] = {}
    pos = 0
    for split, count in zip(SPLIT_ORDER, counts):
        for idx in order[pos : pos + count]:
            assignment[problems[idx]] = split
        pos += count
    return SplitAssignment(assignment, seed, ratios)


def build_hq_subset(pairs: Iterable[ProgramPair], max_per_problem: int = 4) -> list[ProgramPair]:
    """Keep the ``max_per_problem`` highest-speedup pairs of every problem."""
    by_problem: dict[str, list[ProgramPair]] = defaultdict(list)
    for p in pairs:
        by_problem[p.problem_id].append(p)
    kept = []
    for problem in sorted(by_problem):
        ranked = sorted(
            by_problem[problem],
            key=lambda p: (-p.speedup, sha256_text(p.src), sha256_text(p.tgt)),
        )
        kept.extend(ranked[:max_per_problem])
    return kept


_HSPACE = re.compile(r"[ \t]+")


def normalize_code(code: str) -> str:
    lines = [_HSPACE.sub(" ", line).rstrip() for line in code.split("\n")]
    return "\n".join(lines)


@dataclass(frozen=True)
class DuplicateGroup:
    code_hash: str
    min_reported: float
    max_reported: float
    ratio: float
    submission_ids: tuple[str, ...]

    def to_json(self) -> dict:
        return {
            "code_hash": self.code_hash,
            "min_reported": self.min_reported,
            "max_reported": self.max_reported,
            "ratio": self.ratio,
            "submission_ids": list(self.submission_ids),
        }


def audit_duplicate_runtime_inconsistency(
    submissions: Iterable[Submission],
    reported_runtimes: Mapping[str, float],
    threshold: float = 1.1,
) -> list[DuplicateGroup]:
    """Find identical programs whose logged runtimes disagree by more than ``threshold``×.

    Submissions without a reported runtime are ignored.
    """
    groups: dict[str, list[Submission]] = defaultdict(list)
    for s in submissions:
        if s.submission_id in reported_runtimes:
            groups[sha256_text(normalize_code(s.code))].append(s)
    flagged = []
    for code_hash in sorted(groups):
        members = groups[code_hash]
        if len(members) < 2:
            continue
        times = [float(reported_runtimes[s.submission_id]) for s in members]
        lo, hi = min(times), max(times)
        if lo <= 0:
            continue
        if hi / lo > threshold:
            ids = tuple(sorted(s.submission_id for s in members))
            flagged.append(DuplicateGroup(code_hash, lo, hi, hi / lo, ids))
    return flagged


@dataclass
class DatasetResult:
    pairs: list[ProgramPair]
    splits: SplitAssignment | None
    rejects: list[Reject]
    trajectories: list[Trajectory]


def build_dataset(
    records: Iterable[Submission | Mapping],
    tests_root: str | os.PathLike,
    backend: PerfBackend,
    *,
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
    min_improvement: float = 0.10,
    compile_config: CompileConfig | None = None,
    limits: Limits | None = None,
    jobs: int = 1,
) -> DatasetResult:
    rejects: list[Reject] = []
    trajectories = build_trajectories(records, rejects)
    suites: dict[str, list[TestCase]] = {}
    pairs: list[ProgramPair] = []
    for traj in trajectories:
        if traj.problem_id not in suites:
            try:
                suites[traj.problem_id] = load_test_suite(tests_root, traj.problem_id)
            except (OSError, ValueError) as exc:
                suites[traj.problem_id] = []
                rejects.append(Reject(traj.problem_id, f"bad test suite: {exc}"))
        suite = suites[traj.problem_id]
        if not suite:
            rejects.extend(
                Reject(p.submission_id, f"no tests for problem {traj.problem_id}") for p in traj.programs
            )
            continue
        result = relabel_runtimes(
            traj.programs, suite, backend, compile_config=compile_config, limits=limits, jobs=jobs
        )
        rejects.extend(Reject(sid, f"unmeasurable: {why}") for sid, why in result.unmeasurable.items())
        pairs.extend(make_pairs(traj.without(result.unmeasurable), result.runtimes, min_improvement))
    # split over every problem in the corpus, including problems without pairs
    problems = sorted({t.problem_id for t in trajectories})
    splits = split_by_problem(problems, ratios, seed) if problems else None
    if splits is not None:
        pairs = splits.apply(pairs)
    return DatasetResult(pairs, splits, rejects, trajectories)


def read_jsonl(path: str | os.PathLike) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                rows.append(json.loads(line))
    return rows


def write_jsonl(path: str | os.PathLike, rows: Iterable[Mapping]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def load_submissions(
    path: str | os.PathLike, root: str | os.PathLike | None = None
) -> tuple[list[Submission], list[Reject]]:
    """Parse ``submissions.jsonl``; bad lines become rejects.

    ``code_path`` entries resolve against ``root`` (default: the file's directory).
    Duplicate submission ids keep the first occurrence.
    """
    root = Path(root) if root is not None else Path(path).parent
    subs: list[Submission] = []
    rejects: list[Reject] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            obj = None
            try:
                obj = json.loads(line)
                sub = Submission.from_json(obj, root)
            except (ValueError, TypeError) as exc:
                rid = obj.get("submission_id") if isinstance(obj, dict) else None
                rejects.append(Reject(str(rid or f"line {lineno}"), f"malformed: {exc}"))
                continue
            if sub.submission_id in seen:
                rejects.append(Reject(sub.submission_id, "duplicate submission_id"))
                continue
            seen.add(sub.submission_id)
            subs.append(sub)
    return subs, rejects
