"""Behavioural deduplication and assembly of synthetic (slow, fast) pairs.

Programs are compared through output signatures: every program runs once on
each input of a shared input set, so grouping n programs over m inputs
costs n * m executions instead of the O(n**2 * m) of pairwise comparison.
Two programs are equivalent when they produce identical normalized outputs
on every shared input, with crashes and timeouts recorded as a distinguished
failure value.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import tempfile
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .core import PerfMeasurement
from .dataset import ProgramPair, Provenance
from .harness import CompileError, Harness, normalize_output

FAIL = None  # output slot for a crash, timeout or compile failure

SELFPLAY_GENERATION = {"temperature": 1.0, "top_p": 0.9, "n": 5}
DEFAULT_INPUT_BUDGET = 50


class InputSetMismatchError(ValueError):
    """Signatures computed over different input sets cannot be compared."""


def inputs_digest(inputs: Sequence[bytes]) -> str:
    h = hashlib.sha256()
    for item in inputs:
        h.update(len(item).to_bytes(8, "big"))
        h.update(item)
    return h.hexdigest()


def _outputs_hash(outputs: Sequence[bytes | None]) -> str:
    h = hashlib.sha256()
    for out in outputs:
        if out is FAIL:
            h.update(b"F")
        else:
            h.update(b"O" + len(out).to_bytes(8, "big") + out)
    return h.hexdigest()


@dataclass(frozen=True)
class OutputSignature:
    program_id: str
    outputs: tuple[bytes | None, ...]
    inputs_digest: str
    hash: str

    @classmethod
    def from_outputs(cls, program_id: str, outputs: Sequence[bytes | None], inputs_digest: str) -> OutputSignature:
        outs = tuple(o if o is FAIL else normalize_output(o) for o in outputs)
        return cls(program_id, outs, inputs_digest, _outputs_hash(outs))

    def same_behaviour(self, other: OutputSignature) -> bool:
        if self.inputs_digest != other.inputs_digest:
            raise InputSetMismatchError(f"{self.program_id} and {other.program_id} use different inputs")
        return self.hash == other.hash and self.outputs == other.outputs

    def to_json(self) -> dict:
        return {
            "program_id": self.program_id,
            "inputs_digest": self.inputs_digest,
            "hash": self.hash,
            "outputs": [None if o is FAIL else base64.b64encode(o).decode("ascii") for o in self.outputs],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> OutputSignature:
        outs = tuple(None if o is None else base64.b64decode(o) for o in obj["outputs"])
        sig = cls.from_outputs(obj["program_id"], outs, obj["inputs_digest"])
        if "hash" in obj and obj["hash"] != sig.hash:
            raise ValueError(f"signature hash mismatch for {sig.program_id}")
        return sig


def output_signature(program_id: str, source: str, inputs: Sequence[bytes], harness: Harness) -> OutputSignature:
    """Run ``source`` on every input; a compile failure yields an all-FAIL signature."""
    if not inputs:
        raise ValueError("inputs must be nonempty")
    digest = inputs_digest(inputs)
    with tempfile.TemporaryDirectory(prefix="perfedits-sig-") as tmp:
        try:
            artifact = harness.compile(source, tmp, program_id)
        except CompileError:
            return OutputSignature.from_outputs(program_id, [FAIL] * len(inputs), digest)
        outputs = []
        for data in inputs:
            res = harness.execute(artifact, data)
            outputs.append(res.stdout if res.ok else FAIL)
    return OutputSignature.from_outputs(program_id, outputs, digest)


@dataclass(frozen=True)
class EquivalenceClass:
    class_id: str
    members: tuple[str, ...]
    representative: str

    def to_json(self) -> dict:
        return {"class_id": self.class_id, "members": list(self.members), "representative": self.representative}

    @classmethod
    def from_json(cls, obj: Mapping) -> EquivalenceClass:
        return cls(obj["class_id"], tuple(obj["members"]), obj["representative"])


def group_signatures(signatures: Iterable[OutputSignature]) -> list[EquivalenceClass]:
    """Partition signatures into classes of identical behaviour.

    Buckets by hash, then confirms on the full output list so a hash collision
    cannot merge different programs. Classes are numbered in order of their
    representative (smallest member id).
    """
    sigs = list(signatures)
    if sigs:
        digests = {s.inputs_digest for s in sigs}
        if len(digests) > 1:
            raise InputSetMismatchError("signatures were computed over different input sets")
    buckets: dict[str, list[list[OutputSignature]]] = defaultdict(list)
    for sig in sigs:
        groups = buckets[sig.hash]
        for group in groups:
            if group[0].outputs == sig.outputs:
                group.append(sig)
                break
        else:
            groups.append([sig])
    member_lists = sorted(
        (tuple(sorted(s.program_id for s in group)) for groups in buckets.values() for group in groups),
        key=lambda members: members[0],
    )
    return [
        EquivalenceClass(f"class-{i:05d}", members, members[0]) for i, members in enumerate(member_lists)
    ]


def group_equivalence(
    programs: Sequence[tuple[str, str]], inputs: Sequence[bytes], harness: Harness
) -> list[EquivalenceClass]:
    """Compute signatures for ``(program_id, source)`` pairs and partition them."""
    if not programs:
        return []
    return group_signatures(output_signature(pid, src, inputs, harness) for pid, src in programs)


def novelty_filter(generated: Iterable[OutputSignature], known: Iterable[OutputSignature]) -> list[OutputSignature]:
    """Generated signatures whose behaviour matches none of the known ones."""
    generated = list(generated)
    known = list(known)
    digests = {s.inputs_digest for s in generated} | {s.inputs_digest for s in known}
    if len(digests) > 1:
        raise InputSetMismatchError("generated and known signatures use different input sets")
    seen: dict[str, list[tuple[bytes | None, ...]]] = defaultdict(list)
    for s in known:
        seen[s.hash].append(s.outputs)
    return [s for s in generated if s.outputs not in seen.get(s.hash, [])]


def shared_inputs(suites: Iterable[Sequence[bytes]], budget: int = DEFAULT_INPUT_BUDGET) -> list[bytes]:
    """Union of test inputs in first-seen order, deduplicated and capped at ``budget``."""
    out: list[bytes] = []
    seen: set[bytes] = set()
    for suite in suites:
        for data in suite:
            if data not in seen:
                seen.add(data)
                out.append(data)
                if len(out) >= budget:
                    return out
    return out


@dataclass(frozen=True)
class SyntheticCandidate:
    """An optimized rewrite proposed for a synthetic slow program."""

    candidate_id: str
    slow_id: str
    slow_src: str
    fast_src: str
    problem_id: str = "synthetic"
    correct: bool = True

    @classmethod
    def from_json(cls, obj: Mapping) -> SyntheticCandidate:
        return cls(
            candidate_id=obj["candidate_id"],
            slow_id=obj["slow_id"],
            slow_src=obj["slow_src"],
            fast_src=obj["fast_src"],
            problem_id=obj.get("problem_id", "synthetic"),
            correct=bool(obj.get("correct", True)),
        )


def assemble_synthetic_pairs(
    classes: Iterable[EquivalenceClass],
    candidates: Iterable[SyntheticCandidate],
    runtimes: Mapping[str, PerfMeasurement],
    min_speedup: float = 5.0,
    max_per_class: int = 3,
) -> list[ProgramPair]:
    """Keep correct rewrites at least ``min_speedup``× faster, at most ``max_per_class`` per class.

    ``runtimes`` holds the slow program ids and the candidate ids. Within a
    class, pairs are ranked by speedup (descending) then candidate id.
    Candidates whose slow program belongs to no class are ignored.
    """
    class_of = {}
    for cls in classes:
        for member in cls.members:
            class_of[member] = cls.class_id
    per_class: dict[str, list[tuple[float, str, ProgramPair]]] = defaultdict(list)
    for cand in candidates:
        if not cand.correct or cand.slow_id not in class_of:
            continue
        slow = runtimes[cand.slow_id]
        fast = runtimes[cand.candidate_id]
        if slow.unit is not fast.unit:
            raise ValueError(f"unit mismatch for candidate {cand.candidate_id}")
        ratio = slow.value / fast.value
        if ratio < min_speedup:
            continue
        cid = class_of[cand.slow_id]
        pair = ProgramPair(
            problem_id=cand.problem_id,
            src=cand.slow_src,
            tgt=cand.fast_src,
            src_runtime=slow,
            tgt_runtime=fast,
            relative_improvement=(slow.value - fast.value) / slow.value,
            provenance=Provenance.SELF_PLAY,
            src_id=cand.slow_id,
            tgt_id=cand.candidate_id,
            class_id=cid,
        )
        per_class[cid].append((ratio, cand.candidate_id, pair))
    kept = []
    for cid in sorted(per_class):
        ranked = sorted(per_class[cid], key=lambda t: (-t[0], t[1]))
        kept.extend(p for _, _, p in ranked[:max_per_class])
    return kept


def write_classes(path: str | os.PathLike, classes: Sequence[EquivalenceClass]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump([c.to_json() for c in classes], f, indent=2)
        f.write("\n")


def read_classes(path: str | os.PathLike) -> list[EquivalenceClass]:
    with open(path, encoding="utf-8") as f:
        return [EquivalenceClass.from_json(c) for c in json.load(f)]
