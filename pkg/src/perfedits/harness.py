"""Compile candidate programs, run them against a test suite and gate on correctness."""

from __future__ import annotations

import enum
import json
import logging
import os
import shlex
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .backends import MeasurementError, PerfBackend
from .core import Artifact, Limits, PerfMeasurement, TestCase, check_suite, sha256_text, total
from .proc import ProcResult, run_process

logger = logging.getLogger(__name__)

DEFAULT_COMPILER = "g++ {flags} {src} -o {out}"
DEFAULT_FLAGS = ("-std=c++17", "-O3")


class Verdict(str, enum.Enum):
    PASS = "Pass"
    WRONG_ANSWER = "WrongAnswer"
    RUNTIME_ERROR = "RuntimeError"
    TIMEOUT = "Timeout"


class Judgement(str, enum.Enum):
    CORRECT = "Correct"
    INCORRECT = "Incorrect"


class CompileError(Exception):
    def __init__(self, stderr: str, timed_out: bool = False):
        self.stderr = stderr
        self.timed_out = timed_out
        super().__init__("compilation timed out" if timed_out else f"compilation failed: {stderr[:200]}")


@dataclass(frozen=True)
class CompileConfig:
    """How to turn source text into a runnable artifact.

    ``compiler_command`` is tokenised with :func:`shlex.split`; ``{src}`` and
    ``{out}`` are substituted per token and a bare ``{flags}`` token expands to
    ``flags``. Without a ``{flags}`` token the flags are appended.
    """

    compiler_command: str = DEFAULT_COMPILER
    flags: tuple[str, ...] = DEFAULT_FLAGS
    timeout_s: float = 60.0
    source_suffix: str = ".cpp"

    def __post_init__(self) -> None:
        if self.timeout_s <= 0:
            raise ValueError("compile timeout_s must be positive")
        object.__setattr__(self, "flags", tuple(self.flags))

    def argv(self, src: Path, out: Path) -> list[str]:
        argv: list[str] = []
        saw_flags = False
        for tok in shlex.split(self.compiler_command):
            if tok == "{flags}":
                argv.extend(self.flags)
                saw_flags = True
            else:
                argv.append(tok.format(src=src, out=out))
        if not saw_flags:
            argv.extend(self.flags)
        return argv


def normalize_output(data: bytes) -> bytes:
    """Strip trailing whitespace on every line and trailing blank lines."""
    lines = [line.rstrip() for line in data.split(b"\n")]
    return b"\n".join(lines).rstrip(b"\n")


def outputs_match(actual: bytes, expected: bytes) -> bool:
    return normalize_output(actual) == normalize_output(expected)


def compile_program(
    source: str,
    cfg: CompileConfig,
    workdir: str | os.PathLike,
    program_id: str | None = None,
) -> Artifact:
    """Compile ``source`` into ``workdir``; raise :class:`CompileError` on failure."""
    digest = sha256_text(source)
    program_id = program_id or f"sha256:{digest}"
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    stem = digest[:16]
    src = workdir / f"{stem}{cfg.source_suffix}"
    out = workdir / f"{stem}.bin"
    src.write_text(source, encoding="utf-8")
    try:
        proc = subprocess.run(cfg.argv(src, out), capture_output=True, timeout=cfg.timeout_s, cwd=workdir)
    except subprocess.TimeoutExpired as exc:
        stderr = (exc.stderr or b"").decode("utf-8", "replace")
        raise CompileError(stderr, timed_out=True) from None
    except OSError as exc:
        raise CompileError(str(exc)) from None
    stderr = proc.stderr.decode("utf-8", "replace")
    if proc.returncode != 0 or not out.exists():
        raise CompileError(stderr or f"compiler exited with {proc.returncode}")
    return Artifact(program_id=program_id, path=out, source_digest=digest)


@dataclass(frozen=True)
class RunReport:
    program_id: str
    verdicts: tuple[Verdict, ...]
    measurements: tuple[PerfMeasurement | None, ...]
    compile_ok: bool
    total_runtime: PerfMeasurement | None
    diagnostics: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for v, m in zip(self.verdicts, self.measurements):
            if (v is Verdict.PASS) != (m is not None):
                raise ValueError("a measurement must exist exactly for passing tests")

    @classmethod
    def compile_failure(cls, program_id: str, message: str) -> RunReport:
        return cls(program_id, (), (), False, None, (message,))

    def to_json(self) -> dict:
        return {
            "program_id": self.program_id,
            "compile_ok": self.compile_ok,
            "verdicts": [v.value for v in self.verdicts],
            "measurements": [m.to_json() if m else None for m in self.measurements],
            "total_runtime": self.total_runtime.to_json() if self.total_runtime else None,
            "diagnostics": list(self.diagnostics),
        }


def judge(report: RunReport) -> Judgement:
    """Correct only if the program compiled and every attempted test passed."""
    if report.compile_ok and report.verdicts and all(v is Verdict.PASS for v in report.verdicts):
        return Judgement.CORRECT
    return Judgement.INCORRECT


@dataclass(frozen=True)
class Harness:
    """Immutable bundle of compile settings, limits and a measurement backend.

    Safe to share between threads; per-call state lives in temporary
    directories.
    """

    backend: PerfBackend
    compile_config: CompileConfig = field(default_factory=CompileConfig)
    limits: Limits = field(default_factory=Limits)
    jobs: int = 1
    fail_fast: bool = False
    runs_dir: Path | None = None

    def compile(self, source: str, workdir: str | os.PathLike, program_id: str | None = None) -> Artifact:
        return compile_program(source, self.compile_config, workdir, program_id)

    def execute(self, artifact: Artifact, stdin: bytes) -> ProcResult:
        if artifact.path is None:
            raise ValueError("artifact has no executable path")
        return run_process([artifact.path], stdin, self.limits)

    def _run_one(self, artifact: Artifact, test: TestCase) -> tuple[Verdict, PerfMeasurement | None, str]:
        res = self.execute(artifact, test.input)
        if res.timed_out:
            verdict, diag = Verdict.TIMEOUT, f"exceeded {self.limits.wall_timeout_s}s"
        elif res.output_overflow:
            verdict, diag = Verdict.RUNTIME_ERROR, "stdout exceeded cap"
        elif res.returncode != 0:
            verdict, diag = Verdict.RUNTIME_ERROR, f"exit code {res.returncode}"
        elif not outputs_match(res.stdout, test.expected_output):
            verdict, diag = Verdict.WRONG_ANSWER, ""
        else:
            verdict, diag = Verdict.PASS, ""
        measurement = None
        if verdict is Verdict.PASS:
            try:
                measurement = self.backend.measure(artifact, test, self.limits)
            except MeasurementError as exc:
                verdict, diag = Verdict.RUNTIME_ERROR, f"measurement failed: {exc}"
        if self.runs_dir is not None:
            self._persist(artifact, test, res, measurement, diag)
        return verdict, measurement, diag

    def _persist(self, artifact, test, res: ProcResult, measurement, diag: str) -> None:
        safe_id = artifact.program_id.replace("/", "_").replace(":", "_")
        d = Path(self.runs_dir) / safe_id / str(test.index)
        d.mkdir(parents=True, exist_ok=True)
        (d / "stdout").write_bytes(res.stdout)
        (d / "stderr").write_bytes(res.stderr)
        (d / "measurement.json").write_text(
            json.dumps({"measurement": measurement.to_json() if measurement else None, "diagnostic": diag})
        )

    def run_tests(self, artifact: Artifact, suite: Sequence[TestCase]) -> RunReport:
        if not suite:
            raise ValueError("test suite is empty")
        check_suite(suite)
        ordered = sorted(suite, key=lambda t: t.index)
        if self.fail_fast or self.jobs <= 1:
            results = []
            for test in ordered:
                results.append(self._run_one(artifact, test))
                if self.fail_fast and results[-1][0] is not Verdict.PASS:
                    break
        else:
            with ThreadPoolExecutor(max_workers=self.jobs) as pool:
                results = list(pool.map(lambda t: self._run_one(artifact, t), ordered))
        verdicts = tuple(r[0] for r in results)
        measurements = tuple(r[1] for r in results)
        all_pass = len(results) == len(ordered) and all(v is Verdict.PASS for v in verdicts)
        return RunReport(
            program_id=artifact.program_id,
            verdicts=verdicts,
            measurements=measurements,
            compile_ok=True,
            total_runtime=total(measurements) if all_pass else None,
            diagnostics=tuple(r[2] for r in results),
        )

    def evaluate_source(
        self,
        source: str,
        suite: Sequence[TestCase],
        program_id: str | None = None,
        workdir: str | os.PathLike | None = None,
    ) -> RunReport:
        """Compile then run; compile failures become a report, not an exception."""
        with tempfile.TemporaryDirectory(prefix="perfedits-build-", dir=workdir) as tmp:
            try:
                artifact = self.compile(source, tmp, program_id)
            except CompileError as exc:
                pid = program_id or f"sha256:{sha256_text(source)}"
                logger.debug("compile failed for %s: %s", pid, exc)
                return RunReport.compile_failure(pid, str(exc))
            return self.run_tests(artifact, suite)


def load_test_suite(tests_root: str | os.PathLike, problem_id: str) -> list[TestCase]:
    """Read ``<root>/<problem_id>/input.<k>.txt`` and ``output.<k>.txt`` for k = 0, 1, ..."""
    d = Path(tests_root) / problem_id
    suite = []
    k = 0
    while (d / f"input.{k}.txt").exists():
        out = d / f"output.{k}.txt"
        if not out.exists():
            raise FileNotFoundError(f"missing {out}")
        suite.append(TestCase(k, (d / f"input.{k}.txt").read_bytes(), out.read_bytes()))
        k += 1
    stray = [p.name for p in d.glob("input.*.txt")] if d.exists() else []
    if len(stray) != k:
        raise ValueError(f"test files for {problem_id} are not contiguous from 0")
    return suite
