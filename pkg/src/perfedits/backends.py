"""Performance measurement backends.

Every backend exposes a :class:`BackendDescriptor` and a ``measure`` method
taking an artifact, a test case and resource limits. Three implementations
are provided:

* :class:`SimulatorBackend` drives an external cycle-level simulator through a
  command template and reads one key out of its stats file.
* :class:`ManifestBackend` looks measurements up in a JSON table; it is the
  workhorse for fixtures and offline runs.
* :class:`WallClockBackend` times the real process, or, with a
  :class:`NoiseModel` attached, multiplies a base cost by seeded lognormal
  noise. It exists to show why wall-clock timing produces phantom speedups.

Noise draws use numpy's ``PCG64`` bit generator with the ``Generator.lognormal``
method; both are specified by numpy to give identical streams on every
platform for a given seed.
"""

from __future__ import annotations

import enum
import json
import os
import shlex
import subprocess
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, runtime_checkable

import numpy as np

from .core import Artifact, Limits, PerfMeasurement, TestCase, Unit
from .proc import run_process


class ErrorCategory(str, enum.Enum):
    TIMEOUT = "Timeout"
    PROCESS_FAILED = "ProcessFailed"
    STATS_KEY_MISSING = "StatsKeyMissing"
    STATS_UNPARSABLE = "StatsUnparsable"
    MISSING_ENTRY = "MissingEntry"


class MeasurementError(Exception):
    def __init__(self, category: ErrorCategory, message: str = ""):
        self.category = ErrorCategory(category)
        super().__init__(f"{self.category.value}: {message}" if message else self.category.value)


@dataclass(frozen=True)
class BackendDescriptor:
    name: str
    deterministic: bool
    unit: Unit

    def to_json(self) -> dict:
        return {"name": self.name, "deterministic": self.deterministic, "unit": self.unit.value}


@runtime_checkable
class PerfBackend(Protocol):
    descriptor: BackendDescriptor

    def measure(self, artifact: Artifact, test: TestCase, limits: Limits) -> PerfMeasurement: ...


class ManifestBackend:
    """Table lookup: ``{program_id: {test_index: value}}``."""

    def __init__(self, manifest: Mapping[str, Mapping[str | int, float]], unit: Unit = Unit.COST_UNITS):
        self._table = {
            str(pid): {str(idx): float(v) for idx, v in per_test.items()}
            for pid, per_test in manifest.items()
        }
        self.descriptor = BackendDescriptor("manifest", True, Unit(unit))

    @classmethod
    def from_file(cls, path: str | os.PathLike, unit: Unit = Unit.COST_UNITS) -> ManifestBackend:
        with open(path, encoding="utf-8") as f:
            return cls(json.load(f), unit)

    def measure(self, artifact: Artifact, test: TestCase, limits: Limits | None = None) -> PerfMeasurement:
        for key in (artifact.program_id, artifact.digest_key):
            if key is not None and key in self._table:
                per_test = self._table[key]
                if str(test.index) in per_test:
                    return PerfMeasurement(per_test[str(test.index)], self.descriptor.unit)
                raise MeasurementError(
                    ErrorCategory.MISSING_ENTRY, f"no entry for test {test.index} of {key}"
                )
        raise MeasurementError(ErrorCategory.MISSING_ENTRY, f"no entry for program {artifact.program_id}")


def parse_stats(text: str, key: str) -> float:
    """Return the value of ``key`` from ``key value [# comment]`` lines.

    The first matching line wins. Raises :class:`MeasurementError` when the
    key is absent or its value is not a number.
    """
    for line in text.splitlines():
        parts = line.split()
        if len(parts) >= 2 and parts[0] == key:
            try:
                return float(parts[1])
            except ValueError:
                raise MeasurementError(
                    ErrorCategory.STATS_UNPARSABLE, f"{key} has non-numeric value {parts[1]!r}"
                ) from None
    raise MeasurementError(ErrorCategory.STATS_KEY_MISSING, f"{key} not found in stats")


@dataclass(frozen=True)
class SimulatorConfig:
    command: str
    stats_key: str = "simSeconds"
    timeout_s: float = 120.0
    max_parallel: int = 1

    @classmethod
    def from_json(cls, obj: Mapping) -> SimulatorConfig:
        unknown = set(obj) - {"command", "stats_key", "timeout_s", "max_parallel"}
        if unknown:
            raise ValueError(f"unknown simulator config key(s): {sorted(unknown)}")
        return cls(**obj)


class SimulatorBackend:
    """Run an external simulator per (binary, input) and parse its stats file.

    ``command`` is split with :func:`shlex.split` and each token is formatted
    with ``{binary}``, ``{input}`` and ``{stats_out}``. A gem5 syscall-emulation
    run might look like::

        gem5.opt --outdir={stats_out}.d configs/skylake.py --cmd {binary} --input {input}

    with a wrapper copying ``m5out/stats.txt`` to ``{stats_out}``.
    """

    def __init__(self, config: SimulatorConfig, unit: Unit = Unit.SIM_SECONDS):
        if config.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        self.config = config
        self.descriptor = BackendDescriptor("simulator", True, unit)
        self._slots = threading.BoundedSemaphore(config.max_parallel)

    def measure(self, artifact: Artifact, test: TestCase, limits: Limits | None = None) -> PerfMeasurement:
        if artifact.path is None:
            raise MeasurementError(ErrorCategory.PROCESS_FAILED, "artifact has no binary path")
        timeout = self.config.timeout_s
        if limits is not None:
            timeout = min(timeout, limits.wall_timeout_s)
        with self._slots, tempfile.TemporaryDirectory(prefix="perfedits-sim-") as tmp:
            input_path = Path(tmp) / "input.txt"
            input_path.write_bytes(test.input)
            stats_path = Path(tmp) / "stats.txt"
            argv = [
                tok.format(binary=artifact.path, input=input_path, stats_out=stats_path)
                for tok in shlex.split(self.config.command)
            ]
            try:
                proc = subprocess.run(argv, capture_output=True, timeout=timeout, cwd=tmp)
            except subprocess.TimeoutExpired:
                raise MeasurementError(ErrorCategory.TIMEOUT, f"simulator exceeded {timeout}s") from None
            except OSError as exc:
                raise MeasurementError(ErrorCategory.PROCESS_FAILED, str(exc)) from None
            if proc.returncode != 0:
                tail = proc.stderr.decode("utf-8", "replace")[-500:]
                raise MeasurementError(
                    ErrorCategory.PROCESS_FAILED, f"exit code {proc.returncode}: {tail}"
                )
            if not stats_path.exists():
                raise MeasurementError(ErrorCategory.STATS_KEY_MISSING, "simulator wrote no stats file")
            value = parse_stats(stats_path.read_text(errors="replace"), self.config.stats_key)
        if value <= 0:
            raise MeasurementError(ErrorCategory.STATS_UNPARSABLE, f"non-positive value {value}")
        return PerfMeasurement(value, self.descriptor.unit)


@dataclass
class NoiseModel:
    """Multiplicative lognormal(0, sigma) noise from a seeded PCG64 stream."""

    sigma: float
    seed: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)
    _lock: threading.Lock = field(init=False, repr=False, default_factory=threading.Lock)

    def __post_init__(self) -> None:
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ValueError(f"sigma must be a finite non-negative number, got {self.sigma}")
        self.reset()

    def reset(self) -> None:
        self._rng = np.random.Generator(np.random.PCG64(self.seed))

    def sample(self, size: int | None = None):
        with self._lock:
            if self.sigma == 0:
                return 1.0 if size is None else np.ones(size)
            return self._rng.lognormal(0.0, self.sigma, size)


class WallClockBackend:
    """Wall-clock timing of the real process, or simulated noisy timing.

    With ``noise`` set no process is started: the result is ``base`` times a
    noise draw, where ``base`` is a constant or another backend whose value is
    used as the noiseless cost.
    """

    def __init__(self, noise: NoiseModel | None = None, base: float | PerfBackend = 1.0):
        self.noise = noise
        self.base = base
        name = "wallclock-simulated" if noise is not None else "wallclock"
        self.descriptor = BackendDescriptor(name, False, Unit.WALL_SECONDS)

    def measure(self, artifact: Artifact, test: TestCase, limits: Limits | None = None) -> PerfMeasurement:
        limits = limits or Limits()
        if self.noise is not None:
            base = self.base
            if not isinstance(base, (int, float)):
                base = base.measure(artifact, test, limits).value
            return PerfMeasurement(float(base) * float(self.noise.sample()), Unit.WALL_SECONDS)
        if artifact.path is None:
            raise MeasurementError(ErrorCategory.PROCESS_FAILED, "artifact has no binary path")
        res = run_process([artifact.path], test.input, limits)
        if res.timed_out:
            raise MeasurementError(ErrorCategory.TIMEOUT, f"exceeded {limits.wall_timeout_s}s")
        if res.returncode != 0:
            raise MeasurementError(ErrorCategory.PROCESS_FAILED, f"exit code {res.returncode}")
        # perf_counter resolution floor keeps the value strictly positive
        return PerfMeasurement(max(res.elapsed_s, 1e-9), Unit.WALL_SECONDS)
