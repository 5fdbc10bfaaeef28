"""Shared value types: measurements, test cases, resource limits and artifacts."""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable


class Unit(str, enum.Enum):
    SIM_SECONDS = "SimSeconds"
    COST_UNITS = "CostUnits"
    WALL_SECONDS = "WallSeconds"


class UnitMismatchError(ValueError):
    """Raised when measurements in different units are combined."""


@dataclass(frozen=True)
class PerfMeasurement:
    value: float
    unit: Unit = Unit.COST_UNITS

    def __post_init__(self) -> None:
        value = float(self.value)
        if not math.isfinite(value) or value <= 0:
            raise ValueError(f"measurement must be a positive finite number, got {self.value!r}")
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "unit", Unit(self.unit))

    def __add__(self, other: PerfMeasurement) -> PerfMeasurement:
        if not isinstance(other, PerfMeasurement):
            return NotImplemented
        if other.unit is not self.unit:
            raise UnitMismatchError(f"cannot add {self.unit.value} and {other.unit.value}")
        return PerfMeasurement(self.value + other.value, self.unit)

    def to_json(self) -> dict:
        return {"value": self.value, "unit": self.unit.value}

    @classmethod
    def from_json(cls, obj: dict | float | int, default_unit: Unit = Unit.COST_UNITS) -> PerfMeasurement:
        if isinstance(obj, (int, float)):
            return cls(float(obj), default_unit)
        return cls(float(obj["value"]), Unit(obj.get("unit", default_unit)))


def total(measurements: Iterable[PerfMeasurement]) -> PerfMeasurement:
    """Sum measurements, refusing to mix units.

    Uses ``math.fsum`` so the result does not depend on the order of the
    per-test values.
    """
    items = list(measurements)
    if not items:
        raise ValueError("cannot aggregate an empty list of measurements")
    unit = items[0].unit
    for m in items[1:]:
        if m.unit is not unit:
            raise UnitMismatchError(f"cannot aggregate {unit.value} with {m.unit.value}")
    return PerfMeasurement(math.fsum(m.value for m in items), unit)


@dataclass(frozen=True)
class TestCase:
    index: int
    input: bytes
    expected_output: bytes

    __test__ = False  # keep pytest from collecting this class


def check_suite(suite: Iterable[TestCase]) -> None:
    indices = [t.index for t in suite]
    if sorted(indices) != list(range(len(indices))):
        raise ValueError(f"test indices must be unique and contiguous from 0, got {indices}")


@dataclass(frozen=True)
class Limits:
    wall_timeout_s: float = 120.0
    memory_bytes: int | None = None
    stdout_cap_bytes: int = 64 * 1024 * 1024
    isolate_network: bool = True

    def __post_init__(self) -> None:
        if self.wall_timeout_s <= 0:
            raise ValueError("wall_timeout_s must be positive")
        if self.memory_bytes is not None and self.memory_bytes <= 0:
            raise ValueError("memory_bytes must be positive when set")


@dataclass(frozen=True)
class Artifact:
    """A runnable program produced by compilation.

    ``source_digest`` identifies the source text; manifest lookups fall back
    to it when ``program_id`` has no entry.
    """

    program_id: str
    path: Path | None = None
    source_digest: str | None = None

    @property
    def digest_key(self) -> str | None:
        return f"sha256:{self.source_digest}" if self.source_digest else None


def sha256_text(text: str | bytes) -> str:
    if isinstance(text, str):
        text = text.encode("utf-8")
    return hashlib.sha256(text).hexdigest()
