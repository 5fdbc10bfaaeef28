"""Toolkit for building and evaluating performance-improving program edits."""

from .backends import (
    BackendDescriptor,
    ErrorCategory,
    ManifestBackend,
    MeasurementError,
    NoiseModel,
    PerfBackend,
    SimulatorBackend,
    SimulatorConfig,
    WallClockBackend,
    parse_stats,
)
from .core import Artifact, Limits, PerfMeasurement, TestCase, Unit, UnitMismatchError, total
from .harness import CompileConfig, CompileError, Harness, Judgement, RunReport, Verdict, compile_program, judge

__version__ = "0.1.0"

__all__ = [
    "Artifact",
    "BackendDescriptor",
    "CompileConfig",
    "CompileError",
    "ErrorCategory",
    "Harness",
    "Judgement",
    "Limits",
    "ManifestBackend",
    "MeasurementError",
    "NoiseModel",
    "PerfBackend",
    "PerfMeasurement",
    "RunReport",
    "SimulatorBackend",
    "SimulatorConfig",
    "TestCase",
    "Unit",
    "UnitMismatchError",
    "Verdict",
    "WallClockBackend",
    "compile_program",
    "judge",
    "parse_stats",
    "total",
]
