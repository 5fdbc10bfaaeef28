"""Phantom-speedup audit: benchmark a program against itself and look at the ratios.

Any ratio other than 1.0 is pure measurement noise. A deterministic backend
gives an exactly degenerate report; a noisy one gives an inflated mean and a
fat upper tail.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .backends import BackendDescriptor, MeasurementError, PerfBackend
from .core import Artifact, Limits, TestCase

QUANTILES = (0.5, 0.95, 0.99)


@dataclass(frozen=True)
class AuditReport:
    n_pairs: int
    n_failed: int
    mean_ratio: float
    std_ratio: float
    quantiles: dict[float, float]
    backend: BackendDescriptor
    mean_inverse_ratio: float
    ratios: tuple[float, ...] = field(repr=False, default=())

    def to_json(self) -> dict:
        return {
            "n_pairs": self.n_pairs,
            "n_failed": self.n_failed,
            "mean_ratio": self.mean_ratio,
            "std_ratio": self.std_ratio,
            "quantiles": {str(q): v for q, v in self.quantiles.items()},
            "mean_inverse_ratio": self.mean_inverse_ratio,
            "backend": self.backend.to_json(),
        }

    def write(self, path: str | os.PathLike, csv_path: str | os.PathLike | None = None) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)
            f.write("\n")
        if csv_path is not None:
            with open(csv_path, "w", newline="", encoding="utf-8") as f:
                w = csv.writer(f)
                w.writerow(["pair", "ratio"])
                for i, r in enumerate(self.ratios):
                    w.writerow([i, repr(r)])


def summarize_ratios(ratios: np.ndarray, backend: BackendDescriptor, n_failed: int = 0) -> AuditReport:
    ratios = np.asarray(ratios, dtype=float)
    if ratios.size == 0:
        raise ValueError("no successful pairs to summarize")
    std = float(np.std(ratios, ddof=1)) if ratios.size > 1 else 0.0
    qs = {q: float(np.quantile(ratios, q)) for q in QUANTILES}
    return AuditReport(
        n_pairs=int(ratios.size),
        n_failed=n_failed,
        mean_ratio=float(np.mean(ratios)),
        std_ratio=std,
        quantiles=qs,
        backend=backend,
        mean_inverse_ratio=float(np.mean(1.0 / ratios)),
        ratios=tuple(float(r) for r in ratios),
    )


def audit_identical_pairs(
    artifact: Artifact,
    test: TestCase,
    n_pairs: int,
    backend: PerfBackend,
    limits: Limits | None = None,
) -> AuditReport:
    """Measure the same program twice per pair and record first / second.

    Pairs where either measurement fails are dropped and counted in
    ``n_failed``.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    limits = limits or Limits()
    ratios = []
    failed = 0
    for _ in range(n_pairs):
        try:
            first = backend.measure(artifact, test, limits)
            second = backend.measure(artifact, test, limits)
        except MeasurementError:
            failed += 1
            continue
        ratios.append(first.value / second.value)
    return summarize_ratios(np.array(ratios), backend.descriptor, failed)


def expected_ratio_mean(sigma: float) -> float:
    """Mean of X/Y for independent X, Y ~ lognormal(0, sigma): exp(sigma**2)."""
    return math.exp(sigma * sigma)


def calibrate_noise(target_mean_ratio: float, tolerance: float = 1e-9) -> float:
    """Find sigma with ``|exp(sigma**2) - target| <= tolerance`` by bisection."""
    if not math.isfinite(target_mean_ratio) or target_mean_ratio < 1.0:
        raise ValueError(f"mean ratio of identical programs cannot be {target_mean_ratio}; it is >= 1")
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    if target_mean_ratio == 1.0:
        return 0.0
    lo, hi = 0.0, 1.0
    while expected_ratio_mean(hi) < target_mean_ratio:
        hi *= 2.0
        if hi > 16:  # exp(sigma**2) overflows not far beyond this
            raise ValueError(f"target mean ratio {target_mean_ratio} is unattainable")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        err = expected_ratio_mean(mid) - target_mean_ratio
        if abs(err) <= tolerance:
            return mid
        if err < 0:
            lo = mid
        else:
            hi = mid
    mid = 0.5 * (lo + hi)
    if abs(expected_ratio_mean(mid) - target_mean_ratio) > tolerance:
        raise ValueError(f"bisection did not reach tolerance {tolerance}")
    return mid
