"""
Phantom speedups from timing noise
==================================

Benchmark a program against itself many times. A deterministic cost model
always reports a ratio of exactly 1.0; noisy timing reports an inflated
mean ratio and a fat upper tail, i.e. "speedups" that do not exist.
"""

import numpy as np

from perfedits import Artifact, ManifestBackend, NoiseModel, TestCase, WallClockBackend
from perfedits.variance import audit_identical_pairs, calibrate_noise

program, test = Artifact("same"), TestCase(0, b"", b"")

deterministic = audit_identical_pairs(program, test, 500, ManifestBackend({"same": {"0": 1.0}}))
print("deterministic:", deterministic.mean_ratio, deterministic.std_ratio)

# Pick the noise level whose expected identical-pair ratio is 1.12.
sigma = calibrate_noise(1.12)
print(f"sigma for a 1.12x mean ratio: {sigma:.4f}")

noisy = audit_identical_pairs(program, test, 500, WallClockBackend(NoiseModel(sigma, seed=0)))
print(f"noisy: mean {noisy.mean_ratio:.3f}, std {noisy.std_ratio:.3f}, quantiles {noisy.quantiles}")

# How often would noise alone pass a 10% improvement filter?
ratios = np.array(noisy.ratios)
print(f"{np.mean(ratios > 1 / 0.9):.1%} of identical pairs look >10% faster")
