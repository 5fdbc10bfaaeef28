"""
Mining (slow, fast) pairs from submission histories
===================================================

A user's accepted submissions to one problem, in time order, form a
trajectory. Any earlier program that a later one beats by strictly more
than 10% yields a training pair.
"""

import numpy as np

from perfedits import PerfMeasurement
from perfedits.dataset import build_hq_subset, build_trajectories, make_pairs, split_by_problem

# Three submissions by one user; runtimes are per-test costs summed over the suite.
records = [
    {"submission_id": "a", "user_id": "u", "problem_id": "p", "timestamp": 1,
     "language": "cpp", "status": "Accepted", "code": "// v1"},
    {"submission_id": "b", "user_id": "u", "problem_id": "p", "timestamp": 2,
     "language": "cpp", "status": "Accepted", "code": "// v2"},
    {"submission_id": "c", "user_id": "u", "problem_id": "p", "timestamp": 3,
     "language": "cpp", "status": "Accepted", "code": "// v3"},
]
runtimes = {"a": PerfMeasurement(100.0), "b": PerfMeasurement(90.0), "c": PerfMeasurement(70.0)}

[traj] = build_trajectories(records)
pairs = make_pairs(traj, runtimes)

# (a, b) improves by exactly 10% and is left out; the rule is strict.
for p in pairs:
    print(f"{p.pair_id}: {p.relative_improvement:.3f} improvement, speedup {p.speedup:.2f}x")

# Splits are drawn per problem, so no problem leaks between train and test.
problems = [f"p{i:02d}" for i in range(20)]
assignment = split_by_problem(problems, (0.8, 0.1, 0.1), seed=0)
labels, counts = np.unique([s.value for s in assignment.assignment.values()], return_counts=True)
print(dict(zip(labels.tolist(), counts.tolist())))

# The high-quality subset keeps the fastest few pairs per problem.
print(len(build_hq_subset(pairs, max_per_problem=1)), "pair kept in the HQ subset")
