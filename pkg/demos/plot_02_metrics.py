"""
Scoring candidate programs: %Opt, speedup and Best@k
====================================================

Each example has a source runtime and k sampled rewrites. Best@k keeps the
fastest correct rewrite; an incorrect or slower result counts as a speedup
of 1.0.
"""

import numpy as np

from perfedits import Judgement, PerfMeasurement
from perfedits.metrics import Candidate, aggregate, evaluate_row

C, I = Judgement.CORRECT, Judgement.INCORRECT


def cands(*samples):
    return [Candidate(i, v, PerfMeasurement(rt)) for i, (v, rt) in enumerate(samples)]


rows = [
    evaluate_row("exactly-10pct", PerfMeasurement(100), cands((C, 90))),
    evaluate_row("second-sample", PerfMeasurement(100), cands((I, 10), (C, 50))),
    evaluate_row("slower", PerfMeasurement(10), cands((C, 12))),
    evaluate_row("all-wrong", PerfMeasurement(40), cands((I, 5))),
    evaluate_row("best-of-two", PerfMeasurement(100), cands((C, 91), (C, 25))),
]
for r in rows:
    print(f"{r.example_id:>14}: best sample {r.best}, speedup {r.clamped_speedup:.3f}, counted {r.counted_optimized}")

summary = aggregate(rows)
print(summary.to_json())

# More samples can only help: sweep k on a random pool.
rng = np.random.default_rng(0)
old = PerfMeasurement(100.0)
pool = [
    [Candidate(j, C if rng.random() < 0.4 else I, PerfMeasurement(float(rng.uniform(20, 150)))) for j in range(8)]
    for _ in range(200)
]
for k in (1, 2, 4, 8):
    s = aggregate([evaluate_row(str(i), old, c, k) for i, c in enumerate(pool)], k)
    print(f"k={k}: %Opt {s.pct_opt:.2f}  mean speedup {s.mean_speedup:.3f}  %Correct {s.pct_correct:.2f}")
