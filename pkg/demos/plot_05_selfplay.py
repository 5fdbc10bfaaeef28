"""
Deduplicating generated programs by behaviour
=============================================

Generated programs are run once on a shared input set; programs with the
same outputs on every input fall into one equivalence class. Rewrites that
are at least 5x faster become synthetic pairs, at most three per class.
"""

from perfedits import Harness, Limits, ManifestBackend, PerfMeasurement
from perfedits.harness import CompileConfig
from perfedits.selfplay import SyntheticCandidate, assemble_synthetic_pairs, group_equivalence

# Shell scripts stand in for compiled programs: "compiling" copies them executable.
harness = Harness(
    ManifestBackend({}),
    CompileConfig("install -m 755 {src} {out}", (), 10.0, ".sh"),
    Limits(wall_timeout_s=10),
)
programs = [
    ("loop_add", "#!/bin/sh\nread a b\ni=0\nwhile [ $i -lt $b ]; do a=$((a+1)); i=$((i+1)); done\necho $a\n"),
    ("fast_add", "#!/bin/sh\nread a b\necho $((a + b))\n"),
    ("mul", "#!/bin/sh\nread a b\necho $((a * b))\n"),
]
inputs = [b"1 2\n", b"3 3\n", b"0 5\n"]

classes = group_equivalence(programs, inputs, harness)
for c in classes:
    print(c.class_id, c.members)

runtimes = {"loop_add": PerfMeasurement(100.0)}
candidates = []
for i, speedup in enumerate([4.9, 5.0, 6.0, 8.0, 12.0]):
    runtimes[f"rw{i}"] = PerfMeasurement(100.0 / speedup)
    candidates.append(SyntheticCandidate(f"rw{i}", "loop_add", programs[0][1], programs[1][1]))

for p in assemble_synthetic_pairs(classes, candidates, runtimes):
    print(p.tgt_id, f"{p.speedup:.1f}x", p.class_id)
