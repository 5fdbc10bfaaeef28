"""
Compiling and judging a C++ submission
======================================

The harness compiles with g++ -O3, runs each test under a wall-clock
limit, and judges a program correct only if every test passes. Runtime
comes from the configured backend; here a manifest of per-test costs.
"""

import shutil
import sys
import tempfile

from perfedits import CompileConfig, Harness, Limits, ManifestBackend, TestCase, judge

if shutil.which("g++") is None:
    sys.exit("g++ not found; this demo needs a C++ toolchain")

source = r"""
#include <cstdio>
int main() {
    long long n, s = 0;
    if (scanf("%lld", &n) != 1) return 1;
    for (long long i = 1; i <= n; i++) s += i;
    printf("%lld\n", s);
}
"""
suite = [TestCase(0, b"10\n", b"55\n"), TestCase(1, b"100\n", b"5050\n"), TestCase(2, b"3\n", b"7\n")]

harness = Harness(ManifestBackend({"sum": {"0": 1.0, "1": 2.0, "2": 1.0}}), CompileConfig(), Limits(wall_timeout_s=5))
with tempfile.TemporaryDirectory() as tmp:
    report = harness.evaluate_source(source, suite, program_id="sum", workdir=tmp)

# The last expected output is wrong on purpose: one failing test is enough,
# and an Incorrect program gets no total runtime.
print([v.value for v in report.verdicts], judge(report).value, report.total_runtime)

# With the expected output fixed, every test passes and the costs add up.
suite[2] = TestCase(2, b"3\n", b"6\n")
with tempfile.TemporaryDirectory() as tmp:
    report = harness.evaluate_source(source, suite, program_id="sum", workdir=tmp)
print([v.value for v in report.verdicts], judge(report).value, report.total_runtime)
