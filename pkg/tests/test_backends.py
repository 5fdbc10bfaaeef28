from __future__ import annotations

import math
import shlex
import textwrap

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import PYTHON
from perfedits import (
    Artifact,
    ErrorCategory,
    Limits,
    ManifestBackend,
    MeasurementError,
    NoiseModel,
    PerfMeasurement,
    SimulatorBackend,
    SimulatorConfig,
    TestCase,
    Unit,
    UnitMismatchError,
    WallClockBackend,
    parse_stats,
    total,
)
from perfedits.core import sha256_text

CASE = TestCase(0, b"1 2\n", b"3\n")

# A stand-in simulator following the driver contract: argv is
# <binary> <input> <stats_out>, and the stats file holds "key value" lines.
FAKE_SIM = textwrap.dedent(
    """
    import sys
    mode = sys.argv[1]
    binary, inp, stats = sys.argv[2:5]
    if mode == "fail":
        sys.stderr.write("simulator crashed\\n")
        sys.exit(1)
    if mode == "hang":
        import time
        time.sleep(30)
    with open(stats, "w") as f:
        f.write("---------- Begin Simulation Statistics ----------\\n")
        if mode == "ok":
            f.write("simSeconds                                   0.002613   # Number of seconds simulated\\n")
            f.write("simSeconds                                   9.9   # later duplicate ignored\\n")
        elif mode == "garbage":
            f.write("simSeconds nan-ish\\n")
        f.write("hostSeconds 1.5\\n")
    """
)


@pytest.fixture
def fake_sim(tmp_path):
    script = tmp_path / "fake_sim.py"
    script.write_text(FAKE_SIM)

    def make(mode: str, **kw) -> SimulatorBackend:
        cmd = f"{shlex.quote(PYTHON)} {shlex.quote(str(script))} {mode} {{binary}} {{input}} {{stats_out}}"
        return SimulatorBackend(SimulatorConfig(cmd, **kw))

    return make


@pytest.fixture
def artifact(tmp_path):
    p = tmp_path / "prog"
    p.write_text("#!/bin/sh\ncat\n")
    p.chmod(0o755)
    return Artifact("prog", p, sha256_text("x"))


class TestManifest:
    def test_lookup_by_program_id(self):
        b = ManifestBackend({"a": {"0": 2.5, "1": 3}})
        assert b.measure(Artifact("a"), TestCase(1, b"", b"")) == PerfMeasurement(3.0)
        assert b.descriptor.deterministic

    def test_fallback_to_digest(self):
        digest = sha256_text("int main(){}")
        b = ManifestBackend({f"sha256:{digest}": {"0": 7}})
        assert b.measure(Artifact("unknown", None, digest), CASE).value == 7.0

    def test_missing_program(self):
        with pytest.raises(MeasurementError) as exc:
            ManifestBackend({}).measure(Artifact("a"), CASE)
        assert exc.value.category is ErrorCategory.MISSING_ENTRY

    def test_missing_test_index(self):
        with pytest.raises(MeasurementError) as exc:
            ManifestBackend({"a": {"1": 1}}).measure(Artifact("a"), CASE)
        assert exc.value.category is ErrorCategory.MISSING_ENTRY

    def test_repeated_measurement_identical(self):
        b = ManifestBackend({"a": {"0": 0.1}})
        assert {b.measure(Artifact("a"), CASE) for _ in range(20)} == {PerfMeasurement(0.1)}

    def test_from_file(self, tmp_path):
        f = tmp_path / "m.json"
        f.write_text('{"a": {"0": 4}}')
        assert ManifestBackend.from_file(f, Unit.SIM_SECONDS).measure(Artifact("a"), CASE).unit is Unit.SIM_SECONDS


class TestParseStats:
    def test_first_match_with_comment(self):
        text = "x 1\nsimSeconds   0.5  # comment\nsimSeconds 2\n"
        assert parse_stats(text, "simSeconds") == 0.5

    def test_prefix_key_not_matched(self):
        with pytest.raises(MeasurementError) as exc:
            parse_stats("simSecondsTotal 3\n", "simSeconds")
        assert exc.value.category is ErrorCategory.STATS_KEY_MISSING

    def test_unparsable(self):
        with pytest.raises(MeasurementError) as exc:
            parse_stats("simSeconds abc\n", "simSeconds")
        assert exc.value.category is ErrorCategory.STATS_UNPARSABLE

    def test_scientific_notation(self):
        assert parse_stats("simSeconds 2.5e-03\n", "simSeconds") == 0.0025


class TestSimulator:
    def test_reads_sim_seconds(self, fake_sim, artifact):
        m = fake_sim("ok").measure(artifact, CASE, Limits(wall_timeout_s=30))
        assert m == PerfMeasurement(0.002613, Unit.SIM_SECONDS)

    def test_custom_key(self, fake_sim, artifact):
        assert fake_sim("ok", stats_key="hostSeconds").measure(artifact, CASE).value == 1.5

    def test_missing_key(self, fake_sim, artifact):
        with pytest.raises(MeasurementError) as exc:
            fake_sim("nokey").measure(artifact, CASE)
        assert exc.value.category is ErrorCategory.STATS_KEY_MISSING

    def test_unparsable_value(self, fake_sim, artifact):
        with pytest.raises(MeasurementError) as exc:
            fake_sim("garbage").measure(artifact, CASE)
        assert exc.value.category is ErrorCategory.STATS_UNPARSABLE

    def test_process_failure(self, fake_sim, artifact):
        with pytest.raises(MeasurementError) as exc:
            fake_sim("fail").measure(artifact, CASE)
        assert exc.value.category is ErrorCategory.PROCESS_FAILED
        assert "crashed" in str(exc.value)

    def test_timeout_uses_smaller_limit(self, fake_sim, artifact):
        with pytest.raises(MeasurementError) as exc:
            fake_sim("hang", timeout_s=60).measure(artifact, CASE, Limits(wall_timeout_s=0.5))
        assert exc.value.category is ErrorCategory.TIMEOUT

    def test_missing_executable(self, artifact):
        b = SimulatorBackend(SimulatorConfig("/nonexistent/sim {binary}"))
        with pytest.raises(MeasurementError) as exc:
            b.measure(artifact, CASE)
        assert exc.value.category is ErrorCategory.PROCESS_FAILED

    def test_config_rejects_unknown_keys(self):
        with pytest.raises(ValueError, match="statskey"):
            SimulatorConfig.from_json({"command": "x", "statskey": "y"})

    def test_max_parallel_validated(self):
        with pytest.raises(ValueError):
            SimulatorBackend(SimulatorConfig("x", max_parallel=0))


class TestNoise:
    def test_sigma_zero_exactly_one(self):
        n = NoiseModel(0.0, seed=3)
        assert all(n.sample() == 1.0 for _ in range(100))
        b = WallClockBackend(n, base=2.5)
        assert b.measure(Artifact("a"), CASE).value == 2.5

    def test_seed_reproducible(self):
        a = NoiseModel(0.3, seed=11).sample(50)
        b = NoiseModel(0.3, seed=11).sample(50)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, NoiseModel(0.3, seed=12).sample(50))

    def test_reset_restarts_stream(self):
        n = NoiseModel(0.2, seed=5)
        first = n.sample(10)
        n.reset()
        assert np.array_equal(first, n.sample(10))

    def test_lognormal_mean(self):
        draws = NoiseModel(0.3, seed=0).sample(10_000)
        assert abs(draws.mean() / math.exp(0.045) - 1) < 0.02

    def test_invalid_sigma(self):
        for bad in (-0.1, float("nan"), float("inf")):
            with pytest.raises(ValueError):
                NoiseModel(bad)

    def test_noisy_backend_not_deterministic(self):
        b = WallClockBackend(NoiseModel(0.3, 1), base=ManifestBackend({"a": {"0": 10}}))
        assert not b.descriptor.deterministic
        values = {b.measure(Artifact("a"), CASE).value for _ in range(5)}
        assert len(values) == 5


class TestWallClock:
    def test_real_process(self, artifact):
        m = WallClockBackend().measure(artifact, CASE, Limits(wall_timeout_s=10))
        assert m.unit is Unit.WALL_SECONDS and m.value > 0

    def test_real_process_failure(self, tmp_path):
        p = tmp_path / "bad"
        p.write_text("#!/bin/sh\nexit 4\n")
        p.chmod(0o755)
        with pytest.raises(MeasurementError) as exc:
            WallClockBackend().measure(Artifact("bad", p), CASE, Limits(wall_timeout_s=10))
        assert exc.value.category is ErrorCategory.PROCESS_FAILED


class TestMeasurement:
    def test_positive_required(self):
        for bad in (0, -1, float("nan"), float("inf")):
            with pytest.raises(ValueError):
                PerfMeasurement(bad)

    def test_unit_mismatch(self):
        with pytest.raises(UnitMismatchError):
            PerfMeasurement(1, Unit.SIM_SECONDS) + PerfMeasurement(1, Unit.WALL_SECONDS)
        with pytest.raises(UnitMismatchError):
            total([PerfMeasurement(1, Unit.COST_UNITS), PerfMeasurement(1, Unit.SIM_SECONDS)])

    def test_total_empty(self):
        with pytest.raises(ValueError):
            total([])

    def test_json_roundtrip(self):
        m = PerfMeasurement(0.25, Unit.SIM_SECONDS)
        assert PerfMeasurement.from_json(m.to_json()) == m
        assert PerfMeasurement.from_json(3) == PerfMeasurement(3.0)

    @given(st.lists(st.floats(1e-6, 1e6), min_size=1, max_size=30), st.randoms())
    def test_total_order_independent(self, values, rnd):
        ms = [PerfMeasurement(v) for v in values]
        shuffled = ms[:]
        rnd.shuffle(shuffled)
        assert total(ms) == total(shuffled)
        assert total(ms).value == math.fsum(values)
