from __future__ import annotations

import json
import shutil
import sys
from pathlib import Path

import pytest

from perfedits import CompileConfig, Limits

# Shell scripts "compile" by being installed executable; keeps the suite fast
# and independent of a C++ toolchain.
SH_COMPILE = CompileConfig("install -m 755 {src} {out}", (), 10.0, ".sh")

ADD = "#!/bin/sh\n# {tag}\nread a b\necho $((a + b))\n"
MUL = "#!/bin/sh\n# {tag}\nread a b\necho $((a * b))\n"
ECHO = "#!/bin/sh\n# {tag}\ncat\n"
WRONG = "#!/bin/sh\n# {tag}\necho 42\n"

TESTS = {
    "p1": [("1 2\n", "3\n"), ("10 20\n", "30\n")],
    "p2": [("2 3\n", "6\n"), ("4 5\n", "20\n")],
    "p3": [("hello\n", "hello\n"), ("x\n", "x\n")],
}

# (id, user, problem, timestamp, status, template, per-test costs)
CORPUS = [
    ("s07", "u1", "p2", 2, "Accepted", MUL, (110, 100)),
    ("s03", "u1", "p1", 30, "Accepted", ADD, (30, 40)),
    ("s01", "u1", "p1", 10, "Accepted", ADD, (40, 60)),
    ("s02", "u1", "p1", 20, "Accepted", ADD, (45, 45)),
    ("s04", "u2", "p1", 5, "Accepted", ADD, (25, 25)),
    ("s05", "u2", "p1", 6, "Rejected", WRONG, None),
    ("s06", "u1", "p2", 1, "Accepted", MUL, (100, 100)),
    ("s08", "u1", "p2", 3, "Accepted", MUL, (75, 75)),
    ("s11", "u2", "p3", 2, "Accepted", ECHO, (39, 39)),
    ("s09", "u2", "p3", 1, "Accepted", ECHO, (40, 40)),
    ("s10", "u2", "p3", 2, "Accepted", ECHO, (35, 40)),
    ("s12", "u2", "p3", 4, "Rejected", WRONG, None),
]

# Hand enumeration under the strict >10% rule:
#   p1/u1 runtimes s01=100, s02=90, s03=70:
#     (s01,s02) 10/100 = 0.10 exactly -> dropped; (s01,s03) 0.30; (s02,s03) 20/90
#   p1/u2 one accepted program -> nothing
#   p2/u1 s06=200, s07=210, s08=150:
#     (s06,s07) negative; (s06,s08) 0.25; (s07,s08) 60/210
#   p3/u2 s09=80, s10=75, s11=78 (s10 before s11 on the tie):
#     0.0625, 0.025 and negative -> nothing
EXPECTED_PAIRS = {("s01", "s03"), ("s02", "s03"), ("s06", "s08"), ("s07", "s08")}


def submission_records():
    return [
        {
            "submission_id": sid,
            "user_id": user,
            "problem_id": prob,
            "timestamp": ts,
            "language": "sh",
            "status": status,
            "code": tmpl.format(tag=sid),
        }
        for sid, user, prob, ts, status, tmpl, _ in CORPUS
    ]


def manifest():
    return {
        sid: {str(i): c for i, c in enumerate(costs)}
        for sid, _, _, _, _, _, costs in CORPUS
        if costs is not None
    }


def write_tests(root: Path, tests=TESTS) -> Path:
    for prob, cases in tests.items():
        d = root / prob
        d.mkdir(parents=True, exist_ok=True)
        for k, (inp, out) in enumerate(cases):
            (d / f"input.{k}.txt").write_text(inp)
            (d / f"output.{k}.txt").write_text(out)
    return root


def write_config(path: Path, manifest_name: str = "runtimes.json", **extra) -> Path:
    cfg = {
        "version": 1,
        "compile": {
            "compiler_command": SH_COMPILE.compiler_command,
            "flags": [],
            "timeout_s": 10,
            "source_suffix": ".sh",
        },
        "limits": {"wall_timeout_s": 10},
        "backend": {"kind": "manifest", "manifest": manifest_name},
    }
    cfg.update(extra)
    path.write_text(json.dumps(cfg, indent=2))
    return path


@pytest.fixture
def sh_compile() -> CompileConfig:
    return SH_COMPILE


@pytest.fixture
def fast_limits() -> Limits:
    return Limits(wall_timeout_s=10)


@pytest.fixture
def corpus_dir(tmp_path: Path) -> Path:
    """A directory with submissions.jsonl, tests/, runtimes.json and config.json."""
    d = tmp_path / "corpus"
    d.mkdir()
    with open(d / "submissions.jsonl", "w") as f:
        for rec in submission_records():
            f.write(json.dumps(rec) + "\n")
    write_tests(d / "tests")
    (d / "runtimes.json").write_text(json.dumps(manifest()))
    write_config(d / "config.json")
    return d


def have_gxx() -> bool:
    return shutil.which("g++") is not None


requires_gxx = pytest.mark.skipif(not have_gxx(), reason="g++ not available")

PYTHON = sys.executable


# Acceptance reporting: every test marked ``criterion(n, title)`` feeds one
# PASS/FAIL line per criterion into the terminal summary.
_CRITERIA: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "ran": False})
    if report.when == "call":
        entry["ran"] = True
    if report.failed:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        status = "PASS" if entry["ok"] and entry["ran"] else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {entry['title']}")
