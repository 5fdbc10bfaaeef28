from __future__ import annotations

import json
import subprocess
from pathlib import Path

import pytest

from conftest import PYTHON, write_config
from perfedits.cli import main
from perfedits.dataset import read_jsonl, write_jsonl


def run(corpus: Path, *argv: str) -> int:
    return main(["--config", str(corpus / "config.json"), *argv])


def build(corpus: Path, out: str = "out") -> Path:
    rc = run(
        corpus, "dataset", "build",
        "--submissions", str(corpus / "submissions.jsonl"),
        "--tests", str(corpus / "tests"),
        "--out", str(corpus / out),
    )
    assert rc == 0
    return corpus / out


class TestDatasetBuild:
    def test_fixture_pairs(self, corpus_dir):
        out = build(corpus_dir)
        pairs = list(read_jsonl(out / "pairs.jsonl"))
        assert {(p["src_id"], p["tgt_id"]) for p in pairs} == {
            ("s01", "s03"), ("s02", "s03"), ("s06", "s08"), ("s07", "s08")
        }
        splits = json.loads((out / "splits.json").read_text())["splits"]
        assert sorted(splits) == ["p1", "p2", "p3"]
        assert (out / "rejects.jsonl").read_text() == ""

    def test_byte_identical_reruns(self, corpus_dir):
        a, b = build(corpus_dir, "a"), build(corpus_dir, "b")
        for name in ("pairs.jsonl", "splits.json", "rejects.jsonl"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_empty_submissions(self, corpus_dir):
        (corpus_dir / "empty.jsonl").write_text("")
        rc = run(corpus_dir, "dataset", "build", "--submissions", str(corpus_dir / "empty.jsonl"),
                 "--tests", str(corpus_dir / "tests"), "--out", str(corpus_dir / "e"))
        assert rc == 0
        assert (corpus_dir / "e" / "pairs.jsonl").read_text() == ""

    def test_missing_input_is_fatal(self, corpus_dir, capsys):
        rc = run(corpus_dir, "dataset", "build", "--submissions", str(corpus_dir / "nope.jsonl"),
                 "--tests", str(corpus_dir / "tests"), "--out", str(corpus_dir / "e"))
        assert rc == 1
        assert "not found" in capsys.readouterr().err

    def test_rejects_give_exit_two(self, corpus_dir):
        with open(corpus_dir / "submissions.jsonl", "a") as f:
            f.write("{broken json\n")
        rc = run(corpus_dir, "dataset", "build", "--submissions", str(corpus_dir / "submissions.jsonl"),
                 "--tests", str(corpus_dir / "tests"), "--out", str(corpus_dir / "r"))
        assert rc == 2
        assert len(list(read_jsonl(corpus_dir / "r" / "rejects.jsonl"))) == 1

    def test_hq_and_audit(self, corpus_dir):
        out = build(corpus_dir)
        assert run(corpus_dir, "dataset", "hq", "--pairs", str(out / "pairs.jsonl"),
                   "--out", str(out / "hq.jsonl"), "--max-per-problem", "1") == 0
        hq = list(read_jsonl(out / "hq.jsonl"))
        assert sorted(p["pair_id"] for p in hq) == ["p1:s01->s03", "p2:s07->s08"]

        (corpus_dir / "reported.json").write_text(json.dumps({"s09": 200, "s11": 82, "s10": 90}))
        rec = {"submission_id": "dup", "user_id": "u9", "problem_id": "p3", "timestamp": 0,
               "language": "sh", "status": "Accepted", "code": "#!/bin/sh\n# s09\ncat\n"}
        subs = corpus_dir / "dups.jsonl"
        write_jsonl(subs, [rec | {"submission_id": "s09"}, rec | {"submission_id": "s11", "code": "#!/bin/sh\n#   s09\ncat\n"}])
        assert run(corpus_dir, "dataset", "audit-duplicates", "--submissions", str(subs),
                   "--reported", str(corpus_dir / "reported.json"), "--out", str(corpus_dir / "dup.json")) == 0
        groups = json.loads((corpus_dir / "dup.json").read_text())
        assert len(groups) == 1


def write_candidates(path: Path, rows):
    write_jsonl(path, rows)
    return path


def eval_cmd(corpus, pairs, cands, out, *extra):
    return run(corpus, "eval", "--pairs", str(pairs), "--tests", str(corpus / "tests"), "--split", "Test",
               "--candidates", str(cands), "--out", str(corpus / out), *extra)


MUL_WRONG = "#!/bin/sh\nread a b\necho $((a + b))\n"


class TestEval:
    def test_self_copy_is_neutral(self, corpus_dir):
        out = build(corpus_dir)
        test_pairs = [p for p in read_jsonl(out / "pairs.jsonl") if p["split"] == "Test"]
        assert test_pairs
        cands = write_candidates(corpus_dir / "c.jsonl", [
            {"example_id": p["pair_id"], "sample_index": 0, "code": p["src"], "program_id": p["src_id"]}
            for p in test_pairs
        ])
        assert eval_cmd(corpus_dir, out / "pairs.jsonl", cands, "ev") == 0
        summary = json.loads((corpus_dir / "ev" / "summary.json").read_text())
        assert summary["pct_opt"] == 0.0 and summary["mean_speedup"] == 1.0
        assert summary["pct_correct"] == 1.0
        assert summary["config"]["mode"] == "offline"
        assert len(list(read_jsonl(corpus_dir / "ev" / "prompts.jsonl"))) == len(test_pairs)

    def test_hand_computed_and_k_monotone(self, corpus_dir):
        out = build(corpus_dir)
        fast = "#!/bin/sh\n# s08\nread a b\necho $((a * b))\n"
        cands = write_candidates(corpus_dir / "c.jsonl", [
            # s06 (200): wrong answer first, then the 150 solution
            {"example_id": "p2:s06->s08", "sample_index": 0, "code": "```sh\n" + MUL_WRONG + "```"},
            {"example_id": "p2:s06->s08", "sample_index": 1, "code": fast, "program_id": "s08"},
            # s07 (210): slower rewrite (s07 itself) then s06 at 200 (4.8% faster)
            {"example_id": "p2:s07->s08", "sample_index": 0, "code": fast.replace("s08", "s07"), "program_id": "s07"},
            {"example_id": "p2:s07->s08", "sample_index": 1, "code": fast.replace("s08", "s06"), "program_id": "s06"},
        ])
        assert eval_cmd(corpus_dir, out / "pairs.jsonl", cands, "k1", "--k", "1") == 0
        assert eval_cmd(corpus_dir, out / "pairs.jsonl", cands, "k8", "--k", "8") == 0
        k1 = json.loads((corpus_dir / "k1" / "summary.json").read_text())
        k8 = json.loads((corpus_dir / "k8" / "summary.json").read_text())
        assert k1["pct_correct"] == pytest.approx(0.5) and k1["pct_opt"] == 0.0
        assert k1["mean_speedup"] == pytest.approx(1.0)
        assert k8["pct_correct"] == pytest.approx(1.0)
        assert k8["pct_opt"] == pytest.approx(0.5)
        assert k8["mean_speedup"] == pytest.approx((200 / 150 + 210 / 200) / 2)
        for key in ("pct_correct", "pct_opt", "mean_speedup"):
            assert k8[key] >= k1[key]

    def test_retrieval_style(self, corpus_dir):
        out = build(corpus_dir)
        pairs = list(read_jsonl(out / "pairs.jsonl"))
        for p in pairs:
            p["split"] = "Train" if p["problem_id"] == "p1" else "Test"
        write_jsonl(out / "mixed.jsonl", pairs)
        cands = write_candidates(corpus_dir / "c.jsonl", [])
        assert eval_cmd(corpus_dir, out / "mixed.jsonl", cands, "rv", "--style", "Retrieval") == 0
        prompts = list(read_jsonl(corpus_dir / "rv" / "prompts.jsonl"))
        assert prompts and all(p["style"] == "Retrieval" for p in prompts)
        # retrieved examples come from the Train pairs (problem p1)
        assert all("# s01" in p["prompt"] or "# s02" in p["prompt"] for p in prompts)

    def test_no_candidates_no_endpoint(self, corpus_dir, capsys):
        out = build(corpus_dir)
        rc = run(corpus_dir, "eval", "--pairs", str(out / "pairs.jsonl"), "--tests", str(corpus_dir / "tests"),
                 "--out", str(corpus_dir / "x"))
        assert rc == 1
        assert "endpoint" in capsys.readouterr().err

    def test_empty_split_fatal(self, corpus_dir):
        out = build(corpus_dir)
        cands = write_candidates(corpus_dir / "c.jsonl", [])
        rc = run(corpus_dir, "eval", "--pairs", str(out / "pairs.jsonl"), "--tests", str(corpus_dir / "tests"),
                 "--split", "Train", "--candidates", str(cands), "--out", str(corpus_dir / "x"))
        assert rc == 1


class TestAudit:
    def test_deterministic(self, tmp_path):
        assert main(["audit", "variance", "--mode", "deterministic", "--pairs", "50", "--out", str(tmp_path)]) == 0
        report = json.loads((tmp_path / "audit.json").read_text())
        assert report["mean_ratio"] == 1.0 and report["std_ratio"] == 0.0

    def test_target_mean(self, tmp_path):
        rc = main(["audit", "variance", "--mode", "simulated", "--target-mean", "1.12", "--pairs", "500",
                   "--seed", "0", "--out", str(tmp_path), "--csv"])
        assert rc == 0
        report = json.loads((tmp_path / "audit.json").read_text())
        assert 1.07 <= report["mean_ratio"] <= 1.17
        assert report["quantiles"]["0.95"] > 1.5
        assert len((tmp_path / "ratios.csv").read_text().splitlines()) == 501

    def test_zero_pairs(self, tmp_path):
        assert main(["audit", "variance", "--mode", "deterministic", "--pairs", "0", "--out", str(tmp_path)]) == 1

    def test_simulated_needs_noise(self, tmp_path):
        assert main(["audit", "variance", "--mode", "simulated", "--out", str(tmp_path)]) == 1


class TestSelfplayTagsIndex:
    def test_selfplay_dedupe_and_assemble(self, corpus_dir):
        progs = corpus_dir / "progs.jsonl"
        write_jsonl(progs, [
            {"program_id": "P1", "code": "#!/bin/sh\nread a b\necho $((b + a))\n"},
            {"program_id": "P2", "code": "#!/bin/sh\nread a b\necho $((a + b))\n"},
            {"program_id": "P3", "code": "#!/bin/sh\nread a b\necho $((a * b))\n"},
        ])
        known = corpus_dir / "known.jsonl"
        write_jsonl(known, [{"program_id": "K", "code": "#!/bin/sh\nread a b\necho $((a * b))\n"}])
        inputs = corpus_dir / "inputs.jsonl"
        write_jsonl(inputs, [{"input": "1 2\n"}, {"input": "3 4\n"}])
        out = corpus_dir / "sp"
        assert run(corpus_dir, "selfplay", "dedupe", "--programs", str(progs), "--inputs", str(inputs),
                   "--known", str(known), "--out", str(out)) == 0
        classes = json.loads((out / "classes.json").read_text())
        assert [c["members"] for c in classes] == [["P1", "P2"], ["P3"]]
        assert [r["program_id"] for r in read_jsonl(out / "novel.jsonl")] == ["P1", "P2"]

        cands = corpus_dir / "cands.jsonl"
        write_jsonl(cands, [
            {"candidate_id": f"c{i}", "slow_id": "P1", "slow_src": "s", "fast_src": f"f{i}"} for i in range(5)
        ])
        (corpus_dir / "rts.json").write_text(json.dumps({"P1": 100, "c0": 20, "c1": 10, "c2": 21, "c3": 5, "c4": 12}))
        assert run(corpus_dir, "selfplay", "assemble", "--classes", str(out / "classes.json"), "--candidates",
                   str(cands), "--runtimes", str(corpus_dir / "rts.json"), "--out", str(corpus_dir / "syn.jsonl")) == 0
        syn = list(read_jsonl(corpus_dir / "syn.jsonl"))
        assert [p["tgt_id"] for p in syn] == ["c3", "c1", "c4"]
        assert all(p["provenance"] == "SelfPlay" for p in syn)

    def test_selfplay_inputs_from_tests(self, corpus_dir):
        progs = corpus_dir / "progs.jsonl"
        write_jsonl(progs, [{"program_id": "E", "code": "#!/bin/sh\ncat\n"}])
        assert run(corpus_dir, "selfplay", "dedupe", "--programs", str(progs), "--tests",
                   str(corpus_dir / "tests"), "--budget", "3", "--out", str(corpus_dir / "sp")) == 0
        [sig] = read_jsonl(corpus_dir / "sp" / "signatures.jsonl")
        assert len(sig["outputs"]) == 3

    def test_tags(self, tmp_path):
        sols = tmp_path / "sols.jsonl"
        write_jsonl(sols, [{"problem_id": "p", "solution_id": f"s{i}", "runtime": i + 1} for i in range(10)])
        assert main(["tags", "assign", "--solutions", str(sols), "--out", str(tmp_path / "t.json")]) == 0
        tags = json.loads((tmp_path / "t.json").read_text())
        assert tags["s0"] == 10 and tags["s9"] == 1

    def test_index_build_and_query(self, corpus_dir, capsys):
        out = build(corpus_dir)
        idx = corpus_dir / "index.bin"
        assert run(corpus_dir, "index", "build", "--pairs", str(out / "pairs.jsonl"), "--out", str(idx)) == 0
        q = corpus_dir / "q.sh"
        q.write_text("#!/bin/sh\n# s06\nread a b\necho $((a * b))\n")
        capsys.readouterr()
        assert run(corpus_dir, "index", "query", "--index", str(idx), "--query", str(q), "--k", "1") == 0
        assert json.loads(capsys.readouterr().out) == ["p2:s06->s08"]


def test_entry_point_subprocess(tmp_path):
    proc = subprocess.run(
        [PYTHON, "-m", "perfedits.cli", "audit", "variance", "--mode", "deterministic", "--pairs", "3",
         "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["n_pairs"] == 3


def test_bad_config_is_fatal(tmp_path):
    write_config(tmp_path / "c.json", extra_key=1)
    assert main(["--config", str(tmp_path / "c.json"), "audit", "variance", "--mode", "deterministic",
                 "--out", str(tmp_path)]) == 1
