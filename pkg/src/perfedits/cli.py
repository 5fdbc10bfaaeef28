"""Command-line entry point.

Exit codes: 0 success, 1 fatal error, 2 success with rejected records.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import adaptation, dataset, metrics, selfplay, variance
from .backends import ManifestBackend, NoiseModel, WallClockBackend
from .config import ConfigError, ToolkitConfig, load_config
from .core import Artifact, PerfMeasurement, TestCase, Unit
from .dataset import ProgramPair, Split, read_jsonl, write_jsonl
from .genclient import ExtractionError, GenClient, GenerationError, GenRequest, extract_program
from .harness import Harness, Judgement, judge, load_test_suite

logger = logging.getLogger("perfedits")

EXIT_OK, EXIT_FATAL, EXIT_REJECTS = 0, 1, 2


class CLIError(Exception):
    pass


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")


def _require(path: str | None, what: str) -> Path:
    if path is None:
        raise CLIError(f"missing {what}")
    p = Path(path)
    if not p.exists():
        raise CLIError(f"{what} not found: {p}")
    return p


def _parse_ratios(text: str) -> tuple[float, float, float]:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("ratios must be three comma-separated fractions")
    return tuple(parts)


def _parse_split(text: str) -> Split:
    for s in Split:
        if s.value.lower() == text.lower():
            return s
    raise argparse.ArgumentTypeError(f"unknown split {text!r}")


def cmd_dataset_build(args, cfg: ToolkitConfig) -> int:
    subs_path = _require(args.submissions or cfg.resolve(cfg.paths.corpus), "submissions file")
    tests_root = _require(args.tests or cfg.resolve(cfg.paths.tests), "tests directory")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    subs, rejects = dataset.load_submissions(subs_path, args.root)
    seed = args.seed if args.seed is not None else cfg.seeds.split
    result = dataset.build_dataset(
        subs,
        tests_root,
        cfg.make_backend() if subs else ManifestBackend({}),
        ratios=args.ratios,
        seed=seed,
        min_improvement=cfg.metrics.dataset_min_improvement,
        compile_config=cfg.compile_config(),
        limits=cfg.harness_limits(),
        jobs=args.jobs or cfg.jobs,
    )
    rejects.extend(result.rejects)
    pairs = sorted(result.pairs, key=lambda p: p.pair_id)
    write_jsonl(out / "pairs.jsonl", (p.to_json() for p in pairs))
    splits = result.splits.to_json() if result.splits else {"seed": seed, "ratios": list(args.ratios), "splits": {}}
    _write_json(out / "splits.json", splits)
    write_jsonl(out / "rejects.jsonl", (r.to_json() for r in rejects))
    print(f"{len(pairs)} pairs, {len(rejects)} rejects -> {out}")
    return EXIT_REJECTS if rejects else EXIT_OK


def cmd_dataset_hq(args, cfg: ToolkitConfig) -> int:
    pairs = [ProgramPair.from_json(r) for r in read_jsonl(_require(args.pairs, "pairs file"))]
    kept = dataset.build_hq_subset(pairs, args.max_per_problem)
    write_jsonl(args.out, (p.to_json() for p in kept))
    print(f"kept {len(kept)} of {len(pairs)} pairs")
    return EXIT_OK


def cmd_dataset_audit(args, cfg: ToolkitConfig) -> int:
    subs, _ = dataset.load_submissions(_require(args.submissions, "submissions file"), args.root)
    with open(_require(args.reported, "reported runtimes file"), encoding="utf-8") as f:
        reported = json.load(f)
    groups = dataset.audit_duplicate_runtime_inconsistency(subs, reported, args.threshold)
    _write_json(Path(args.out), [g.to_json() for g in groups])
    print(f"{len(groups)} inconsistent duplicate group(s)")
    return EXIT_OK


def _load_candidates(path: Path) -> dict[str, list[dict]]:
    by_example: dict[str, list[dict]] = {}
    for row in read_jsonl(path):
        by_example.setdefault(row["example_id"], []).append(row)
    return by_example


def _prompt_for(style, pair: ProgramPair, train: list[ProgramPair], index, k_retrieval: int):
    style = adaptation.PromptStyle(style)
    if style is adaptation.PromptStyle.RETRIEVAL:
        if index is None:
            raise CLIError("retrieval prompts need Train pairs in the pairs file")
        by_id = {p.pair_id: p for p in train}
        examples = [by_id[i] for i in index.retrieve_k(pair.src, k_retrieval)]
        return adaptation.build_prompt(style, examples, pair.src)
    if style is adaptation.PromptStyle.FEW_SHOT:
        if not train:
            raise CLIError("few-shot prompts need Train pairs in the pairs file")
        return adaptation.build_prompt(style, train[:k_retrieval], pair.src)
    if style is adaptation.PromptStyle.PERF_CONDITIONED:
        return adaptation.build_prompt(style, (), pair.src, tag=adaptation.MAX_TAG)
    return adaptation.build_prompt(style, (), pair.src)


def cmd_eval(args, cfg: ToolkitConfig) -> int:
    all_pairs = [ProgramPair.from_json(r) for r in read_jsonl(_require(args.pairs, "pairs file"))]
    tests_root = _require(args.tests or cfg.resolve(cfg.paths.tests), "tests directory")
    k = args.k or cfg.metrics.k
    pairs = sorted((p for p in all_pairs if p.split is args.split), key=lambda p: p.pair_id)
    train = sorted((p for p in all_pairs if p.split is Split.TRAIN), key=lambda p: p.pair_id)
    if not pairs:
        raise CLIError(f"no pairs in split {args.split.value}")
    index = adaptation.EmbeddingIndex.from_pairs(train) if train else None

    offline = _load_candidates(Path(args.candidates)) if args.candidates else None
    client = None
    if offline is None:
        gen = cfg.generation
        if gen.endpoint is None:
            raise CLIError("no --candidates file and no generation endpoint configured")
        client = GenClient(
            gen.endpoint,
            cache_dir=cfg.resolve(cfg.paths.cache),
            token_env=gen.token_env,
            max_retries=gen.max_retries,
            max_in_flight=gen.in_flight,
        )

    backend = cfg.make_backend()
    harness = Harness(backend, cfg.compile_config(), cfg.harness_limits(), jobs=args.jobs or cfg.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prompts, rows = [], []
    suites: dict[str, list[TestCase]] = {}
    for pair in pairs:
        prompt = _prompt_for(args.style, pair, train, index, cfg.retrieval.k)
        prompts.append(prompt.to_json(pair.pair_id))
        if offline is not None:
            samples = sorted(offline.get(pair.pair_id, []), key=lambda r: int(r["sample_index"]))
        else:
            gen = cfg.generation
            resp = client.generate(
                GenRequest(prompt.text, n=k, temperature=gen.temperature, top_p=gen.top_p, max_tokens=gen.max_tokens)
            )
            samples = [{"sample_index": i, "code": s} for i, s in enumerate(resp.samples)]
        if pair.problem_id not in suites:
            suites[pair.problem_id] = load_test_suite(tests_root, pair.problem_id)
        candidates = []
        for sample in samples[:k]:
            idx = int(sample["sample_index"])
            try:
                code = extract_program(sample["code"])
            except ExtractionError:
                candidates.append(metrics.Candidate(idx, Judgement.INCORRECT))
                continue
            report = harness.evaluate_source(code, suites[pair.problem_id], program_id=sample.get("program_id"))
            verdict = judge(report)
            runtime = report.total_runtime if verdict is Judgement.CORRECT else None
            candidates.append(metrics.Candidate(idx, verdict, runtime))
        rows.append(metrics.evaluate_row(pair.pair_id, pair.src_runtime, candidates, k, cfg.metrics.opt_threshold))
    if client is not None:
        client.close()
    write_jsonl(out / "prompts.jsonl", prompts)
    write_jsonl(out / "eval_rows.jsonl", (r.to_json() for r in rows))
    summary = metrics.aggregate(rows, k)
    metrics.write_summary(
        out / "summary.json",
        summary,
        {
            "split": args.split.value,
            "style": adaptation.PromptStyle(args.style).value,
            "k": k,
            "opt_threshold": cfg.metrics.opt_threshold,
            "mode": "offline" if offline is not None else "online",
            "backend": backend.descriptor.to_json(),
        },
    )
    print(json.dumps(summary.to_json(), sort_keys=True))
    return EXIT_OK


def cmd_audit_variance(args, cfg: ToolkitConfig) -> int:
    if args.pairs < 1:
        raise CLIError("--pairs must be >= 1")
    artifact = Artifact("identical-program")
    test = TestCase(0, b"", b"")
    if args.mode == "deterministic":
        backend = ManifestBackend({artifact.program_id: {"0": 1.0}})
    else:
        if args.sigma is not None:
            sigma = args.sigma
        elif args.target_mean is not None:
            sigma = variance.calibrate_noise(args.target_mean)
        else:
            raise CLIError("simulated mode needs --sigma or --target-mean")
        seed = args.seed if args.seed is not None else cfg.seeds.noise
        backend = WallClockBackend(NoiseModel(sigma, seed))
    report = variance.audit_identical_pairs(artifact, test, args.pairs, backend)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write(out / "audit.json", out / "ratios.csv" if args.csv else None)
    print(json.dumps(report.to_json(), sort_keys=True))
    return EXIT_OK


def _read_programs(path: Path) -> list[tuple[str, str]]:
    return [(r["program_id"], r["code"]) for r in read_jsonl(path)]


def _read_inputs(args, cfg: ToolkitConfig) -> list[bytes]:
    if args.inputs:
        return [r["input"].encode("utf-8") for r in read_jsonl(_require(args.inputs, "inputs file"))]
    root = _require(args.tests or cfg.resolve(cfg.paths.tests), "tests directory")
    suites = [[t.input for t in load_test_suite(root, d.name)] for d in sorted(root.iterdir()) if d.is_dir()]
    return selfplay.shared_inputs(suites, args.budget)


def cmd_selfplay_dedupe(args, cfg: ToolkitConfig) -> int:
    programs = _read_programs(_require(args.programs, "programs file"))
    inputs = _read_inputs(args, cfg)
    if not inputs:
        raise CLIError("shared input set is empty")
    harness = Harness(ManifestBackend({}), cfg.compile_config(), cfg.harness_limits())
    sigs = [selfplay.output_signature(pid, src, inputs, harness) for pid, src in programs]
    classes = selfplay.group_signatures(sigs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "signatures.jsonl", (s.to_json() for s in sigs))
    selfplay.write_classes(out / "classes.json", classes)
    novel = sigs
    if args.known:
        known = [selfplay.output_signature(pid, src, inputs, harness) for pid, src in _read_programs(Path(args.known))]
        novel = selfplay.novelty_filter(sigs, known)
    write_jsonl(out / "novel.jsonl", ({"program_id": s.program_id} for s in novel))
    print(f"{len(sigs)} programs, {len(classes)} classes, {len(novel)} novel")
    return EXIT_OK


def cmd_selfplay_assemble(args, cfg: ToolkitConfig) -> int:
    classes = selfplay.read_classes(_require(args.classes, "classes file"))
    cands = [selfplay.SyntheticCandidate.from_json(r) for r in read_jsonl(_require(args.candidates, "candidates file"))]
    with open(_require(args.runtimes, "runtimes file"), encoding="utf-8") as f:
        unit = Unit(cfg.backend.unit or Unit.COST_UNITS)
        runtimes = {k: PerfMeasurement.from_json(v, unit) for k, v in json.load(f).items()}
    pairs = selfplay.assemble_synthetic_pairs(classes, cands, runtimes, args.min_speedup, args.max_per_class)
    write_jsonl(args.out, (p.to_json() for p in pairs))
    print(f"{len(pairs)} synthetic pairs")
    return EXIT_OK


def cmd_tags_assign(args, cfg: ToolkitConfig) -> int:
    sols: dict[str, list] = {}
    for r in read_jsonl(_require(args.solutions, "solutions file")):
        sols.setdefault(r["problem_id"], []).append((r["solution_id"], float(r["runtime"])))
    tags = adaptation.assign_perf_tags(sols)
    _write_json(Path(args.out), tags)
    print(f"tagged {len(tags)} solutions")
    return EXIT_OK


def cmd_index_build(args, cfg: ToolkitConfig) -> int:
    pairs = [ProgramPair.from_json(r) for r in read_jsonl(_require(args.pairs, "pairs file"))]
    if args.split is not None:
        pairs = [p for p in pairs if p.split is args.split]
    if not pairs:
        raise CLIError("no pairs to index")
    index = adaptation.EmbeddingIndex.from_pairs(sorted(pairs, key=lambda p: p.pair_id))
    index.save(args.out)
    print(f"indexed {len(index)} pairs (dim {index.dimension})")
    return EXIT_OK


def cmd_index_query(args, cfg: ToolkitConfig) -> int:
    index = adaptation.EmbeddingIndex.load(_require(args.index, "index file"))
    query = Path(args.query).read_text(encoding="utf-8")
    ids = index.retrieve_k(query, args.k or cfg.retrieval.k)
    print(json.dumps(ids))
    if args.out:
        _write_json(Path(args.out), ids)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="perfedits", description=__doc__)
    p.add_argument("--config", help="toolkit config JSON")
    p.add_argument("--jobs", type=int, default=None, help="worker cap")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="group", required=True)

    ds = sub.add_parser("dataset").add_subparsers(dest="cmd", required=True)
    b = ds.add_parser("build")
    b.add_argument("--submissions")
    b.add_argument("--tests")
    b.add_argument("--out", required=True)
    b.add_argument("--seed", type=int)
    b.add_argument("--ratios", type=_parse_ratios, default=(0.8, 0.1, 0.1))
    b.add_argument("--root", help="base directory for code_path entries")
    b.set_defaults(func=cmd_dataset_build)
    h = ds.add_parser("hq")
    h.add_argument("--pairs", required=True)
    h.add_argument("--out", required=True)
    h.add_argument("--max-per-problem", type=int, default=4)
    h.set_defaults(func=cmd_dataset_hq)
    a = ds.add_parser("audit-duplicates")
    a.add_argument("--submissions", required=True)
    a.add_argument("--reported", required=True, help="JSON map submission_id -> logged runtime")
    a.add_argument("--threshold", type=float, default=1.1)
    a.add_argument("--root")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_dataset_audit)

    e = sub.add_parser("eval")
    e.add_argument("--pairs", required=True)
    e.add_argument("--tests")
    e.add_argument("--split", type=_parse_split, default=Split.TEST)
    e.add_argument("--style", default="Instruction", choices=[s.value for s in adaptation.PromptStyle])
    e.add_argument("--k", type=int)
    e.add_argument("--candidates", help="offline candidates JSONL")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    au = sub.add_parser("audit").add_subparsers(dest="cmd", required=True)
    v = au.add_parser("variance")
    v.add_argument("--mode", choices=["deterministic", "simulated"], required=True)
    v.add_argument("--pairs", type=int, default=500)
    g = v.add_mutually_exclusive_group()
    g.add_argument("--sigma", type=float)
    g.add_argument("--target-mean", type=float)
    v.add_argument("--seed", type=int)
    v.add_argument("--out", required=True)
    v.add_argument("--csv", action="store_true", help="also write raw ratios")
    v.set_defaults(func=cmd_audit_variance)

    sp = sub.add_parser("selfplay").add_subparsers(dest="cmd", required=True)
    d = sp.add_parser("dedupe")
    d.add_argument("--programs", required=True)
    d.add_argument("--known")
    d.add_argument("--inputs")
    d.add_argument("--tests")
    d.add_argument("--budget", type=int, default=selfplay.DEFAULT_INPUT_BUDGET)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_selfplay_dedupe)
    s = sp.add_parser("assemble")
    s.add_argument("--classes", required=True)
    s.add_argument("--candidates", required=True)
    s.add_argument("--runtimes", required=True)
    s.add_argument("--min-speedup", type=float, default=5.0)
    s.add_argument("--max-per-class", type=int, default=3)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_selfplay_assemble)

    t = sub.add_parser("tags").add_subparsers(dest="cmd", required=True)
    ta = t.add_parser("assign")
    ta.add_argument("--solutions", required=True)
    ta.add_argument("--out", required=True)
    ta.set_defaults(func=cmd_tags_assign)

    ix = sub.add_parser("index").add_subparsers(dest="cmd", required=True)
    ib = ix.add_parser("build")
    ib.add_argument("--pairs", required=True)
    ib.add_argument("--split", type=_parse_split)
    ib.add_argument("--out", required=True)
    ib.set_defaults(func=cmd_index_build)
    iq = ix.add_parser("query")
    iq.add_argument("--index", required=True)
    iq.add_argument("--query", required=True, help="file holding the query program")
    iq.add_argument("--k", type=int)
    iq.add_argument("--out")
    iq.set_defaults(func=cmd_index_query)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (CLIError, ConfigError, GenerationError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
