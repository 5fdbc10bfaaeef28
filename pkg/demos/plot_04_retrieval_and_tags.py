"""
Retrieving few-shot examples and conditioning on performance
============================================================

Few-shot examples are picked by tf-idf similarity to the query program.
Performance tags rank each solution within its problem from 10 (fastest
tenth) to 1 (slowest tenth).
"""

import tempfile
from pathlib import Path

from perfedits import PerfMeasurement
from perfedits.adaptation import EmbeddingIndex, PromptStyle, assign_perf_tags, build_prompt
from perfedits.dataset import ProgramPair

train = [
    ProgramPair("p1", "for (i=0;i<n;i++) for (j=0;j<n;j++) s+=a[i]*a[j];", "s=sum*sum;",
                PerfMeasurement(90), PerfMeasurement(3), 0.97, src_id="x1", tgt_id="y1"),
    ProgramPair("p2", "sort(v.begin(), v.end()); bubble(v);", "sort(v.begin(), v.end());",
                PerfMeasurement(40), PerfMeasurement(20), 0.5, src_id="x2", tgt_id="y2"),
    ProgramPair("p3", "cin >> n; endl; endl;", "scanf(\"%d\", &n);",
                PerfMeasurement(10), PerfMeasurement(6), 0.4, src_id="x3", tgt_id="y3"),
]
index = EmbeddingIndex.from_pairs(train)

query = "for (i=0;i<n;i++) for (j=0;j<n;j++) t+=b[i]*b[j];"
print(index.retrieve_k(query, 2))

# The index round-trips through a small binary file and a JSON sidecar.
with tempfile.TemporaryDirectory() as d:
    index.save(Path(d) / "index.bin")
    print(EmbeddingIndex.load(Path(d) / "index.bin").retrieve_k(query, 1))

by_id = {p.pair_id: p for p in train}
prompt = build_prompt(PromptStyle.RETRIEVAL, [by_id[i] for i in index.retrieve_k(query, 2)], query)
print(prompt.text)

tags = assign_perf_tags({"p1": [(f"s{i}", float(rt)) for i, rt in enumerate([5, 9, 9, 30, 2, 11, 7, 8, 50, 3])]})
print(tags)
print(build_prompt(PromptStyle.PERF_CONDITIONED, query=query, tag=10).text)
