"""Prompt construction, nearest-neighbour example retrieval and performance tags.

The default embedder is a token tf-idf vectorizer:

* tokens: split on non-alphanumeric characters, lowercase, drop empties;
* term frequency: raw count of the token in the document;
* inverse document frequency: ``ln((1 + N) / (1 + df)) + 1`` over the
  N documents the vectorizer was fitted on;
* vectors are L2-normalized, so a dot product is the cosine similarity.

Tokens never seen during fitting are ignored at query time.
"""

from __future__ import annotations

import enum
import json
import math
import os
import re
import struct
from bisect import bisect_left
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import PerfMeasurement
from .dataset import ProgramPair

_TOKEN_SPLIT = re.compile(r"[^A-Za-z0-9]+")


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


class TfidfEmbedder:
    vectorizer_id = "tfidf-v1"

    def __init__(self, vocabulary: Mapping[str, int], idf: Sequence[float]):
        self.vocabulary = dict(vocabulary)
        self.idf = np.asarray(idf, dtype=float)
        if len(self.vocabulary) != self.idf.size:
            raise ValueError("vocabulary and idf sizes differ")

    @classmethod
    def fit(cls, documents: Iterable[str]) -> TfidfEmbedder:
        docs = [set(tokenize(d)) for d in documents]
        df = Counter(tok for d in docs for tok in d)
        vocab = {tok: i for i, tok in enumerate(sorted(df))}
        n = len(docs)
        idf = [math.log((1 + n) / (1 + df[tok])) + 1.0 for tok in sorted(df)]
        return cls(vocab, idf)

    @property
    def dimension(self) -> int:
        return self.idf.size

    def embed(self, source: str) -> np.ndarray:
        if not source:
            raise ValueError("cannot embed an empty source")
        vec = np.zeros(self.dimension)
        for tok, count in Counter(tokenize(source)).items():
            idx = self.vocabulary.get(tok)
            if idx is not None:
                vec[idx] = count * self.idf[idx]
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def to_json(self) -> dict:
        tokens = sorted(self.vocabulary, key=self.vocabulary.__getitem__)
        return {"vectorizer_id": self.vectorizer_id, "tokens": tokens, "idf": self.idf.tolist()}

    @classmethod
    def from_json(cls, obj: Mapping) -> TfidfEmbedder:
        if obj.get("vectorizer_id") != cls.vectorizer_id:
            raise ValueError(f"unsupported vectorizer {obj.get('vectorizer_id')!r}")
        return cls({t: i for i, t in enumerate(obj["tokens"])}, obj["idf"])


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


INDEX_MAGIC = b"PEIX"
INDEX_VERSION = 1
_HEADER = struct.Struct("<4sIII")


class EmbeddingIndex:
    """Row-normalized matrix of corpus embeddings keyed by pair id."""

    def __init__(self, pair_ids: Sequence[str], vectors: np.ndarray, embedder: TfidfEmbedder):
        vectors = np.asarray(vectors, dtype=float)
        if vectors.ndim != 2 or vectors.shape[0] != len(pair_ids):
            raise ValueError("vectors must be an (n, dim) array matching pair_ids")
        if vectors.shape[1] != embedder.dimension:
            raise ValueError("vector dimension does not match the embedder")
        self.pair_ids = list(pair_ids)
        self.vectors = vectors
        self.embedder = embedder

    @classmethod
    def build(cls, corpus: Sequence[tuple[str, str]]) -> EmbeddingIndex:
        """Fit the embedder on the corpus texts and embed every entry."""
        if not corpus:
            raise ValueError("corpus is empty")
        ids = [pid for pid, _ in corpus]
        if len(set(ids)) != len(ids):
            raise ValueError("pair ids must be unique")
        embedder = TfidfEmbedder.fit(text for _, text in corpus)
        vectors = np.vstack([embedder.embed(text) for _, text in corpus])
        return cls(ids, vectors, embedder)

    @classmethod
    def from_pairs(cls, pairs: Iterable[ProgramPair]) -> EmbeddingIndex:
        return cls.build([(p.pair_id, p.src) for p in pairs])

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.pair_ids)

    def similarities(self, query: str) -> np.ndarray:
        return self.vectors @ self.embedder.embed(query)

    def retrieve_k(self, query: str, k: int = 2) -> list[str]:
        """Pair ids of the ``k`` most similar entries, ties by pair id ascending."""
        if k < 1:
            raise ValueError("k must be >= 1")
        sims = self.similarities(query)
        order = sorted(range(len(self.pair_ids)), key=lambda i: (-sims[i], self.pair_ids[i]))
        return [self.pair_ids[i] for i in order[:k]]

    def save(self, path: str | os.PathLike) -> None:
        """Write ``path`` (binary rows) and ``path + '.json'`` (ids and vectorizer)."""
        path = Path(path)
        n, dim = self.vectors.shape
        with open(path, "wb") as f:
            f.write(_HEADER.pack(INDEX_MAGIC, INDEX_VERSION, dim, n))
            f.write(self.vectors.astype("<f8").tobytes())
        sidecar = {"pair_ids": self.pair_ids, "embedder": self.embedder.to_json()}
        Path(f"{path}.json").write_text(json.dumps(sidecar, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> EmbeddingIndex:
        data = Path(path).read_bytes()
        if len(data) < _HEADER.size:
            raise ValueError("index file truncated")
        magic, version, dim, n = _HEADER.unpack_from(data)
        if magic != INDEX_MAGIC:
            raise ValueError("not an embedding index file")
        if version != INDEX_VERSION:
            raise ValueError(f"unsupported index version {version}")
        body = data[_HEADER.size :]
        if len(body) != n * dim * 8:
            raise ValueError("index body size does not match header")
        vectors = np.frombuffer(body, dtype="<f8").reshape(n, dim).astype(float)
        sidecar = json.loads(Path(f"{path}.json").read_text(encoding="utf-8"))
        return cls(sidecar["pair_ids"], vectors, TfidfEmbedder.from_json(sidecar["embedder"]))


class PromptStyle(str, enum.Enum):
    INSTRUCTION = "Instruction"
    FEW_SHOT = "FewShot"
    CHAIN_OF_THOUGHT = "ChainOfThought"
    RETRIEVAL = "Retrieval"
    PERF_CONDITIONED = "PerfConditioned"


TEMPLATE_VERSION = "1"

_INSTRUCTION = (
    "Given the program below, improve its performance. Write the optimized program "
    "so that it produces exactly the same output for every input.\n"
)
_COT_INSTRUCTION = (
    "Given the program below, first think step by step about how to optimize it: "
    "identify the expensive parts and what could make them faster. Then write the "
    "complete optimized program in a single ```cpp fenced block.\n"
)
_FEW_SHOT_HEADER = (
    "Below are examples of slow programs followed by optimized versions of the same "
    "programs. Optimize the last program in the same way.\n"
)
_PERF_HEADER = "Optimize the program below to reach the given performance score.\n"
_SLOW = "### Slower program:\n{code}\n"
_FAST = "### Optimized version of the same program:\n{code}\n"
_EXAMPLE_SEP = "\n"
_TAG_LINE = "### Performance score: {tag}/10\n"

MAX_TAG = 10


@dataclass(frozen=True)
class Prompt:
    style: PromptStyle
    text: str
    approx_tokens: int
    template_version: str = TEMPLATE_VERSION

    def to_json(self, example_id: str) -> dict:
        return {
            "example_id": example_id,
            "style": self.style.value,
            "prompt": self.text,
            "meta": {"approx_tokens": self.approx_tokens, "template_version": self.template_version},
        }


def approx_token_count(text: str) -> int:
    # rough 4-characters-per-token rule
    return math.ceil(len(text) / 4)


def _block(template: str, code: str) -> str:
    return template.format(code=code.rstrip("\n"))


def build_prompt(
    style: PromptStyle | str,
    examples: Sequence[ProgramPair] = (),
    query: str = "",
    tag: int | None = None,
) -> Prompt:
    """Assemble a prompt; the query program always comes last, followed by the open answer slot."""
    style = PromptStyle(style)
    if not query:
        raise ValueError("query program is empty")
    if style in (PromptStyle.FEW_SHOT, PromptStyle.RETRIEVAL) and not examples:
        raise ValueError(f"{style.value} prompts need at least one example pair")
    if style is PromptStyle.PERF_CONDITIONED:
        if tag is None:
            raise ValueError("PerfConditioned prompts need a performance tag")
        if not 1 <= tag <= MAX_TAG:
            raise ValueError(f"tag must be in 1..{MAX_TAG}, got {tag}")

    parts: list[str] = []
    if style is PromptStyle.INSTRUCTION:
        parts.append(_INSTRUCTION)
    elif style is PromptStyle.CHAIN_OF_THOUGHT:
        parts.append(_COT_INSTRUCTION)
    elif style in (PromptStyle.FEW_SHOT, PromptStyle.RETRIEVAL):
        parts.append(_FEW_SHOT_HEADER)
        for ex in examples:
            parts.append(_block(_SLOW, ex.src) + _block(_FAST, ex.tgt) + _EXAMPLE_SEP)
    else:
        parts.append(_PERF_HEADER)
    parts.append(_block(_SLOW, query))
    if style is PromptStyle.PERF_CONDITIONED:
        parts.append(_TAG_LINE.format(tag=tag))
    parts.append("### Optimized version of the same program:\n")
    text = "\n".join(parts)
    return Prompt(style, text, approx_token_count(text))


def perf_conditioned_training_text(pair: ProgramPair, tag: int) -> str:
    """Training example: slow program, the fast program's tag, then the fast program."""
    prompt = build_prompt(PromptStyle.PERF_CONDITIONED, query=pair.src, tag=tag)
    return prompt.text + pair.tgt.rstrip("\n") + "\n"


def _runtime_value(r: float | PerfMeasurement) -> float:
    return r.value if isinstance(r, PerfMeasurement) else float(r)


def assign_perf_tags(
    solutions: Mapping[str, Sequence[tuple[str, float | PerfMeasurement]]],
) -> dict[str, int]:
    """Per-problem decile tags: fastest tenth gets 10, slowest tenth gets 1.

    A solution's rank is one plus the number of strictly faster solutions of
    the same problem, so equal runtimes share a tag. Rank ``r`` of ``m``
    solutions maps to ``10 - floor(10 * (r - 1) / m)``.
    """
    tags: dict[str, int] = {}
    for problem, sols in solutions.items():
        if not sols:
            raise ValueError(f"problem {problem!r} has no solutions")
        values = sorted(_runtime_value(rt) for _, rt in sols)
        m = len(values)
        for sid, rt in sols:
            v = _runtime_value(rt)
            rank = 1 + bisect_left(values, v)
            tags[sid] = MAX_TAG - (MAX_TAG * (rank - 1)) // m
    return tags
