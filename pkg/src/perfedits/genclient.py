"""Client for an external text-generation endpoint with retries and a replay cache.

Wire format (POST, JSON)::

    {"prompt": str, "n": int, "temperature": float, "top_p": float,
     "max_tokens": int, "stop": [str] | null}

The endpoint answers ``{"samples": [str, ...], "usage": {...}}``. Bodies in
the chat-completion shape ``{"choices": [{"message": {"content": str}}]}`` or
``{"choices": [{"text": str}]}`` are accepted too.

Every successful response is stored under
``<cache_dir>/<first two hex digits>/<digest>.json`` where the digest is the
SHA-256 of the canonical request JSON, so a run can be replayed offline.
"""

from __future__ import annotations

import json
import logging
import os
import re
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import httpx

from .core import sha256_text

logger = logging.getLogger(__name__)

EVAL_TEMPERATURE = 0.7


class GenerationError(Exception):
    pass


class AuthError(GenerationError):
    pass


class RateLimitError(GenerationError):
    pass


class MalformedResponseError(GenerationError):
    pass


class ExtractionError(ValueError):
    pass


@dataclass(frozen=True)
class GenRequest:
    prompt: str
    n: int = 1
    temperature: float = EVAL_TEMPERATURE
    top_p: float = 1.0
    max_tokens: int = 1024
    stop: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.stop is not None:
            object.__setattr__(self, "stop", tuple(self.stop))

    def to_wire(self) -> dict:
        body = asdict(self)
        body["stop"] = list(self.stop) if self.stop is not None else None
        return body

    def digest(self) -> str:
        return sha256_text(json.dumps(self.to_wire(), sort_keys=True, separators=(",", ":")))


@dataclass
class GenResponse:
    samples: list[str]
    usage: dict = field(default_factory=dict)
    latency_s: float = 0.0
    shortfall: int = 0
    cached: bool = False

    def to_json(self) -> dict:
        return {
            "samples": self.samples,
            "usage": self.usage,
            "latency_s": self.latency_s,
            "shortfall": self.shortfall,
        }


def parse_samples(body: object) -> tuple[list[str], dict]:
    if not isinstance(body, Mapping):
        raise MalformedResponseError("response body is not a JSON object")
    usage = body.get("usage") or {}
    if "samples" in body:
        samples = body["samples"]
    elif "choices" in body:
        samples = []
        for choice in body["choices"]:
            if isinstance(choice, Mapping) and isinstance(choice.get("message"), Mapping):
                samples.append(choice["message"].get("content"))
            elif isinstance(choice, Mapping):
                samples.append(choice.get("text"))
            else:
                samples.append(None)
    else:
        raise MalformedResponseError("response has neither 'samples' nor 'choices'")
    if not isinstance(samples, list) or not all(isinstance(s, str) for s in samples):
        raise MalformedResponseError("samples must be a list of strings")
    return samples, dict(usage) if isinstance(usage, Mapping) else {}


class GenClient:
    """Thread-safe generation client.

    ``endpoint`` may be ``None`` for cache-only (offline) use, in which case a
    cache miss raises :class:`GenerationError`.
    """

    def __init__(
        self,
        endpoint: str | None,
        *,
        cache_dir: str | os.PathLike | None = None,
        token_env: str = "PERFEDITS_GEN_TOKEN",
        max_retries: int = 3,
        backoff_s: float = 1.0,
        max_backoff_s: float = 30.0,
        max_in_flight: int = 4,
        n_cap: int = 16,
        timeout_s: float = 120.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.token_env = token_env
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.max_backoff_s = max_backoff_s
        self.n_cap = n_cap
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._http = httpx.Client(timeout=timeout_s, transport=transport)
        self.network_calls = 0

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> GenClient:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _cache_path(self, digest: str) -> Path | None:
        if self.cache_dir is None:
            return None
        return self.cache_dir / digest[:2] / f"{digest}.json"

    def _read_cache(self, req: GenRequest) -> GenResponse | None:
        path = self._cache_path(req.digest())
        if path is None or not path.exists():
            return None
        entry = json.loads(path.read_text(encoding="utf-8"))
        resp = entry["response"]
        return GenResponse(
            samples=list(resp["samples"]),
            usage=dict(resp.get("usage", {})),
            latency_s=float(resp.get("latency_s", 0.0)),
            shortfall=int(resp.get("shortfall", 0)),
            cached=True,
        )

    def _write_cache(self, req: GenRequest, resp: GenResponse) -> None:
        path = self._cache_path(req.digest())
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        entry = {"request": req.to_wire(), "response": resp.to_json(), "timestamp": time.time()}
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(entry, f, sort_keys=True)
        os.replace(tmp, path)

    def _headers(self) -> dict:
        token = os.environ.get(self.token_env)
        return {"Authorization": f"Bearer {token}"} if token else {}

    def generate(self, req: GenRequest) -> GenResponse:
        if req.n > self.n_cap:
            raise ValueError(f"n={req.n} exceeds the configured cap of {self.n_cap}")
        cached = self._read_cache(req)
        if cached is not None:
            return cached
        if self.endpoint is None:
            raise GenerationError("no endpoint configured and request not in cache")
        attempt = 0
        last_error: Exception | None = None
        while attempt <= self.max_retries:
            if attempt:
                delay = min(self.max_backoff_s, self.backoff_s * 2 ** (attempt - 1))
                self._sleep(delay)
            attempt += 1
            start = time.perf_counter()
            try:
                with self._slots:
                    self.network_calls += 1
                    r = self._http.post(self.endpoint, json=req.to_wire(), headers=self._headers())
            except httpx.TransportError as exc:
                last_error = exc
                logger.warning("transport error on attempt %d: %s", attempt, exc)
                continue
            latency = time.perf_counter() - start
            if r.status_code in (401, 403):
                raise AuthError(f"endpoint rejected credentials (HTTP {r.status_code})")
            if r.status_code == 429 or r.status_code >= 500:
                last_error = RateLimitError(f"HTTP {r.status_code}") if r.status_code == 429 else GenerationError(
                    f"HTTP {r.status_code}"
                )
                logger.warning("retryable HTTP %d on attempt %d", r.status_code, attempt)
                continue
            if r.status_code >= 400:
                raise GenerationError(f"HTTP {r.status_code}: {r.text[:200]}")
            try:
                body = r.json()
            except ValueError:
                raise MalformedResponseError("response is not JSON") from None
            samples, usage = parse_samples(body)
            samples = samples[: req.n]
            resp = GenResponse(samples, usage, latency, shortfall=req.n - len(samples))
            if resp.shortfall:
                logger.warning("endpoint returned %d of %d samples", len(samples), req.n)
            self._write_cache(req, resp)
            return resp
        if isinstance(last_error, RateLimitError):
            raise last_error
        raise GenerationError(f"giving up after {attempt} attempts: {last_error}")


_FENCE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)


def extract_program(sample: str) -> str:
    """Return the last fenced code block, or the whole sample when there is none."""
    blocks = _FENCE.findall(sample)
    code = blocks[-1].strip("\n") if blocks else sample
    if not code.strip():
        raise ExtractionError("no program found in sample")
    return code
