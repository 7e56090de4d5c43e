"""Tool gateway: cached search client, code-interpreter client, mock backends.

The gateway dispatches payloads extracted from closed ``<search>``/``<code>``
blocks to the configured backends and always returns a string: every failure
mode is stringified so a rollout can continue with the error text injected as
the tool response.
"""
from __future__ import annotations

import difflib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol

import requests

log = logging.getLogger(__name__)

FUZZY_THRESHOLD = 0.9
DEFAULT_DOC_COUNT = 5
DEFAULT_TIMEOUT_MS = 5000
CLIENT_GRACE_MS = 1000


def normalize_query(q: str) -> str:
    """Lowercase and strip all whitespace characters."""
    return "".join(ch for ch in q.lower() if not ch.isspace())


def similarity(a: str, b: str) -> float:
    """Ratcliff/Obershelp ratio 2M/T in [0, 1]; 1.0 when both empty."""
    return difflib.SequenceMatcher(None, a, b, autojunk=False).ratio()


@dataclass
class CacheEntry:
    normalized_query: str
    raw_query: str
    response: str
    created_at: float


class SearchCache:
    """In-memory cache keyed by normalized query, with JSONL persistence.

    Reads are lock-free on the underlying dict; writes are serialized through
    a single lock.
    """

    def __init__(self) -> None:
        self._entries: dict[str, CacheEntry] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, normalized: str) -> Optional[CacheEntry]:
        return self._entries.get(normalized)

    def best_fuzzy(self, normalized: str, threshold: float = FUZZY_THRESHOLD) -> Optional[CacheEntry]:
        """Best entry strictly above the similarity threshold.

        Ties on ratio are broken by recency (latest created_at wins).
        """
        best: Optional[tuple[float, float, CacheEntry]] = None
        for entry in list(self._entries.values()):
            ratio = similarity(normalized, entry.normalized_query)
            if ratio <= threshold:
                continue
            key = (ratio, entry.created_at, entry)
            if best is None or key[:2] > best[:2]:
                best = key
        return best[2] if best else None

    def put(self, raw_query: str, response: str) -> CacheEntry:
        entry = CacheEntry(normalize_query(raw_query), raw_query, response, time.time())
        with self._lock:
            self._entries[entry.normalized_query] = entry
        return entry

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()

    def entries(self) -> list[CacheEntry]:
        return sorted(self._entries.values(), key=lambda e: (e.created_at, e.normalized_query))

    def persist(self, path) -> int:
        entries = self.entries()
        with open(path, "w", encoding="utf-8") as fh:
            for entry in entries:
                fh.write(
                    json.dumps(
                        {
                            "normalized_query": entry.normalized_query,
                            "raw_query": entry.raw_query,
                            "response": entry.response,
                            "created_at": entry.created_at,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )
        return len(entries)

    def load(self, path) -> int:
        """Load entries from JSONL; malformed lines are skipped with a warning."""
        count = 0
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                    entry = CacheEntry(
                        normalized_query=obj["normalized_query"],
                        raw_query=obj["raw_query"],
                        response=obj["response"],
                        created_at=float(obj["created_at"]),
                    )
                except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                    log.warning("skipping malformed cache line %d in %s", lineno, path)
                    continue
                with self._lock:
                    self._entries[entry.normalized_query] = entry
                count += 1
        return count


class SearchBackend(Protocol):
    def results(self, query: str) -> list[dict]:
        """Return result dicts with ``title`` and ``snippet`` keys."""


class MockSearchBackend:
    """Fixture-table search backend that counts every call it serves."""

    def __init__(self, table: Optional[dict[str, list[dict]]] = None, default: Optional[list[dict]] = None):
        self.table = table or {}
        self.default = default if default is not None else [
            {"title": "No result", "snippet": "no fixture for this query"}
        ]
        self.calls = 0
        self._lock = threading.Lock()

    def results(self, query: str) -> list[dict]:
        with self._lock:
            self.calls += 1
        return self.table.get(query, self.default)


class HttpSearchBackend:
    """HTTP search adapter: POST JSON {q} with the API key from the environment."""

    def __init__(self, url: str, api_key: Optional[str] = None, timeout_s: float = 10.0):
        self.url = url
        self.api_key = api_key if api_key is not None else os.environ.get("SEARCH_API_KEY", "")
        self.timeout_s = timeout_s

    def results(self, query: str) -> list[dict]:
        resp = requests.post(
            self.url,
            json={"q": query},
            headers={"X-API-KEY": self.api_key},
            timeout=self.timeout_s,
        )
        resp.raise_for_status()
        payload = resp.json()
        raw = payload.get("organic", payload.get("results", []))
        return [
            {"title": item.get("title", ""), "snippet": item.get("snippet", "")}
            for item in raw
        ]


def format_docs(results: list[dict], doc_count: int = DEFAULT_DOC_COUNT) -> str:
    lines = [
        f"Doc {k}: (Title: {item.get('title', '')}) {item.get('snippet', '')}"
        for k, item in enumerate(results[:doc_count], start=1)
    ]
    return "\n".join(lines)


class SearchClient:
    """Two-tier cached search: exact hit, then fuzzy scan, then backend call.

    Backend calls are coalesced per normalized query so a batch of identical
    queries issues a single request.
    """

    def __init__(
        self,
        backend: SearchBackend,
        cache: Optional[SearchCache] = None,
        doc_count: int = DEFAULT_DOC_COUNT,
        threshold: float = FUZZY_THRESHOLD,
    ):
        self.backend = backend
        self.cache = cache if cache is not None else SearchCache()
        self.doc_count = doc_count
        self.threshold = threshold
        self._inflight: dict[str, threading.Lock] = {}
        self._inflight_guard = threading.Lock()

    def _key_lock(self, normalized: str) -> threading.Lock:
        with self._inflight_guard:
            return self._inflight.setdefault(normalized, threading.Lock())

    def search(self, query: str) -> str:
        normalized = normalize_query(query)
        hit = self.cache.get(normalized)
        if hit is not None:
            return hit.response
        fuzzy = self.cache.best_fuzzy(normalized, self.threshold)
        if fuzzy is not None:
            return fuzzy.response
        with self._key_lock(normalized):
            hit = self.cache.get(normalized)  # filled while we waited
            if hit is not None:
                return hit.response
            try:
                results = self.backend.results(query)
            except Exception as exc:  # noqa: BLE001 - totality: errors become text
                log.warning("search backend failure for %r: %s", query, exc)
                return f"error: search failed ({exc})"
            response = format_docs(results, self.doc_count)
            self.cache.put(query, response)
            return response


@dataclass
class ExecutionResult:
    stdout: str = ""
    stderr: str = ""
    status: str = "ok"  # "ok" | "timeout" | "rejected" | "runtime_error"
    duration_ms: int = 0


class CodeBackend(Protocol):
    def execute(self, code: str, timeout_ms: int) -> ExecutionResult: ...


class MockCodeBackend:
    """Table-driven code results keyed by exact snippet text."""

    def __init__(self, table: Optional[dict[str, ExecutionResult]] = None):
        self.table = table or {}
        self.calls = 0
        self._lock = threading.Lock()

    def execute(self, code: str, timeout_ms: int) -> ExecutionResult:
        with self._lock:
            self.calls += 1
        result = self.table.get(code)
        if result is None:
            return ExecutionResult(stderr="no fixture for snippet", status="runtime_error")
        return result


class EvalCodeBackend:
    """Mock interpreter for the toy tasks: evaluates arithmetic expressions.

    Accepts a bare expression over + - * / ** and parentheses and returns its
    value as printed by Python. Anything else is a runtime error.
    """

    _ALLOWED = set("0123456789.+-*/() \t\ne")

    def __init__(self) -> None:
        self.calls = 0
        self._lock = threading.Lock()

    def execute(self, code: str, timeout_ms: int) -> ExecutionResult:
        with self._lock:
            self.calls += 1
        text = code.strip()
        if not text or not set(text) <= self._ALLOWED:
            return ExecutionResult(stderr="not an arithmetic expression", status="runtime_error")
        try:
            value = eval(compile(text, "<expr>", "eval"), {"__builtins__": {}}, {})
        except Exception as exc:  # noqa: BLE001
            return ExecutionResult(stderr=str(exc), status="runtime_error")
        return ExecutionResult(stdout=f"{value}")


class HttpCodeBackend:
    """Client for the remote interpreter wire protocol (POST /execute)."""

    def __init__(self, url: str, grace_ms: int = CLIENT_GRACE_MS):
        # accept either the service base or the full endpoint address
        url = url.rstrip("/")
        if url.endswith("/execute"):
            url = url[: -len("/execute")]
        self.url = url
        self.grace_ms = grace_ms

    def execute(self, code: str, timeout_ms: int) -> ExecutionResult:
        deadline_s = (timeout_ms + self.grace_ms) / 1000.0
        try:
            resp = requests.post(
                f"{self.url}/execute",
                json={"code": code, "timeout_ms": timeout_ms},
                timeout=deadline_s,
            )
            resp.raise_for_status()
            payload = resp.json()
        except requests.Timeout:
            return ExecutionResult(
                stderr="client-side deadline exceeded", status="timeout", duration_ms=timeout_ms
            )
        except requests.RequestException as exc:
            return ExecutionResult(stderr=f"interpreter unreachable: {exc}", status="runtime_error")
        return ExecutionResult(
            stdout=payload.get("stdout", ""),
            stderr=payload.get("stderr", ""),
            status=payload.get("status", "runtime_error"),
            duration_ms=int(payload.get("duration_ms", 0)),
        )


def execute_code(backend: CodeBackend, code: str, timeout_ms: int = DEFAULT_TIMEOUT_MS) -> ExecutionResult:
    return backend.execute(code, timeout_ms)


def execution_response(result: ExecutionResult) -> str:
    """The string injected into trajectories for a code execution."""
    if result.status == "ok":
        return result.stdout
    detail = result.stderr or result.status
    return f"error: {detail}"


@dataclass
class Gateway:
    """Uniform dispatch to the search and code backends.

    ``dispatch`` is total: it always returns a string, never raises.
    """

    search_client: SearchClient
    code_backend: CodeBackend
    timeout_ms: int = DEFAULT_TIMEOUT_MS

    def dispatch(self, tool: str, payload: str) -> str:
        try:
            if tool == "search":
                return self.search_client.search(payload)
            if tool == "code":
                return execution_response(execute_code(self.code_backend, payload, self.timeout_ms))
            return f"error: unknown tool {tool!r}"
        except Exception as exc:  # noqa: BLE001 - dispatch never raises
            log.warning("tool %s failed: %s", tool, exc)
            return f"error: {exc}"


def mock_gateway(
    search_table: Optional[dict[str, list[dict]]] = None,
    code_table: Optional[dict[str, ExecutionResult]] = None,
    doc_count: int = DEFAULT_DOC_COUNT,
) -> Gateway:
    """Fully offline gateway with fixture-table backends."""
    return Gateway(
        search_client=SearchClient(MockSearchBackend(search_table), doc_count=doc_count),
        code_backend=MockCodeBackend(code_table),
    )
