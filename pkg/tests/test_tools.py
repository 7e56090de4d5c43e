import json
import threading

import pytest
from hypothesis import given, strategies as st

from toolrl import tools
from toolrl.tools import (
    EvalCodeBackend,
    ExecutionResult,
    Gateway,
    MockCodeBackend,
    MockSearchBackend,
    SearchCache,
    SearchClient,
)


def reference_ratcliff_obershelp(a: str, b: str) -> float:
    """Independent recursive longest-matching-block ratio."""
    def longest_block(x, y):
        best = (0, 0, 0)  # length, i, j
        for i in range(len(x)):
            for j in range(len(y)):
                k = 0
                while i + k < len(x) and j + k < len(y) and x[i + k] == y[j + k]:
                    k += 1
                if k > best[0]:
                    best = (k, i, j)
        return best

    def matches(x, y):
        k, i, j = longest_block(x, y)
        if k == 0:
            return 0
        return k + matches(x[:i], y[:j]) + matches(x[i + k :], y[j + k :])

    total = len(a) + len(b)
    if total == 0:
        return 1.0
    return 2 * matches(a, b) / total


class TestNormalizeQuery:
    def test_lowercase_and_strip_spaces(self):
        assert tools.normalize_query("Current  U.S. President") == "currentu.s.president"

    def test_empty(self):
        assert tools.normalize_query("") == ""

    def test_all_whitespace_kinds(self):
        assert tools.normalize_query("A\tB\nC") == "abc"


class TestSimilarity:
    def test_identical(self):
        assert tools.similarity("abc", "abc") == 1.0

    def test_partial(self):
        assert tools.similarity("abcd", "abce") == 0.75

    def test_disjoint(self):
        assert tools.similarity("abc", "xyz") == 0.0

    def test_both_empty(self):
        assert tools.similarity("", "") == 1.0

    @given(st.text(alphabet="abcd", max_size=10), st.text(alphabet="abcd", max_size=10))
    def test_matches_reference(self, a, b):
        # note: the ratio is order-dependent in tie cases, so no symmetry claim
        assert tools.similarity(a, b) == pytest.approx(reference_ratcliff_obershelp(a, b))
        if a:
            assert tools.similarity(a, a) == 1.0


class TestSearchCaching:
    def make(self, table=None):
        backend = MockSearchBackend(table or {}, default=[{"title": "T", "snippet": "S"}])
        return backend, SearchClient(backend)

    def test_second_identical_query_hits_cache(self):
        backend, client = self.make()
        first = client.search("who is x")
        second = client.search("who is x")
        assert first == second
        assert backend.calls == 1

    def test_normalization_collision_is_exact_hit(self):
        backend, client = self.make()
        client.search("current us president")
        client.search("Current US President")
        assert backend.calls == 1

    def test_fuzzy_hit_above_threshold(self):
        backend, client = self.make()
        client.search("the first president of the united states")
        client.search("the first president of the united states?")
        assert backend.calls == 1

    def test_below_threshold_calls_backend(self):
        backend, client = self.make()
        client.search("abcdefghij")
        client.search("abcde")  # ratio 2*5/15 = 0.67
        assert backend.calls == 2

    def test_fuzzy_never_fires_on_exact_hit(self, monkeypatch):
        backend, client = self.make()
        client.search("some query")
        calls = []
        original = client.cache.best_fuzzy

        def spy(*args, **kwargs):
            calls.append(args)
            return original(*args, **kwargs)

        monkeypatch.setattr(client.cache, "best_fuzzy", spy)
        client.search("some query")
        assert calls == []

    def test_doc_formatting(self):
        backend = MockSearchBackend(
            {"q": [{"title": "A", "snippet": "first"}, {"title": "B", "snippet": "second"}]}
        )
        client = SearchClient(backend)
        assert client.search("q") == "Doc 1: (Title: A) first\nDoc 2: (Title: B) second"

    def test_doc_count_limit(self):
        results = [{"title": f"T{i}", "snippet": "s"} for i in range(10)]
        assert tools.format_docs(results, doc_count=5).count("Doc ") == 5

    def test_backend_failure_returns_error_string(self):
        class Exploding:
            def results(self, query):
                raise ConnectionError("no network")

        client = SearchClient(Exploding())
        assert client.search("q").startswith("error:")

    def test_coalescing_single_backend_call(self):
        backend = MockSearchBackend()
        slow_lock = threading.Lock()
        original = backend.results

        def slow_results(query):
            with slow_lock:
                return original(query)

        backend.results = slow_results
        client = SearchClient(backend)
        threads = [threading.Thread(target=client.search, args=("same q",)) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert backend.calls == 1


class TestCachePersistence:
    def test_roundtrip(self, tmp_path):
        cache = SearchCache()
        for q in ("alpha", "beta", "gamma"):
            cache.put(q, f"docs for {q}")
        path = tmp_path / "cache.jsonl"
        assert cache.persist(path) == 3
        fresh = SearchCache()
        assert fresh.load(path) == 3
        assert fresh.get("alpha").response == "docs for alpha"

    def test_load_empty(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert SearchCache().load(path) == 0

    def test_corrupt_line_skipped(self, tmp_path):
        cache = SearchCache()
        for q in ("a", "b", "c", "d"):
            cache.put(q, q)
        path = tmp_path / "cache.jsonl"
        cache.persist(path)
        lines = path.read_text().splitlines()
        lines[1] = "{not json"
        path.write_text("\n".join(lines) + "\n")
        assert SearchCache().load(path) == 3

    def test_byte_stable_ordering(self, tmp_path):
        cache = SearchCache()
        cache.put("zebra", "1")
        cache.put("apple", "2")
        path = tmp_path / "cache.jsonl"
        cache.persist(path)
        keys = [json.loads(line)["normalized_query"] for line in path.read_text().splitlines()]
        assert keys == ["zebra", "apple"]  # created_at order


class TestCodeExecution:
    def test_mock_table(self):
        backend = MockCodeBackend({"print(9.8 > 9.11)": ExecutionResult(stdout="True")})
        result = tools.execute_code(backend, "print(9.8 > 9.11)")
        assert result.status == "ok"
        assert result.stdout == "True"

    def test_response_string_ok_vs_error(self):
        assert tools.execution_response(ExecutionResult(stdout="out")) == "out"
        assert tools.execution_response(
            ExecutionResult(status="timeout", stderr="")
        ) == "error: timeout"
        assert tools.execution_response(
            ExecutionResult(status="rejected", stderr="import of 'os' is not allowed")
        ) == "error: import of 'os' is not allowed"

    def test_eval_backend(self):
        backend = EvalCodeBackend()
        assert backend.execute("1+2*3", 5000).stdout == "7"
        assert backend.execute("import os", 5000).status == "runtime_error"

    def test_unreachable_interpreter_maps_to_runtime_error(self):
        backend = tools.HttpCodeBackend("http://127.0.0.1:1")  # nothing listens
        result = backend.execute("print(1)", 100)
        assert result.status == "runtime_error"
        assert "unreachable" in result.stderr


class TestGatewayDispatch:
    def make(self):
        return Gateway(
            search_client=SearchClient(MockSearchBackend()),
            code_backend=MockCodeBackend({"ok": ExecutionResult(stdout="fine")}),
        )

    def test_routes(self):
        gw = self.make()
        assert gw.dispatch("code", "ok") == "fine"
        assert gw.dispatch("search", "q").startswith("Doc 1:")

    def test_unknown_tool_stringified(self):
        assert self.make().dispatch("calendar", "x").startswith("error:")

    def test_never_raises(self):
        class Exploding:
            def execute(self, code, timeout_ms):
                raise RuntimeError("boom")

        gw = Gateway(search_client=SearchClient(MockSearchBackend()), code_backend=Exploding())
        assert gw.dispatch("code", "x") == "error: boom"
