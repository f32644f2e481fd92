import time

import pytest

from coevo.beliefs import Belief
from coevo.config import ExecutionLimits
from coevo.errors import ExecutorError
from coevo.executor import (
    MISMATCH,
    OUTPUT_MATCH,
    RESOURCE_LIMIT,
    RUNTIME_ERROR,
    SandboxExecutor,
    TIMEOUT,
    compare_outputs,
)
from coevo.population import CodeCandidate, EXACT, TestCase, WHITESPACE_NORMALIZED

ECHO = "import sys\nsys.stdout.write(sys.stdin.read())\n"


def candidate(source: str, cid: str = "c0000") -> CodeCandidate:
    return CodeCandidate(
        id=cid, source=source, belief=Belief.from_probability(0.2), generation=0, origin="test"
    )


def make_case(input_data: str, expected: str, tid: str = "t0000",
              comparison: str = WHITESPACE_NORMALIZED) -> TestCase:
    return TestCase(
        id=tid,
        input_data=input_data,
        expected_output=expected,
        belief=Belief.from_probability(0.2),
        generation=0,
        origin="test",
        comparison=comparison,
    )


@pytest.fixture(scope="module")
def executor():
    return SandboxExecutor(ExecutionLimits(wall_timeout=5.0))


@pytest.fixture(scope="module")
def quick_executor():
    return SandboxExecutor(ExecutionLimits(wall_timeout=1.0))


class TestCompareOutputs:
    def test_exact_requires_byte_equality(self):
        assert compare_outputs(b"abc\n", "abc\n", EXACT)
        assert not compare_outputs(b"abc \n", "abc\n", EXACT)
        assert not compare_outputs(b"abc", "abc\n", EXACT)

    def test_normalized_ignores_trailing_space_per_line(self):
        assert compare_outputs(b"abc  \ndef\t\n", "abc\ndef\n", WHITESPACE_NORMALIZED)

    def test_normalized_ignores_trailing_blank_lines(self):
        assert compare_outputs(b"abc\n\n\n", "abc\n", WHITESPACE_NORMALIZED)
        assert compare_outputs(b"abc", "abc\n", WHITESPACE_NORMALIZED)

    def test_normalized_preserves_leading_space(self):
        assert not compare_outputs(b"  abc\n", "abc\n", WHITESPACE_NORMALIZED)

    def test_normalized_preserves_interior_blank_lines(self):
        assert not compare_outputs(b"a\nb\n", "a\n\nb\n", WHITESPACE_NORMALIZED)

    def test_undecodable_bytes_never_match(self):
        assert not compare_outputs(b"\xff\xfe", "anything", WHITESPACE_NORMALIZED)


class TestRunOne:
    def test_echo_passes(self, executor):
        outcome = executor.run_one(candidate(ECHO), make_case("hi\n", "hi\n"))
        assert outcome.passed
        assert outcome.cause == OUTPUT_MATCH

    def test_wrong_output_is_mismatch(self, executor):
        outcome = executor.run_one(candidate("print('nope')\n"), make_case("hi\n", "hi\n"))
        assert not outcome.passed
        assert outcome.cause == MISMATCH

    def test_crash_is_runtime_error(self, executor):
        outcome = executor.run_one(
            candidate("raise RuntimeError('boom')\n"), make_case("hi\n", "hi\n")
        )
        assert not outcome.passed
        assert outcome.cause == RUNTIME_ERROR
        assert b"boom" in outcome.stderr

    def test_timeout_is_killed_and_reported(self, quick_executor):
        start = time.monotonic()
        outcome = quick_executor.run_one(
            candidate("while True:\n    pass\n"), make_case("", "x\n")
        )
        elapsed = time.monotonic() - start
        assert outcome.cause == TIMEOUT
        assert not outcome.passed
        assert elapsed < 4.0

    def test_memory_hog_hits_resource_limit(self, executor):
        source = "x = bytearray(2 * 1024 * 1024 * 1024)\nprint(len(x))\n"
        outcome = executor.run_one(candidate(source), make_case("", "x\n"))
        assert not outcome.passed
        assert outcome.cause in (RESOURCE_LIMIT, RUNTIME_ERROR)

    def test_output_flood_hits_resource_limit(self, executor):
        source = "import sys\nwhile True:\n    sys.stdout.write('y' * 65536)\n"
        outcome = executor.run_one(candidate(source), make_case("", "x\n"))
        assert not outcome.passed
        assert outcome.cause in (RESOURCE_LIMIT, TIMEOUT)

    def test_exact_mode_respected(self, executor):
        outcome = executor.run_one(
            candidate("print('abc ')\n"), make_case("", "abc\n", comparison=EXACT)
        )
        assert outcome.cause == MISMATCH
        outcome = executor.run_one(candidate("print('abc ')\n"), make_case("", "abc\n"))
        assert outcome.cause == OUTPUT_MATCH


class TestIsolation:
    def test_network_is_denied(self, executor):
        source = (
            "import socket\n"
            "try:\n"
            "    socket.socket()\n"
            "    print('open')\n"
            "except OSError:\n"
            "    print('denied')\n"
        )
        outcome = executor.run_one(candidate(source), make_case("", "denied\n"))
        assert outcome.passed

    def test_hash_randomization_is_pinned(self, executor):
        source = "print(hash('stable'))\n"
        first = executor.run_one(candidate(source, "c0001"), make_case("", "x\n", "t0001"))
        second = SandboxExecutor(ExecutionLimits(wall_timeout=5.0)).run_one(
            candidate(source, "c0001"), make_case("", "x\n", "t0001")
        )
        assert first.stdout == second.stdout

    def test_fresh_working_directory(self, executor):
        source = (
            "import os\n"
            "print(sorted(os.listdir('.')))\n"
        )
        outcome = executor.run_one(candidate(source), make_case("", "[]\n"))
        assert outcome.passed


class TestCaching:
    def test_identical_work_is_cached(self):
        ex = SandboxExecutor(ExecutionLimits(wall_timeout=5.0))
        cand = candidate(ECHO)
        test = make_case("hi\n", "hi\n")
        ex.run_one(cand, test)
        ex.run_one(cand, test)
        assert ex.launches == 1
        assert ex.cache_hits == 1

    def test_cache_keyed_by_content_not_id(self):
        ex = SandboxExecutor(ExecutionLimits(wall_timeout=5.0))
        ex.run_one(candidate(ECHO, "c0000"), make_case("hi\n", "hi\n", "t0000"))
        ex.run_one(candidate(ECHO, "c0055"), make_case("hi\n", "hi\n", "t0099"))
        assert ex.launches == 1
        assert ex.cache_hits == 1

    def test_different_input_misses(self):
        ex = SandboxExecutor(ExecutionLimits(wall_timeout=5.0))
        ex.run_one(candidate(ECHO), make_case("a\n", "a\n"))
        ex.run_one(candidate(ECHO), make_case("b\n", "b\n"))
        assert ex.launches == 2
        assert ex.cache_hits == 0

    def test_matrix_reruns_are_all_hits(self):
        ex = SandboxExecutor(ExecutionLimits(wall_timeout=5.0))
        cands = [candidate(ECHO, "c0000"), candidate("print('x')\n", "c0001")]
        tests = [make_case("a\n", "a\n", "t0000"), make_case("b\n", "b\n", "t0001")]
        ex.run_matrix(cands, tests)
        launches_before = ex.launches
        ex.run_matrix(cands, tests)
        assert ex.launches == launches_before


class TestRunMatrix:
    def test_total_and_causes(self):
        ex = SandboxExecutor(ExecutionLimits(wall_timeout=5.0))
        cands = [candidate(ECHO, "c0000"), candidate("print('z')\n", "c0001")]
        tests = [make_case("a\n", "a\n", "t0000"), make_case("z\n", "z\n", "t0001")]
        matrix = ex.run_matrix(cands, tests)
        matrix.require_complete()
        assert matrix.entry("c0000", "t0000") is True
        assert matrix.entry("c0001", "t0000") is False
        assert matrix.entry("c0001", "t0001") is True
        assert matrix.cause("c0001", "t0000") == MISMATCH

    def test_stderr_excerpt_recorded_for_failures(self):
        ex = SandboxExecutor(ExecutionLimits(wall_timeout=5.0))
        cands = [candidate("raise ValueError('tell-tale')\n")]
        tests = [make_case("", "x\n")]
        matrix = ex.run_matrix(cands, tests)
        assert "tell-tale" in matrix.detail("c0000", "t0000")

    def test_empty_population_rejected(self):
        ex = SandboxExecutor(ExecutionLimits(wall_timeout=5.0))
        with pytest.raises(ExecutorError):
            ex.run_matrix([], [make_case("a\n", "a\n")])

    def test_broken_runtime_raises_executor_error(self):
        ex = SandboxExecutor(ExecutionLimits(wall_timeout=5.0), runtime="no-such-binary {source_path}")
        with pytest.raises(ExecutorError):
            ex.run_one(candidate(ECHO), make_case("a\n", "a\n"))


class TestRunCapture:
    def test_raw_stdout_returned(self, executor):
        cause, stdout = executor.run_capture(candidate("print(6 * 7)\n"), "")
        assert cause is None
        assert stdout.strip() == b"42"

    def test_accepts_bare_source_text(self, executor):
        cause, stdout = executor.run_capture("import sys\nprint(sys.stdin.read().strip())\n", "7\n")
        assert cause is None
        assert stdout.strip() == b"7"

    def test_crash_reports_cause(self, executor):
        cause, _ = executor.run_capture("raise SystemExit(3)\n", "")
        assert cause == RUNTIME_ERROR
