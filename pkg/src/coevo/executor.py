"""Subprocess sandbox for candidate programs.

Each execution gets a fresh working directory, the test input on stdin,
and hard resource limits (wall clock, address space, output size).
Verdicts are judged by output comparison only; crashes, timeouts, and
limit hits are failures with a recorded cause.  Outcomes are cached by
content digest so surviving population members are never re-executed.
"""

from __future__ import annotations

import hashlib
import os
import resource
import shlex
import signal
import subprocess
import tempfile
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .config import ExecutionLimits
from .errors import ExecutorError
from .population import (
    CodeCandidate,
    EXACT,
    ObservationMatrix,
    TestCase,
    WHITESPACE_NORMALIZED,
    anchor_class_map,
)

OUTPUT_MATCH = "output_match"
MISMATCH = "mismatch"
TIMEOUT = "timeout"
RUNTIME_ERROR = "runtime_error"
RESOURCE_LIMIT = "resource_limit"

DEFAULT_RUNTIME = "python3 {source_path}"

_KILL_GRACE = 1.0

_NETWORK_GUARD = """\
import socket


class _DeniedSocket(socket.socket):
    def __init__(self, *args, **kwargs):
        raise OSError("network access is disabled in the execution sandbox")


socket.socket = _DeniedSocket
"""


@dataclass(frozen=True)
class ExecutionOutcome:
    """Judged result of one candidate/test execution."""

    passed: bool
    cause: str
    stdout: bytes
    stderr: bytes
    duration: float

    def __post_init__(self) -> None:
        if self.passed != (self.cause == OUTPUT_MATCH):
            raise ValueError(f"pass verdict requires cause={OUTPUT_MATCH}, got {self.cause}")


def compare_outputs(actual: bytes | str, expected: bytes | str, mode: str) -> bool:
    """Judge captured output against the expectation.

    exact: byte-for-byte equality.  whitespace_normalized: equality after
    stripping trailing whitespace from each line and dropping trailing
    blank lines, the usual tolerance for judge-style output.
    """
    a = actual.decode("utf-8", errors="replace") if isinstance(actual, bytes) else actual
    e = expected.decode("utf-8", errors="replace") if isinstance(expected, bytes) else expected
    if mode == EXACT:
        return a == e
    if mode == WHITESPACE_NORMALIZED:
        return _normalize(a) == _normalize(e)
    raise ValueError(f"unknown comparison mode: {mode!r}")


def _normalize(text: str) -> str:
    lines = [line.rstrip() for line in text.splitlines()]
    while lines and not lines[-1]:
        lines.pop()
    return "\n".join(lines)


def _digest(data: str) -> str:
    return hashlib.sha256(data.encode("utf-8")).hexdigest()


class SandboxExecutor:
    """Runs untrusted program text under limits and fills observation matrices.

    One instance per run; the outcome cache and the launch/hit counters
    live here.  Thread-safe: matrix batches fan out over a worker pool.
    """

    def __init__(
        self,
        limits: ExecutionLimits | None = None,
        runtime: str = DEFAULT_RUNTIME,
        workers: int = 4,
    ) -> None:
        self.limits = (limits or ExecutionLimits()).validate()
        self.runtime = runtime
        self.workers = max(1, workers)
        self.launches = 0
        self.cache_hits = 0
        self._cache: dict[tuple, ExecutionOutcome] = {}
        self._inflight: dict[tuple, Future] = {}
        self._lock = threading.Lock()
        self._guard_dir = tempfile.mkdtemp(prefix="coevo-guard-")
        Path(self._guard_dir, "sitecustomize.py").write_text(_NETWORK_GUARD)

    def _cache_key(self, source: str, input_data: str, expected: str, mode: str) -> tuple:
        return (
            _digest(source),
            _digest(input_data),
            _digest(expected),
            mode,
            self.runtime,
            self.limits.wall_timeout,
            self.limits.memory_cap,
            self.limits.output_cap,
        )

    def run_one(self, candidate: CodeCandidate, test: TestCase) -> ExecutionOutcome:
        """Execute one candidate against one test, via the cache.

        Concurrent calls with the same cache key are single-flighted: one
        launches, the rest wait on its result.  This keeps the launch and
        hit counters independent of worker scheduling.
        """
        key = self._cache_key(
            candidate.source, test.input_data, test.expected_output, test.comparison
        )
        with self._lock:
            cached = self._cache.get(key)
            if cached is not None:
                self.cache_hits += 1
                return cached
            pending = self._inflight.get(key)
            if pending is not None:
                self.cache_hits += 1
                owner = False
            else:
                pending = Future()
                self._inflight[key] = pending
                owner = True
        if not owner:
            return pending.result()
        try:
            cause, stdout, stderr, duration = self._execute(candidate.source, test.input_data)
        except BaseException as exc:
            with self._lock:
                self._inflight.pop(key, None)
            pending.set_exception(exc)
            raise
        if cause is None:
            matched = compare_outputs(stdout, test.expected_output, test.comparison)
            cause = OUTPUT_MATCH if matched else MISMATCH
        outcome = ExecutionOutcome(
            passed=cause == OUTPUT_MATCH,
            cause=cause,
            stdout=stdout,
            stderr=stderr,
            duration=duration,
        )
        with self._lock:
            self._cache[key] = outcome
            self._inflight.pop(key, None)
        pending.set_result(outcome)
        return outcome

    def run_capture(
        self, candidate: CodeCandidate | str, input_data: str
    ) -> tuple[str | None, bytes]:
        """Raw-output execution for divergence probing.

        Accepts a population member or bare source text (input generators
        are programs that never join the population).  Returns (None,
        stdout) on a clean exit, else (cause, partial stdout).
        """
        source = candidate if isinstance(candidate, str) else candidate.source
        cause, stdout, _, _ = self._execute(source, input_data)
        return cause, stdout

    def run_matrix(
        self, candidates: Sequence[CodeCandidate], tests: Sequence[TestCase]
    ) -> ObservationMatrix:
        """Execute every (candidate, test) pair into a total matrix."""
        if not candidates or not tests:
            raise ExecutorError("cannot build a matrix over an empty population")
        matrix = ObservationMatrix(
            [c.id for c in candidates],
            [t.id for t in tests],
            anchor_class_map(tests),
        )
        pairs = [(c, t) for c in candidates for t in tests]
        if self.workers == 1 or len(pairs) == 1:
            outcomes = [self.run_one(c, t) for c, t in pairs]
        else:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                outcomes = list(pool.map(lambda p: self.run_one(*p), pairs))
        for (c, t), outcome in zip(pairs, outcomes):
            detail = ""
            if not outcome.passed and outcome.stderr:
                detail = outcome.stderr.decode("utf-8", errors="replace")[-400:]
            matrix.record(c.id, t.id, outcome.passed, outcome.cause, detail)
        matrix.require_complete()
        return matrix

    def _execute(self, source: str, input_data: str) -> tuple[str | None, bytes, bytes, float]:
        """Launch the runtime on source text; no output comparison.

        Returns (cause or None for clean exit, stdout, stderr, duration).
        """
        limits = self.limits
        with tempfile.TemporaryDirectory(prefix="coevo-exec-") as tmp:
            source_path = Path(tmp, "solution.py")
            source_path.write_text(source)
            # The child runs in an empty subdirectory so programs that scan
            # their cwd never see the harness's own files.
            workdir = Path(tmp, "work")
            workdir.mkdir()
            argv = [
                part.format(source_path=str(source_path))
                for part in shlex.split(self.runtime)
            ]
            env = {
                "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
                "HOME": str(workdir),
                "LC_ALL": "C.UTF-8",
                "PYTHONHASHSEED": "0",
                "PYTHONPATH": self._guard_dir,
                "PYTHONDONTWRITEBYTECODE": "1",
            }
            out_path = Path(tmp, "stdout.bin")
            err_path = Path(tmp, "stderr.bin")
            start = time.monotonic()
            try:
                with open(out_path, "wb") as out_fh, open(err_path, "wb") as err_fh:
                    proc = subprocess.Popen(
                        argv,
                        stdin=subprocess.PIPE,
                        stdout=out_fh,
                        stderr=err_fh,
                        cwd=workdir,
                        env=env,
                        start_new_session=True,
                        preexec_fn=self._child_limits,
                    )
                    with self._lock:
                        self.launches += 1
                    timed_out = False
                    try:
                        proc.communicate(input_data.encode("utf-8"), timeout=limits.wall_timeout)
                    except subprocess.TimeoutExpired:
                        timed_out = True
                        self._kill_group(proc)
                    except BrokenPipeError:
                        proc.wait()
            except (FileNotFoundError, PermissionError) as exc:
                raise ExecutorError(f"cannot launch runtime {argv[0]!r}: {exc}") from exc
            duration = time.monotonic() - start
            stdout = self._read_capped(out_path)
            stderr = self._read_capped(err_path)
            if timed_out:
                return TIMEOUT, stdout, stderr, duration
            rc = proc.returncode
            if rc == 0:
                return None, stdout, stderr, duration
            # Limit deaths arrive either as a signal or as the interpreter's
            # own rendering of the failed syscall/allocation.
            limit_markers = (b"MemoryError", b"File too large", b"Errno 27")
            if rc == -signal.SIGXFSZ or any(m in stderr for m in limit_markers):
                return RESOURCE_LIMIT, stdout, stderr, duration
            return RUNTIME_ERROR, stdout, stderr, duration

    def _child_limits(self) -> None:
        # Runs in the forked child just before exec.
        cap = self.limits
        resource.setrlimit(resource.RLIMIT_FSIZE, (cap.output_cap, cap.output_cap))
        resource.setrlimit(resource.RLIMIT_AS, (cap.memory_cap, cap.memory_cap))

    @staticmethod
    def _kill_group(proc: subprocess.Popen) -> None:
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        deadline = time.monotonic() + _KILL_GRACE
        while proc.poll() is None and time.monotonic() < deadline:
            time.sleep(0.01)

    def _read_capped(self, path: Path) -> bytes:
        try:
            with open(path, "rb") as fh:
                return fh.read(self.limits.output_cap)
        except FileNotFoundError:
            return b""
