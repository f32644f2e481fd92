"""Problem descriptions, anchor extraction, and population bootstrap."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .beliefs import Belief
from .config import RunConfig
from .errors import ConfigError, InitializationError, ParseFailure
from .gateway import CompletionTranscript, Provider, extract_code_blocks, extract_tests
from .population import (
    ANCHOR_KIND,
    CodeCandidate,
    EXACT,
    IdAllocator,
    TestCase,
    UNIT_KIND,
    WHITESPACE_NORMALIZED,
)
from .prompts import render_prompt

log = logging.getLogger(__name__)

ANCHOR_BELIEF = 1.0 - 1e-12

DEFAULT_RUNTIME = "python3 {source_path}"


@dataclass(frozen=True)
class ProblemSpec:
    """One synthesis task: statement, public examples, execution contract."""

    id: str
    statement: str
    public_examples: tuple[tuple[str, str], ...]
    runtime: str = DEFAULT_RUNTIME
    comparison: str = WHITESPACE_NORMALIZED
    difficulty: str = ""

    def validate(self, anchoring_enabled: bool = True) -> "ProblemSpec":
        if not self.id:
            raise ConfigError("problem id must be non-empty")
        if not self.statement.strip():
            raise ConfigError(f"problem {self.id} has an empty statement")
        if anchoring_enabled and not self.public_examples:
            raise ConfigError(
                f"problem {self.id} has no public examples; anchoring requires at least one"
            )
        if self.comparison not in (EXACT, WHITESPACE_NORMALIZED):
            raise ConfigError(f"unknown comparison mode: {self.comparison!r}")
        return self


def load_problem(path: str | Path) -> ProblemSpec:
    """Read a problem JSON document.

    Expected shape: {"id", "statement", "public_examples": [{"input",
    "output"}, ...]} with optional "runtime", "comparison", "difficulty".
    """
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"problem file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"problem file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"problem file {path} must contain a JSON object")
    try:
        examples = tuple(
            (str(ex["input"]), str(ex["output"])) for ex in doc.get("public_examples", [])
        )
        spec = ProblemSpec(
            id=str(doc["id"]),
            statement=str(doc["statement"]),
            public_examples=examples,
            runtime=str(doc.get("runtime", DEFAULT_RUNTIME)),
            comparison=str(doc.get("comparison", WHITESPACE_NORMALIZED)),
            difficulty=str(doc.get("difficulty", "")),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"problem file {path} is missing required fields: {exc}") from None
    return spec


def from_benchmark_record(record: dict, problem_id: str | None = None) -> ProblemSpec:
    """Map a competitive-programming benchmark record onto a ProblemSpec.

    Accepts the common JSON shape with ``question_content`` (or
    ``question``) for the statement and ``public_test_cases`` holding
    input/output pairs, either inline or as a JSON-encoded string.
    """
    statement = record.get("question_content") or record.get("question") or ""
    raw_cases = record.get("public_test_cases", [])
    if isinstance(raw_cases, str):
        try:
            raw_cases = json.loads(raw_cases)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"unreadable public_test_cases payload: {exc}") from None
    examples = []
    for case in raw_cases:
        if "input" in case and "output" in case:
            examples.append((str(case["input"]), str(case["output"])))
    return ProblemSpec(
        id=str(problem_id or record.get("question_id") or record.get("id") or "imported"),
        statement=str(statement),
        public_examples=tuple(examples),
        difficulty=str(record.get("difficulty", "")),
    )


def extract_anchors(
    problem: ProblemSpec, config: RunConfig, ids: IdAllocator
) -> list[TestCase]:
    """Turn the public examples into the trusted anchor tests.

    With anchoring disabled the same tests are still emitted, but as
    ordinary generated-class tests with the uninformative prior, which is
    the ablation the config flag exists for.
    """
    problem.validate(config.anchoring_enabled)
    if config.anchoring_enabled:
        kind, belief = ANCHOR_KIND, Belief.from_probability(ANCHOR_BELIEF, config.log_odds_limit)
    else:
        kind, belief = UNIT_KIND, Belief.from_probability(config.initial_belief, config.log_odds_limit)
    anchors = []
    for input_data, expected in problem.public_examples:
        anchors.append(
            TestCase(
                id=ids.test_id(),
                input_data=input_data,
                expected_output=expected,
                belief=belief,
                generation=0,
                origin="public_example",
                kind=kind,
                comparison=problem.comparison,
            )
        )
    return anchors


def source_is_valid(source: str, runtime: str) -> bool:
    """Cheap structural admission check for generated program text."""
    if not source.strip():
        return False
    if "python" in runtime:
        try:
            compile(source, "<candidate>", "exec")
        except (SyntaxError, ValueError):
            return False
    return True


def init_populations(
    problem: ProblemSpec,
    config: RunConfig,
    provider: Provider,
    ids: IdAllocator,
) -> tuple[list[CodeCandidate], list[TestCase], list[CompletionTranscript]]:
    """Bootstrap generation-zero candidates and unit tests.

    Candidate sourcing is batched: each of the configured prompts asks for
    a fixed number of distinct approaches, so the configured initial size
    is the ceiling, not a guarantee; parse failures just shrink the batch.
    Ending up with zero candidates aborts the run.  Zero parsable unit
    tests is survivable (anchors still drive updates) and only warns.
    """
    transcripts: list[CompletionTranscript] = []
    prior = Belief.from_probability(config.initial_belief, config.log_odds_limit)

    candidates: list[CodeCandidate] = []
    for batch in range(config.init_prompt_count):
        prompt = render_prompt(
            "init_code",
            statement=problem.statement,
            approaches=config.approaches_per_prompt,
            batch=batch + 1,
            batches=config.init_prompt_count,
        )
        completion = provider.complete(prompt, purpose="init_code")
        transcripts.append(completion.transcript)
        blocks = extract_code_blocks(completion.text)
        admitted = 0
        for block in blocks:
            if admitted >= config.approaches_per_prompt:
                break
            if not source_is_valid(block, problem.runtime):
                continue
            candidates.append(
                CodeCandidate(
                    id=ids.code_id(),
                    source=block,
                    belief=prior,
                    generation=0,
                    origin="init",
                )
            )
            admitted += 1
        if admitted < config.approaches_per_prompt:
            log.warning(
                "init batch %d yielded %d/%d candidates",
                batch + 1,
                admitted,
                config.approaches_per_prompt,
            )
    if not candidates:
        raise InitializationError(
            f"initialization produced zero parsable candidates for problem {problem.id}"
        )

    tests: list[TestCase] = []
    prompt = render_prompt(
        "init_tests", statement=problem.statement, test_count=config.initial_tests
    )
    completion = provider.complete(prompt, purpose="init_tests")
    transcripts.append(completion.transcript)
    try:
        pairs = extract_tests(completion.text)
    except ParseFailure:
        log.warning("initial test generation produced nothing parsable; starting without unit tests")
        pairs = []
    for input_data, expected in pairs[: config.initial_tests]:
        tests.append(
            TestCase(
                id=ids.test_id(),
                input_data=input_data,
                expected_output=expected,
                belief=prior,
                generation=0,
                origin="init",
                kind=UNIT_KIND,
                comparison=problem.comparison,
            )
        )
    return candidates, tests, transcripts
