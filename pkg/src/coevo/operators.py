"""The prompt-driven variation operators.

Each operator renders a template, calls the completion provider, and
turns the reply into new population members.  Unparsable replies are
retried a bounded number of times and then surface as a parse failure
the engine treats as one spent attempt.  Pair-forming operators select
their own parents so the engine stays operator-agnostic.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field as dataclass_field
from random import Random
from typing import Mapping, Sequence

from .beliefs import Belief
from .config import RunConfig
from .errors import InapplicableOperator, ParseFailure
from .executor import compare_outputs
from .gateway import Provider, extract_code_block, extract_tests
from .population import (
    CodeCandidate,
    DIFF_KIND,
    IdAllocator,
    ObservationMatrix,
    TestCase,
    UNIT_KIND,
    cluster_rows,
    offspring_belief,
    roulette_select,
)
from .problems import ProblemSpec, source_is_valid
from .prompts import render_prompt

log = logging.getLogger(__name__)

RETRY_BOUND = 3

CODE_POP = "code"
UNIT_POP = "unit_test"
DIFF_POP = "diff_test"


@dataclass(frozen=True)
class OperatorSpec:
    name: str
    arity: int
    population: str
    context_needs: str


OPERATOR_SPECS: dict[str, OperatorSpec] = {
    spec.name: spec
    for spec in (
        OperatorSpec("semantic_crossover", 2, CODE_POP, "none"),
        OperatorSpec("debug", 1, CODE_POP, "failing_tests"),
        OperatorSpec("reimplement", 1, CODE_POP, "none"),
        OperatorSpec("discriminate", 1, UNIT_POP, "code_pair"),
        OperatorSpec("complementary_crossover", 2, UNIT_POP, "none"),
        OperatorSpec("edge_case_gen", 1, UNIT_POP, "none"),
        OperatorSpec("divergence_discovery", 2, DIFF_POP, "passing_tests"),
    )
}

# Rate-map keys are the short configuration names.
CODE_RATE_TO_OPERATOR = {
    "debug": "debug",
    "reimplement": "reimplement",
    "crossover": "semantic_crossover",
}
TEST_RATE_TO_OPERATOR = {
    "discriminate": "discriminate",
    "edge_case": "edge_case_gen",
    "complementary": "complementary_crossover",
}

_DISCRIMINATE_GUIDANCE = {
    "expose": (
        "Both candidates pass the test above, so it no longer separates them. "
        "Write one new test a subtly incorrect solution would fail: target an input "
        "region where the two approaches could diverge from the specification."
    ),
    "refine": (
        "The two candidates disagree on the test above. Write one refined test that "
        "pins down the behavior the problem statement actually requires on that kind "
        "of input."
    ),
    "separate": (
        "Both candidates fail the test above. Write one test that separates their "
        "failure modes: an input on which their outputs should differ."
    ),
}

_VERDICT = re.compile(r"VERDICT:\s*(valid|repaired)", re.IGNORECASE)


@dataclass
class OperatorResult:
    """Admitted children plus what the engine must do with them."""

    operator: str
    children: list = dataclass_field(default_factory=list)
    replaced_parent_id: str | None = None
    verdict: str | None = None


def select_operator(rates: Mapping[str, float], rng: Random) -> str:
    """Draw a rate-map key with probability proportional to its rate."""
    keys = sorted(rates)
    total = sum(rates[k] for k in keys)
    r = rng.random() * total
    acc = 0.0
    for key in keys:
        acc += rates[key]
        if r <= acc:
            return key
    return keys[-1]


def rank_sample(items: Sequence, k: int, rng: Random) -> list:
    """Sample up to k items without replacement, weighted by belief rank.

    The highest-belief item has rank 1 and weight 1, the next weight 1/2,
    and so on; high-credibility context is favored without starving the
    tail.
    """
    pool = sorted(items, key=lambda x: (-x.belief.probability, x.id))
    chosen: list = []
    while pool and len(chosen) < k:
        weights = [1.0 / (rank + 1) for rank in range(len(pool))]
        total = sum(weights)
        r = rng.random() * total
        acc = 0.0
        idx = len(pool) - 1
        for i, w in enumerate(weights):
            acc += w
            if r <= acc:
                idx = i
                break
        chosen.append(pool.pop(idx))
    return chosen


class OperatorLibrary:
    """Binds the operator set to one run's provider, problem, and config."""

    def __init__(
        self,
        provider: Provider,
        config: RunConfig,
        problem: ProblemSpec,
        ids: IdAllocator,
        executor,
    ) -> None:
        self.provider = provider
        self.config = config
        self.problem = problem
        self.ids = ids
        self.executor = executor
        self.transcripts = []

    def drain_transcripts(self) -> list:
        drained, self.transcripts = self.transcripts, []
        return drained

    def _complete(self, prompt: str, purpose: str) -> str:
        temperature = None
        if purpose == "debug":
            temperature = self.config.provider.debug_temperature
        completion = self.provider.complete(prompt, purpose=purpose, temperature=temperature)
        self.transcripts.append(completion.transcript)
        return completion.text

    # -- code operators ----------------------------------------------------

    def make_code_offspring(
        self,
        rate_key: str,
        candidates: Sequence[CodeCandidate],
        matrix: ObservationMatrix,
        tests_by_id: Mapping[str, TestCase],
        rng: Random,
        generation: int,
    ) -> OperatorResult:
        name = CODE_RATE_TO_OPERATOR[rate_key]
        if name == "semantic_crossover":
            if len(candidates) < 2:
                raise InapplicableOperator("crossover needs two candidates")
            a, b = roulette_select(candidates, rng, k=2)
            if a.id == b.id:
                raise InapplicableOperator("crossover drew the same parent twice")
            return self._semantic_crossover(a, b, generation)
        (parent,) = roulette_select(candidates, rng, k=1)
        if name == "debug":
            return self._debug(parent, matrix, tests_by_id, rng, generation)
        return self._reimplement(parent, generation)

    def _semantic_crossover(
        self, a: CodeCandidate, b: CodeCandidate, generation: int
    ) -> OperatorResult:
        prompt = render_prompt(
            "semantic_crossover",
            statement=self.problem.statement,
            source_a=_fenced(a.source),
            source_b=_fenced(b.source),
        )
        source = self._code_reply(prompt, "semantic_crossover")
        child = self._code_child(source, "semantic_crossover", (a, b), generation)
        return OperatorResult("semantic_crossover", [child])

    def _debug(
        self,
        parent: CodeCandidate,
        matrix: ObservationMatrix,
        tests_by_id: Mapping[str, TestCase],
        rng: Random,
        generation: int,
    ) -> OperatorResult:
        failing = [
            tests_by_id[tid]
            for tid in matrix.col_ids
            if tid in tests_by_id and not matrix.entry(parent.id, tid)
        ]
        if not failing:
            raise InapplicableOperator(f"{parent.id} fails no tests")
        context = rank_sample(failing, self.config.debug_context_tests, rng)
        failures = "\n".join(
            _failure_block(t, matrix.cause(parent.id, t.id), matrix.detail(parent.id, t.id))
            for t in context
        )
        prompt = render_prompt(
            "debug",
            statement=self.problem.statement,
            source=_fenced(parent.source),
            failures=failures,
        )
        source = self._code_reply(prompt, "debug")
        child = self._code_child(source, "debug", (parent,), generation)
        return OperatorResult("debug", [child])

    def _reimplement(self, parent: CodeCandidate, generation: int) -> OperatorResult:
        prompt = render_prompt(
            "reimplement", statement=self.problem.statement, source=_fenced(parent.source)
        )
        source = self._code_reply(prompt, "reimplement")
        child = self._code_child(source, "reimplement", (parent,), generation)
        return OperatorResult("reimplement", [child])

    def _code_reply(self, prompt: str, purpose: str) -> str:
        last: ParseFailure | None = None
        for _ in range(RETRY_BOUND):
            try:
                source = extract_code_block(self._complete(prompt, purpose))
                if not source_is_valid(source, self.problem.runtime):
                    raise ParseFailure(f"{purpose} produced structurally invalid code")
                return source
            except ParseFailure as exc:
                last = exc
        raise last

    def _code_child(
        self,
        source: str,
        operator: str,
        parents: tuple[CodeCandidate, ...],
        generation: int,
    ) -> CodeCandidate:
        return CodeCandidate(
            id=self.ids.code_id(),
            source=source,
            belief=offspring_belief(parents),
            generation=generation,
            origin=operator,
            parent_ids=tuple(p.id for p in parents),
        )

    # -- test operators ----------------------------------------------------

    def make_test_offspring(
        self,
        rate_key: str,
        unit_tests: Sequence[TestCase],
        code_by_id: Mapping[str, CodeCandidate],
        matrix: ObservationMatrix,
        rng: Random,
        generation: int,
    ) -> OperatorResult:
        name = TEST_RATE_TO_OPERATOR[rate_key]
        if not unit_tests:
            raise InapplicableOperator("no generated tests to evolve")
        if name == "complementary_crossover":
            a, b = roulette_select(unit_tests, rng, k=2)
            return self._complementary_crossover(a, b, generation)
        (parent,) = roulette_select(unit_tests, rng, k=1)
        if name == "discriminate":
            return self._discriminate(parent, code_by_id, matrix, generation)
        return self._edge_case(parent, generation)

    def _discriminate(
        self,
        parent: TestCase,
        code_by_id: Mapping[str, CodeCandidate],
        matrix: ObservationMatrix,
        generation: int,
    ) -> OperatorResult:
        a, b = _top_block_representatives(code_by_id, matrix)
        out_a = matrix.entry(a.id, parent.id)
        out_b = matrix.entry(b.id, parent.id)
        if out_a and out_b:
            branch = "expose"
        elif out_a or out_b:
            branch = "refine"
        else:
            branch = "separate"
        prompt = render_prompt(
            "discriminate",
            statement=self.problem.statement,
            test_input=parent.input_data.rstrip("\n"),
            test_output=parent.expected_output.rstrip("\n"),
            source_a=_fenced(a.source),
            source_b=_fenced(b.source),
            branch_guidance=_DISCRIMINATE_GUIDANCE[branch],
        )
        pair = self._test_reply(prompt, "discriminate")
        child = self._test_child(pair, "discriminate", (parent,), generation)
        return OperatorResult("discriminate", [child])

    def _complementary_crossover(
        self, a: TestCase, b: TestCase, generation: int
    ) -> OperatorResult:
        prompt = render_prompt(
            "complementary_crossover",
            statement=self.problem.statement,
            input_a=a.input_data.rstrip("\n"),
            output_a=a.expected_output.rstrip("\n"),
            input_b=b.input_data.rstrip("\n"),
            output_b=b.expected_output.rstrip("\n"),
        )
        pair = self._test_reply(prompt, "complementary_crossover")
        parents = (a,) if a.id == b.id else (a, b)
        child = self._test_child(pair, "complementary_crossover", parents, generation)
        return OperatorResult("complementary_crossover", [child])

    def _edge_case(self, parent: TestCase, generation: int) -> OperatorResult:
        prompt = render_prompt(
            "edge_case",
            statement=self.problem.statement,
            test_input=parent.input_data.rstrip("\n"),
            test_output=parent.expected_output.rstrip("\n"),
        )
        last: ParseFailure | None = None
        for _ in range(RETRY_BOUND):
            try:
                text = self._complete(prompt, "edge_case")
                match = _VERDICT.search(text)
                if match is None:
                    raise ParseFailure("edge-case audit reply carried no verdict")
                verdict = match.group(1).lower()
                pair = extract_tests(text)[0]
                child = self._test_child(pair, "edge_case_gen", (parent,), generation)
                replaced = parent.id if verdict == "repaired" else None
                return OperatorResult(
                    "edge_case_gen", [child], replaced_parent_id=replaced, verdict=verdict
                )
            except ParseFailure as exc:
                last = exc
        raise last

    def _test_reply(self, prompt: str, purpose: str) -> tuple[str, str]:
        last: ParseFailure | None = None
        for _ in range(RETRY_BOUND):
            try:
                return extract_tests(self._complete(prompt, purpose))[0]
            except ParseFailure as exc:
                last = exc
        raise last

    def _test_child(
        self,
        pair: tuple[str, str],
        operator: str,
        parents: tuple[TestCase, ...],
        generation: int,
        kind: str = UNIT_KIND,
        belief: Belief | None = None,
    ) -> TestCase:
        input_data, expected = pair
        return TestCase(
            id=self.ids.test_id(),
            input_data=input_data,
            expected_output=expected,
            belief=belief if belief is not None else offspring_belief(parents),
            generation=generation,
            origin=operator,
            kind=kind,
            comparison=self.problem.comparison,
            parent_ids=tuple(p.id for p in parents),
        )

    # -- differential testing ----------------------------------------------

    def make_divergence_tests(
        self,
        a: CodeCandidate,
        b: CodeCandidate,
        passing_tests: Sequence[TestCase],
        generation: int,
    ) -> OperatorResult:
        """Probe two behaviorally identical candidates for disagreement.

        The provider supplies an input generator; each generated input on
        which the candidates' captured outputs differ yields TWO competing
        tests, one per observed output.  At most one of the pair can match
        the specification, and the next update round decides which.
        """
        inputs_shown = "\n".join(
            f"- {t.input_data.rstrip()!r}" for t in list(passing_tests)[:8]
        ) or "- (none recorded)"
        prompt = render_prompt(
            "divergence",
            statement=self.problem.statement,
            source_a=_fenced(a.source),
            source_b=_fenced(b.source),
            passing_inputs=inputs_shown,
        )
        generator = self._code_reply(prompt, "divergence")
        prior = Belief.from_probability(
            self.config.initial_belief, self.config.log_odds_limit
        )
        result = OperatorResult("divergence_discovery")
        seen: set[str] = set()
        for seed in range(self.config.divergence_inputs_per_pair):
            cause, raw = self.executor.run_capture(generator, f"{seed}\n")
            if cause is not None:
                log.info("divergence generator failed on seed %d: %s", seed, cause)
                continue
            probe = raw.decode("utf-8", errors="replace")
            if not probe.strip() or probe in seen:
                continue
            seen.add(probe)
            cause_a, out_a = self.executor.run_capture(a.source, probe)
            cause_b, out_b = self.executor.run_capture(b.source, probe)
            if cause_a is not None or cause_b is not None:
                continue
            text_a = out_a.decode("utf-8", errors="replace")
            text_b = out_b.decode("utf-8", errors="replace")
            if compare_outputs(text_a, text_b, self.problem.comparison):
                continue
            for expected in (text_a, text_b):
                result.children.append(
                    TestCase(
                        id=self.ids.test_id(),
                        input_data=probe,
                        expected_output=expected,
                        belief=prior,
                        generation=generation,
                        origin="divergence_discovery",
                        kind=DIFF_KIND,
                        comparison=self.problem.comparison,
                        parent_ids=(a.id, b.id),
                    )
                )
        return result


def _fenced(source: str) -> str:
    return f"```\n{source}\n```"


def _failure_block(test: TestCase, cause: str, detail: str) -> str:
    lines = [
        f"Test {test.id} (belief {test.belief.probability:.3f}, cause: {cause}):",
        "INPUT:",
        test.input_data.rstrip("\n"),
        "EXPECTED OUTPUT:",
        test.expected_output.rstrip("\n"),
    ]
    if detail:
        lines += ["OBSERVED DIAGNOSTICS:", detail]
    return "\n".join(lines) + "\n"


def _top_block_representatives(
    code_by_id: Mapping[str, CodeCandidate], matrix: ObservationMatrix
) -> tuple[CodeCandidate, CodeCandidate]:
    """Highest-belief representatives of the two strongest behavior blocks."""
    reps = []
    for block in cluster_rows(matrix):
        members = sorted(
            (code_by_id[cid] for cid in block if cid in code_by_id),
            key=lambda c: (-c.belief.probability, c.id),
        )
        if members:
            reps.append(members[0])
    if len(reps) < 2:
        raise InapplicableOperator("need two behavior blocks to discriminate between")
    reps.sort(key=lambda c: (-c.belief.probability, c.id))
    return reps[0], reps[1]
