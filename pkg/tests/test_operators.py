from collections import Counter
from random import Random

import pytest

from coevo.beliefs import Belief
from coevo.config import ExecutionLimits, RunConfig
from coevo.errors import InapplicableOperator, ParseFailure
from coevo.executor import SandboxExecutor
from coevo.gateway import MockProvider
from coevo.operators import (
    OperatorLibrary,
    rank_sample,
    select_operator,
)
from coevo.population import (
    ANCHOR_KIND,
    CodeCandidate,
    DIFF_KIND,
    IdAllocator,
    ObservationMatrix,
    TestCase,
)
from coevo.problems import ProblemSpec
from conftest import REFERENCE_ROWS


def candidate(cid: str, belief: float = 0.5, source: str | None = None) -> CodeCandidate:
    return CodeCandidate(
        id=cid,
        source=source if source is not None else f"# {cid}\nprint(0)\n",
        belief=Belief.from_probability(belief),
        generation=0,
        origin="test",
    )


def unit_test(tid: str, belief: float = 0.5, input_data: str = "1\n",
              expected: str = "1\n", kind: str = "unit") -> TestCase:
    return TestCase(
        id=tid,
        input_data=input_data,
        expected_output=expected,
        belief=Belief.from_probability(belief),
        generation=0,
        origin="test",
        kind=kind,
    )


@pytest.fixture(scope="module")
def executor():
    return SandboxExecutor(ExecutionLimits(wall_timeout=5.0))


def library(script=None, executor=None, config=None) -> OperatorLibrary:
    problem = ProblemSpec(
        id="p", statement="Echo stdin.", public_examples=(("a\n", "a\n"),)
    )
    lib = OperatorLibrary(
        provider=MockProvider(script=script),
        config=config or RunConfig(),
        problem=problem,
        ids=IdAllocator(),
        executor=executor,
    )
    return lib


def simple_matrix(rows, tests):
    col_ids = [t.id for t in tests]
    classes = {t.id: ("anchor" if t.kind == ANCHOR_KIND else "evolved") for t in tests}
    return ObservationMatrix.from_rows(rows, col_ids, classes)


class TestSelectOperator:
    def test_frequencies_track_rates(self):
        rates = {"debug": 0.6, "reimplement": 0.2, "crossover": 0.2}
        rng = Random(5)
        counts = Counter(select_operator(rates, rng) for _ in range(100_000))
        assert counts["debug"] / 100_000 == pytest.approx(0.6, abs=0.01)
        assert counts["reimplement"] / 100_000 == pytest.approx(0.2, abs=0.01)
        assert counts["crossover"] / 100_000 == pytest.approx(0.2, abs=0.01)

    def test_deterministic_under_seed(self):
        rates = {"a": 0.5, "b": 0.5}
        seq1 = [select_operator(rates, Random(9)) for _ in range(1)]
        seq2 = [select_operator(rates, Random(9)) for _ in range(1)]
        assert seq1 == seq2

    def test_zero_rate_key_never_selected(self):
        rates = {"a": 1.0, "b": 0.0}
        rng = Random(2)
        assert all(select_operator(rates, rng) == "a" for _ in range(1000))


class TestRankSample:
    def test_highest_belief_favored(self):
        items = [unit_test("t0000", 0.9), unit_test("t0001", 0.5), unit_test("t0002", 0.1)]
        rng = Random(31)
        counts = Counter(rank_sample(items, 1, rng)[0].id for _ in range(60_000))
        # rank weights 1, 1/2, 1/3 over three items
        assert counts["t0000"] / 60_000 == pytest.approx(6 / 11, abs=0.015)
        assert counts["t0002"] / 60_000 == pytest.approx(2 / 11, abs=0.015)

    def test_without_replacement(self):
        items = [unit_test(f"t{i:04d}", 0.5) for i in range(4)]
        sample = rank_sample(items, 4, Random(0))
        assert sorted(t.id for t in sample) == [t.id for t in items]

    def test_k_larger_than_pool(self):
        items = [unit_test("t0000", 0.5)]
        assert len(rank_sample(items, 5, Random(0))) == 1


CODE_REPLY = "```\nimport sys\nsys.stdout.write(sys.stdin.read())\n```"
TEST_REPLY = "INPUT:\n9 9\nOUTPUT:\n18\n"


class TestCodeOperators:
    def test_semantic_crossover_child(self):
        lib = library(script={"semantic_crossover": [CODE_REPLY]})
        parents = [candidate("c0000", 0.9), candidate("c0001", 0.3)]
        tests = [unit_test("t0000")]
        matrix = simple_matrix({"c0000": (1,), "c0001": (1,)}, tests)
        result = lib.make_code_offspring(
            "crossover", parents, matrix, {t.id: t for t in tests}, Random(4), generation=1
        )
        assert result.operator == "semantic_crossover"
        (child,) = result.children
        assert set(child.parent_ids) == {"c0000", "c0001"}
        assert child.origin == "semantic_crossover"
        assert child.generation == 1
        assert child.belief.probability == pytest.approx(0.3)
        assert "sys.stdin" in child.source

    def test_crossover_needs_two_candidates(self):
        lib = library()
        tests = [unit_test("t0000")]
        matrix = simple_matrix({"c0000": (1,)}, tests)
        with pytest.raises(InapplicableOperator):
            lib.make_code_offspring(
                "crossover", [candidate("c0000")], matrix, {t.id: t for t in tests},
                Random(0), generation=1,
            )

    def test_debug_prompt_carries_failure_context(self):
        lib = library(script={"debug": [CODE_REPLY]})
        parent = candidate("c0000", 0.5)
        tests = [
            unit_test("t0000", 0.9, "5\n", "5\n"),
            unit_test("t0001", 0.7, "6\n", "6\n"),
        ]
        matrix = ObservationMatrix.from_rows(
            {"c0000": (0, 0)}, ["t0000", "t0001"], {"t0000": "evolved", "t0001": "evolved"}
        )
        matrix.record("c0000", "t0000", False, cause="mismatch", detail="expected 5 got 4")
        result = lib.make_code_offspring(
            "debug", [parent], matrix, {t.id: t for t in tests}, Random(0), generation=2
        )
        (child,) = result.children
        assert child.origin == "debug"
        assert child.parent_ids == ("c0000",)
        purpose, prompt = lib.provider.calls[-1]
        assert purpose == "debug"
        assert "mismatch" in prompt
        assert "expected 5 got 4" in prompt

    def test_debug_respects_context_budget(self):
        config = RunConfig(debug_context_tests=2)
        lib = library(script={"debug": [CODE_REPLY]}, config=config)
        parent = candidate("c0000", 0.5)
        tests = [unit_test(f"t{i:04d}", 0.5, f"{i}\n", f"{i}\n") for i in range(6)]
        matrix = ObservationMatrix.from_rows(
            {"c0000": tuple(0 for _ in tests)},
            [t.id for t in tests],
            {t.id: "evolved" for t in tests},
        )
        lib.make_code_offspring(
            "debug", [parent], matrix, {t.id: t for t in tests}, Random(0), generation=1
        )
        _, prompt = lib.provider.calls[-1]
        assert prompt.count("input:") <= 2 or prompt.count("INPUT") <= 2

    def test_debug_inapplicable_when_nothing_fails(self):
        lib = library()
        parent = candidate("c0000")
        tests = [unit_test("t0000")]
        matrix = simple_matrix({"c0000": (1,)}, tests)
        with pytest.raises(InapplicableOperator):
            lib.make_code_offspring(
                "debug", [parent], matrix, {t.id: t for t in tests}, Random(0), generation=1
            )

    def test_debug_uses_low_temperature(self):
        lib = library(script={"debug": [CODE_REPLY]})
        parent = candidate("c0000")
        tests = [unit_test("t0000")]
        matrix = simple_matrix({"c0000": (0,)}, tests)
        lib.make_code_offspring(
            "debug", [parent], matrix, {t.id: t for t in tests}, Random(0), generation=1
        )
        transcript = lib.transcripts[-1]
        assert transcript.purpose == "debug"

    def test_reimplement_child(self):
        lib = library(script={"reimplement": [CODE_REPLY]})
        tests = [unit_test("t0000")]
        matrix = simple_matrix({"c0000": (1,)}, tests)
        result = lib.make_code_offspring(
            "reimplement", [candidate("c0000", 0.4)], matrix, {t.id: t for t in tests},
            Random(0), generation=3,
        )
        (child,) = result.children
        assert child.origin == "reimplement"
        assert child.belief.probability == pytest.approx(0.4)

    def test_invalid_code_retried_then_accepted(self):
        lib = library(script={"reimplement": ["this is not ( valid python", CODE_REPLY]})
        tests = [unit_test("t0000")]
        matrix = simple_matrix({"c0000": (1,)}, tests)
        result = lib.make_code_offspring(
            "reimplement", [candidate("c0000")], matrix, {t.id: t for t in tests},
            Random(0), generation=1,
        )
        assert len(result.children) == 1
        assert len(lib.transcripts) == 2

    def test_parse_failure_after_retry_budget(self):
        lib = library(script={"reimplement": ["still ( broken"]})
        tests = [unit_test("t0000")]
        matrix = simple_matrix({"c0000": (1,)}, tests)
        with pytest.raises(ParseFailure):
            lib.make_code_offspring(
                "reimplement", [candidate("c0000")], matrix, {t.id: t for t in tests},
                Random(0), generation=1,
            )
        assert len(lib.transcripts) == 3


class TestTestOperators:
    def two_block_setup(self):
        code = {
            "c0000": candidate("c0000", 0.9),
            "c0001": candidate("c0001", 0.8),
            "c0002": candidate("c0002", 0.7),
        }
        tests = [unit_test("t0000", 0.6, "3\n", "3\n")]
        return code, tests

    def test_discriminate_expose_branch(self):
        lib = library(script={"discriminate": [TEST_REPLY]})
        code, tests = self.two_block_setup()
        # two row blocks: {c0000, c0001} and {c0002}; parent passes both reps
        matrix = ObservationMatrix.from_rows(
            {"c0000": (1,), "c0001": (1,), "c0002": (1,)},
            ["t0000"],
            {"t0000": "evolved"},
        )
        # make c0002 a distinct block via a second column
        tests2 = tests + [unit_test("t0001", 0.5, "4\n", "4\n")]
        matrix = ObservationMatrix.from_rows(
            {"c0000": (1, 1), "c0001": (1, 1), "c0002": (1, 0)},
            ["t0000", "t0001"],
            {"t0000": "evolved", "t0001": "evolved"},
        )
        result = lib.make_test_offspring(
            "discriminate", tests2, code, matrix, Random(1), generation=1
        )
        (child,) = result.children
        assert child.origin == "discriminate"
        assert child.kind == "unit"
        _, prompt = lib.provider.calls[-1]
        assert "both" in prompt.lower() or "agree" in prompt.lower()

    def test_discriminate_needs_two_blocks(self):
        lib = library()
        code = {"c0000": candidate("c0000"), "c0001": candidate("c0001")}
        tests = [unit_test("t0000")]
        matrix = ObservationMatrix.from_rows(
            {"c0000": (1,), "c0001": (1,)}, ["t0000"], {"t0000": "evolved"}
        )
        with pytest.raises(InapplicableOperator):
            lib.make_test_offspring("discriminate", tests, code, matrix, Random(0), 1)

    def test_complementary_crossover_child(self):
        lib = library(script={"complementary_crossover": [TEST_REPLY]})
        code = {"c0000": candidate("c0000")}
        tests = [
            unit_test("t0000", 0.8, "1 2\n", "3\n"),
            unit_test("t0001", 0.6, "4 5\n", "9\n"),
        ]
        matrix = ObservationMatrix.from_rows(
            {"c0000": (1, 1)}, ["t0000", "t0001"], {"t0000": "evolved", "t0001": "evolved"}
        )
        result = lib.make_test_offspring(
            "complementary", tests, code, matrix, Random(2), generation=1
        )
        (child,) = result.children
        assert child.input_data == "9 9\n"
        assert child.expected_output == "18\n"
        assert len(child.parent_ids) == 2

    def test_edge_case_valid_adds(self):
        reply = "VERDICT: valid\nINPUT:\n0\nOUTPUT:\n0\n"
        lib = library(script={"edge_case": [reply]})
        code = {"c0000": candidate("c0000")}
        tests = [unit_test("t0000")]
        matrix = simple_matrix({"c0000": (1,)}, tests)
        result = lib.make_test_offspring("edge_case", tests, code, matrix, Random(0), 1)
        assert result.verdict == "valid"
        assert result.replaced_parent_id is None
        assert len(result.children) == 1

    def test_edge_case_repaired_replaces_parent(self):
        reply = "VERDICT: repaired\nINPUT:\n1\nOUTPUT:\n2\n"
        lib = library(script={"edge_case": [reply]})
        code = {"c0000": candidate("c0000")}
        tests = [unit_test("t0000")]
        matrix = simple_matrix({"c0000": (1,)}, tests)
        result = lib.make_test_offspring("edge_case", tests, code, matrix, Random(0), 1)
        assert result.verdict == "repaired"
        assert result.replaced_parent_id == "t0000"

    def test_edge_case_without_verdict_retries_to_failure(self):
        lib = library(script={"edge_case": ["no verdict here"]})
        code = {"c0000": candidate("c0000")}
        tests = [unit_test("t0000")]
        matrix = simple_matrix({"c0000": (1,)}, tests)
        with pytest.raises(ParseFailure):
            lib.make_test_offspring("edge_case", tests, code, matrix, Random(0), 1)

    def test_no_unit_tests_is_inapplicable(self):
        lib = library()
        code = {"c0000": candidate("c0000")}
        matrix = ObservationMatrix.from_rows({"c0000": ()}, [], {})
        with pytest.raises(InapplicableOperator):
            lib.make_test_offspring("edge_case", [], code, matrix, Random(0), 1)


GENERATOR_ECHO_SEED = (
    "```\nimport sys\nseed = int(sys.stdin.read().strip())\nprint(seed)\n```"
)


class TestDivergence:
    def test_diverging_pair_emits_twin_tests(self, executor):
        lib = library(script={"divergence": [GENERATOR_ECHO_SEED]}, executor=executor)
        a = candidate("c0000", source="import sys\nprint(int(sys.stdin.read()) + 1)\n")
        b = candidate("c0001", source="import sys\nprint(int(sys.stdin.read()) + 2)\n")
        result = lib.make_divergence_tests(a, b, [], generation=2)
        # 5 seeds, 5 distinct inputs, every one diverges -> two tests each
        assert len(result.children) == 10
        by_input: dict[str, list[TestCase]] = {}
        for child in result.children:
            by_input.setdefault(child.input_data, []).append(child)
        assert len(by_input) == 5
        for twins in by_input.values():
            assert len(twins) == 2
            outs = {t.expected_output for t in twins}
            assert len(outs) == 2
        for child in result.children:
            assert child.kind == DIFF_KIND
            assert child.parent_ids == ("c0000", "c0001")
            assert child.belief.probability == pytest.approx(0.2)

    def test_identical_behavior_emits_nothing(self, executor):
        lib = library(script={"divergence": [GENERATOR_ECHO_SEED]}, executor=executor)
        src = "import sys\nprint(int(sys.stdin.read()) + 1)\n"
        a = candidate("c0000", source=src)
        b = candidate("c0001", source=src)
        result = lib.make_divergence_tests(a, b, [], generation=2)
        assert result.children == []

    def test_crashing_generator_is_tolerated(self, executor):
        lib = library(
            script={"divergence": ["```\nraise RuntimeError('no generator')\n```"]},
            executor=executor,
        )
        a = candidate("c0000", source="print(1)\n")
        b = candidate("c0001", source="print(2)\n")
        result = lib.make_divergence_tests(a, b, [], generation=2)
        assert result.children == []

    def test_crashing_candidate_skips_input(self, executor):
        lib = library(script={"divergence": [GENERATOR_ECHO_SEED]}, executor=executor)
        a = candidate("c0000", source="import sys\nprint(int(sys.stdin.read()) + 1)\n")
        b = candidate("c0001", source="raise ValueError('dead')\n")
        result = lib.make_divergence_tests(a, b, [], generation=2)
        assert result.children == []

    def test_duplicate_probes_deduplicated(self, executor):
        constant_gen = "```\nprint(7)\n```"
        lib = library(script={"divergence": [constant_gen]}, executor=executor)
        a = candidate("c0000", source="import sys\nprint(int(sys.stdin.read()) + 1)\n")
        b = candidate("c0001", source="import sys\nprint(int(sys.stdin.read()) + 2)\n")
        result = lib.make_divergence_tests(a, b, [], generation=2)
        assert len(result.children) == 2
