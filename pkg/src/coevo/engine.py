"""Run orchestration: execute, update, evolve, select.

One run alternates between evolving the test population (even
generations) and the code population (odd generations), with no
evolution after the final update.  All randomness flows through a single
seeded generator, so a run is fully reproducible against the mock
provider.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from random import Random
from typing import Mapping

from .beliefs import InteractionLedger, generation_update
from .config import RunConfig
from .errors import InapplicableOperator, ParseFailure
from .executor import SandboxExecutor
from .gateway import Provider
from .operators import OperatorLibrary, select_operator
from .population import (
    CodeCandidate,
    IdAllocator,
    ObservationMatrix,
    TestCase,
    UNIT_KIND,
    cluster_cols,
    cluster_rows,
    select_code_elites,
    select_test_elites,
)
from .problems import ProblemSpec, extract_anchors, init_populations

log = logging.getLogger(__name__)

TESTS_EVOLVED = "tests_evolved"
CODE_EVOLVED = "code_evolved"
TERMINAL = "terminal"

EARLY_STOP_BELIEF = 1.0 - 1e-6


@dataclass(frozen=True)
class GenerationRecord:
    """What one generation did, snapshotted after its belief update."""

    index: int
    phase: str
    matrix_digest: str
    code_beliefs: dict[str, float]
    test_beliefs: dict[str, float]
    births: list[str]
    deaths: list[str]
    offspring_target: int
    row_cluster_sizes: list[int]
    col_cluster_sizes: list[int]


@dataclass(frozen=True)
class RunResult:
    best_code: CodeCandidate
    final_candidates: list[CodeCandidate]
    final_tests: list[TestCase]
    generations: list[GenerationRecord]
    anchors_passed: bool


def map_select(candidates) -> CodeCandidate:
    """Highest-belief candidate; ties go to the older id."""
    pool = list(candidates)
    if not pool:
        raise ValueError("cannot select from an empty population")
    return sorted(pool, key=lambda c: (-c.belief.probability, c.id))[0]


def matrix_digest(matrix: ObservationMatrix) -> str:
    payload = {
        "rows": list(matrix.row_ids),
        "cols": list(matrix.col_ids),
        "bits": [
            "".join("1" if matrix.entry(c, t) else "0" for t in matrix.col_ids)
            for c in matrix.row_ids
        ],
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def run(
    problem: ProblemSpec,
    config: RunConfig,
    provider: Provider,
    executor: SandboxExecutor | None = None,
    log_writer=None,
) -> RunResult:
    """Execute one full synthesis run and return the MAP candidate."""
    config.validate()
    problem.validate(config.anchoring_enabled)
    if executor is None:
        executor = SandboxExecutor(config.limits, problem.runtime)
    rng = Random(config.seed)
    ids = IdAllocator()

    anchors = extract_anchors(problem, config, ids)
    candidates, unit_tests, init_transcripts = init_populations(problem, config, provider, ids)
    code: dict[str, CodeCandidate] = {c.id: c for c in candidates}
    tests: dict[str, TestCase] = {t.id: t for t in anchors}
    tests.update({t.id: t for t in unit_tests})
    anchor_ids = frozenset(t.id for t in anchors if t.is_anchor)

    library = OperatorLibrary(provider, config, problem, ids, executor)
    ledger = InteractionLedger()

    if log_writer is not None:
        log_writer.emit(
            {
                "event": "run_start",
                "problem": {
                    "id": problem.id,
                    "statement_digest": hashlib.sha256(
                        problem.statement.encode("utf-8")
                    ).hexdigest(),
                    "comparison": problem.comparison,
                    "runtime": problem.runtime,
                },
                "config": config.snapshot(),
            }
        )
        for transcript in init_transcripts:
            log_writer.emit({"event": "transcript", **transcript.to_event()})
        for individual in [*anchors, *candidates, *unit_tests]:
            log_writer.emit(_birth_event(individual))

    records: list[GenerationRecord] = []
    last_matrix: ObservationMatrix | None = None
    noise_by_class = config.noise_by_class()

    for g in range(config.max_generations):
        matrix = executor.run_matrix(list(code.values()), list(tests.values()))
        last_matrix = matrix
        new_code_b, new_test_b = generation_update(
            matrix,
            {cid: c.belief for cid, c in code.items()},
            {tid: t.belief for tid, t in tests.items()},
            anchor_ids,
            noise_by_class,
            config.learning_rate,
            ledger,
            config.log_odds_limit,
        )
        for cid, belief in new_code_b.items():
            code[cid] = code[cid].with_belief(belief)
        for tid, belief in new_test_b.items():
            if tid not in anchor_ids:
                tests[tid] = tests[tid].with_belief(belief)

        stop = config.early_stop and _converged(code, matrix, anchor_ids)
        births: list[str] = []
        deaths: list[str] = []
        target = 0
        if stop or g >= config.max_generations - 1:
            phase = TERMINAL
        elif g % 2 == 0:
            phase = TESTS_EVOLVED
            births, deaths, target = _evolve_tests(
                tests, code, matrix, config, library, rng, ledger, g + 1
            )
        else:
            phase = CODE_EVOLVED
            births, deaths, target = _evolve_code(
                code, tests, matrix, config, library, rng, ledger, g + 1
            )

        record = GenerationRecord(
            index=g,
            phase=phase,
            matrix_digest=matrix_digest(matrix),
            code_beliefs={cid: new_code_b[cid].probability for cid in new_code_b},
            test_beliefs={tid: new_test_b[tid].probability for tid in new_test_b},
            births=births,
            deaths=deaths,
            offspring_target=target,
            row_cluster_sizes=[len(b) for b in cluster_rows(matrix)],
            col_cluster_sizes=[len(b) for b in cluster_cols(matrix)],
        )
        records.append(record)

        if log_writer is not None:
            for transcript in library.drain_transcripts():
                log_writer.emit({"event": "transcript", **transcript.to_event()})
            for bid in births:
                individual = code.get(bid) or tests.get(bid)
                log_writer.emit(_birth_event(individual))
            log_writer.emit(
                {
                    "event": "generation",
                    "index": record.index,
                    "phase": record.phase,
                    "matrix_digest": record.matrix_digest,
                    "code_beliefs": record.code_beliefs,
                    "test_beliefs": record.test_beliefs,
                    "births": record.births,
                    "deaths": record.deaths,
                    "offspring_target": record.offspring_target,
                    "row_cluster_sizes": record.row_cluster_sizes,
                    "col_cluster_sizes": record.col_cluster_sizes,
                    "executor": {"launches": executor.launches, "cache_hits": executor.cache_hits},
                }
            )
        if stop:
            log.info("early stop at generation %d", g)
            break

    best = map_select(code.values())
    anchors_passed = all(
        last_matrix.entry(best.id, aid)
        for aid in anchor_ids
        if aid in last_matrix.col_ids
    )
    result = RunResult(
        best_code=best,
        final_candidates=list(code.values()),
        final_tests=list(tests.values()),
        generations=records,
        anchors_passed=anchors_passed,
    )
    if log_writer is not None:
        log_writer.emit(
            {
                "event": "result",
                "best_id": best.id,
                "best_belief": best.belief.probability,
                "best_source_digest": hashlib.sha256(best.source.encode("utf-8")).hexdigest(),
                "anchors_passed": anchors_passed,
                "generation_count": len(records),
                "final_code_ids": [c.id for c in result.final_candidates],
                "final_test_ids": [t.id for t in result.final_tests],
            }
        )
    return result


def _converged(
    code: Mapping[str, CodeCandidate], matrix: ObservationMatrix, anchor_ids: frozenset[str]
) -> bool:
    anchor_cols = [a for a in anchor_ids if a in matrix.col_ids]
    for cand in code.values():
        if cand.belief.probability > EARLY_STOP_BELIEF and all(
            matrix.entry(cand.id, a) for a in anchor_cols
        ):
            return True
    return False


def _birth_event(individual) -> dict:
    event = {
        "event": "birth",
        "id": individual.id,
        "generation": individual.generation,
        "origin": individual.origin,
        "parents": list(individual.parent_ids),
        "belief": individual.belief.probability,
    }
    if isinstance(individual, CodeCandidate):
        event["kind"] = "code"
        event["source"] = individual.source
    else:
        event["kind"] = "test"
        event["input"] = individual.input_data
        event["expected"] = individual.expected_output
        event["test_kind"] = individual.kind
        event["comparison"] = individual.comparison
    return event


def _evolve_code(
    code: dict[str, CodeCandidate],
    tests: Mapping[str, TestCase],
    matrix: ObservationMatrix,
    config: RunConfig,
    library: OperatorLibrary,
    rng: Random,
    ledger: InteractionLedger,
    born_generation: int,
) -> tuple[list[str], list[str], int]:
    pool = list(code.values())
    n_target = math.ceil(len(pool) * config.offspring_rate)
    capacity = max(1, config.max_candidates - n_target)
    elites = select_code_elites(pool, matrix, config.elitism_rate, capacity)
    elite_ids = {c.id for c in elites}
    deaths = [cid for cid in code if cid not in elite_ids]

    offspring: list[CodeCandidate] = []
    attempts = 0
    while len(offspring) < n_target and attempts < 5 * n_target:
        attempts += 1
        rate_key = select_operator(config.code_op_rates, rng)
        try:
            result = library.make_code_offspring(
                rate_key, pool, matrix, tests, rng, born_generation
            )
        except (ParseFailure, InapplicableOperator) as exc:
            log.debug("code operator %s skipped: %s", rate_key, exc)
            continue
        offspring.extend(result.children)
    if n_target and not offspring:
        log.warning("all code-offspring attempts failed; carrying elites only")

    code.clear()
    for cand in elites:
        code[cand.id] = cand
    for cand in offspring:
        code[cand.id] = cand
    for cid in deaths:
        ledger.drop_individual(cid)
    return [c.id for c in offspring], deaths, n_target


def _evolve_tests(
    tests: dict[str, TestCase],
    code: Mapping[str, CodeCandidate],
    matrix: ObservationMatrix,
    config: RunConfig,
    library: OperatorLibrary,
    rng: Random,
    ledger: InteractionLedger,
    born_generation: int,
) -> tuple[list[str], list[str], int]:
    evolved = [t for t in tests.values() if not t.is_anchor]
    unit_parents = [t for t in evolved if t.kind == UNIT_KIND]
    n_target = math.ceil(len(evolved) * config.offspring_rate)
    elites = select_test_elites(list(tests.values()), matrix, config.test_soft_cap)
    elite_ids = {t.id for t in elites}

    offspring: list[TestCase] = []
    replaced: set[str] = set()
    attempts = 0
    while unit_parents and len(offspring) < n_target and attempts < 5 * n_target:
        attempts += 1
        rate_key = select_operator(config.test_op_rates, rng)
        try:
            result = library.make_test_offspring(
                rate_key, unit_parents, code, matrix, rng, born_generation
            )
        except (ParseFailure, InapplicableOperator) as exc:
            log.debug("test operator %s skipped: %s", rate_key, exc)
            continue
        offspring.extend(result.children)
        if result.replaced_parent_id is not None:
            replaced.add(result.replaced_parent_id)
    if n_target and unit_parents and not offspring:
        log.warning("all test-offspring attempts failed; carrying elites only")

    # Differential probes: one call per multi-member behavior block, the
    # strongest blocks first.
    blocks = [b for b in cluster_rows(matrix) if len(b) >= 2]
    ranked_blocks = sorted(
        blocks,
        key=lambda b: (
            -max(code[cid].belief.probability for cid in b if cid in code),
            min(b),
        ),
    )
    for block in ranked_blocks[: config.divergence_blocks_per_generation]:
        members = sorted(
            (code[cid] for cid in block if cid in code),
            key=lambda c: (-c.belief.probability, c.id),
        )
        if len(members) < 2:
            continue
        a, b = members[0], members[1]
        passing = [
            t
            for t in tests.values()
            if matrix.entry(a.id, t.id) and matrix.entry(b.id, t.id)
        ]
        try:
            result = library.make_divergence_tests(a, b, passing, born_generation)
        except ParseFailure as exc:
            log.debug("divergence probe skipped: %s", exc)
            continue
        offspring.extend(result.children)

    survivors = [t for t in elites if t.id not in replaced]
    survivor_ids = {t.id for t in survivors}
    deaths = [tid for tid in tests if tid not in survivor_ids]
    tests.clear()
    for t in survivors:
        tests[t.id] = t
    for t in offspring:
        tests[t.id] = t
    for tid in deaths:
        ledger.drop_individual(tid)
    return [t.id for t in offspring], deaths, n_target
