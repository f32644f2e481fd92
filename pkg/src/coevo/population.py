"""Populations, observation matrices, and selection machinery.

Programs and tests are plain frozen records; all mutable evolutionary
state (beliefs, matrices, ledgers) lives alongside them in the engine.
Identifiers are allocated in birth order with zero-padded numerals so
lexicographic order equals age, which is what every deterministic
tie-break in selection leans on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from random import Random
from typing import Iterable, Mapping, Sequence

from .beliefs import ANCHOR_CLASS, EVOLVED_CLASS, Belief
from .errors import MatrixIncompleteError

ANCHOR_KIND = "anchor"
UNIT_KIND = "unit"
DIFF_KIND = "diff"

EXACT = "exact"
WHITESPACE_NORMALIZED = "whitespace_normalized"

EVOLVED_TEST_SOFT_CAP = 64


@dataclass(frozen=True)
class CodeCandidate:
    """One program in the population."""

    id: str
    source: str
    belief: Belief
    generation: int
    origin: str
    parent_ids: tuple[str, ...] = ()

    def with_belief(self, belief: Belief) -> "CodeCandidate":
        return replace(self, belief=belief)


@dataclass(frozen=True)
class TestCase:
    """One input/expected-output probe.

    ``kind`` distinguishes the trusted public examples ("anchor") from
    generated tests ("unit"); anchors are exempt from belief updates and
    from every pruning rule.
    """

    __test__ = False  # keep pytest collection away from the domain name

    id: str
    input_data: str
    expected_output: str
    belief: Belief
    generation: int
    origin: str
    kind: str = UNIT_KIND
    comparison: str = WHITESPACE_NORMALIZED
    parent_ids: tuple[str, ...] = ()

    @property
    def is_anchor(self) -> bool:
        return self.kind == ANCHOR_KIND

    def with_belief(self, belief: Belief) -> "TestCase":
        return replace(self, belief=belief)


class IdAllocator:
    """Birth-ordered ids: c0000, c0001, ... and t0000, t0001, ..."""

    def __init__(self) -> None:
        self._next_code = 0
        self._next_test = 0

    def code_id(self) -> str:
        cid = f"c{self._next_code:04d}"
        self._next_code += 1
        return cid

    def test_id(self) -> str:
        tid = f"t{self._next_test:04d}"
        self._next_test += 1
        return tid


class ObservationMatrix:
    """Boolean pass/fail outcomes for every (program, test) pair.

    The update step requires a complete matrix over the current
    populations; :meth:`entry` raises if an outcome was never recorded.
    Column classes carry the noise-model lookup key for each test.
    """

    def __init__(
        self,
        row_ids: Sequence[str],
        col_ids: Sequence[str],
        col_classes: dict[str, str] | None = None,
    ) -> None:
        self.row_ids: tuple[str, ...] = tuple(row_ids)
        self.col_ids: tuple[str, ...] = tuple(col_ids)
        self._row_set = frozenset(self.row_ids)
        self._col_set = frozenset(self.col_ids)
        self._classes = dict(col_classes or {})
        self._cells: dict[tuple[str, str], bool] = {}
        self._causes: dict[tuple[str, str], str] = {}
        self._details: dict[tuple[str, str], str] = {}

    def record(
        self,
        code_id: str,
        test_id: str,
        passed: bool,
        cause: str | None = None,
        detail: str = "",
    ) -> None:
        if code_id not in self._row_set or test_id not in self._col_set:
            raise KeyError(f"({code_id}, {test_id}) is outside the declared matrix axes")
        if cause is None:
            cause = "output_match" if passed else "mismatch"
        if passed != (cause == "output_match"):
            raise ValueError(f"verdict/cause mismatch: passed={passed}, cause={cause}")
        self._cells[(code_id, test_id)] = passed
        self._causes[(code_id, test_id)] = cause
        if detail:
            self._details[(code_id, test_id)] = detail

    def has_entry(self, code_id: str, test_id: str) -> bool:
        return (code_id, test_id) in self._cells

    def entry(self, code_id: str, test_id: str) -> bool:
        try:
            return self._cells[(code_id, test_id)]
        except KeyError:
            raise MatrixIncompleteError(
                f"no recorded outcome for ({code_id}, {test_id})"
            ) from None

    def cause(self, code_id: str, test_id: str) -> str:
        self.entry(code_id, test_id)
        return self._causes[(code_id, test_id)]

    def detail(self, code_id: str, test_id: str) -> str:
        """Captured diagnostic text (stderr excerpt) for one execution."""
        return self._details.get((code_id, test_id), "")

    def col_class(self, test_id: str) -> str:
        return self._classes.get(test_id, EVOLVED_CLASS)

    def require_complete(self) -> None:
        missing = [
            (c, t)
            for c in self.row_ids
            for t in self.col_ids
            if (c, t) not in self._cells
        ]
        if missing:
            raise MatrixIncompleteError(
                f"{len(missing)} unrecorded outcomes, first: {missing[0]}"
            )

    def row_vector(self, code_id: str) -> tuple[bool, ...]:
        """Pass pattern of one program across every column, anchors included."""
        return tuple(self.entry(code_id, t) for t in self.col_ids)

    def col_vector(self, test_id: str) -> tuple[bool, ...]:
        """Pass pattern of one test across every program row."""
        return tuple(self.entry(c, test_id) for c in self.row_ids)

    def pass_count(self, code_id: str) -> int:
        return sum(self.row_vector(code_id))

    @classmethod
    def from_rows(
        cls,
        rows: Mapping[str, Sequence[bool]],
        col_ids: Sequence[str],
        col_classes: dict[str, str] | None = None,
    ) -> "ObservationMatrix":
        m = cls(list(rows), col_ids, col_classes)
        for cid, row in rows.items():
            for tid, passed in zip(col_ids, row):
                m.record(cid, tid, bool(passed))
        return m


def cluster_rows(matrix: ObservationMatrix) -> list[list[str]]:
    """Group programs whose pass patterns are identical.

    Clusters come back ordered by first appearance; members keep row order.
    """
    groups: dict[tuple[bool, ...], list[str]] = {}
    for cid in matrix.row_ids:
        groups.setdefault(matrix.row_vector(cid), []).append(cid)
    return list(groups.values())


def cluster_cols(matrix: ObservationMatrix) -> list[list[str]]:
    """Group tests whose pass patterns over the programs are identical."""
    groups: dict[tuple[bool, ...], list[str]] = {}
    for tid in matrix.col_ids:
        groups.setdefault(matrix.col_vector(tid), []).append(tid)
    return list(groups.values())


def _by_belief_then_age(items: Iterable) -> list:
    # Highest belief first; ties go to the older (smaller) id.
    return sorted(items, key=lambda x: (-x.belief.probability, x.id))


def select_code_elites(
    candidates: Sequence[CodeCandidate],
    matrix: ObservationMatrix,
    elitism_rate: float,
    capacity: int,
) -> list[CodeCandidate]:
    """Choose the programs that survive into the next generation.

    The survivor set is the union of the top ceil(rate * n) by belief and
    one best representative from every behavior cluster, which preserves
    phenotypic diversity even when a cluster's beliefs are poor.  If the
    union exceeds ``capacity``, the lowest-belief members are shed.
    """
    if not candidates:
        return []
    by_id = {c.id: c for c in candidates}
    ranked = _by_belief_then_age(candidates)
    top_k = max(1, math.ceil(elitism_rate * len(candidates)))
    keep: dict[str, CodeCandidate] = {c.id: c for c in ranked[:top_k]}
    for cluster in cluster_rows(matrix):
        rep = _by_belief_then_age(by_id[cid] for cid in cluster)[0]
        keep[rep.id] = rep
    survivors = _by_belief_then_age(keep.values())
    return survivors[: max(capacity, 1)]


def select_test_elites(
    tests: Sequence[TestCase],
    matrix: ObservationMatrix,
    soft_cap: int = EVOLVED_TEST_SOFT_CAP,
) -> list[TestCase]:
    """Choose the tests that survive into the next generation.

    Anchors always survive.  Generated tests survive only as the best
    representative of their behavior cluster (a cluster whose best member
    is an anchor contributes no generated survivor), then the survivors
    are trimmed to ``soft_cap`` by belief.  Order is anchors first, then
    survivors by (belief desc, age).
    """
    by_id = {t.id: t for t in tests}
    anchors = [t for t in tests if t.is_anchor]
    reps: list[TestCase] = []
    for cluster in cluster_cols(matrix):
        members = _by_belief_then_age(by_id[tid] for tid in cluster)
        best = members[0]
        if not best.is_anchor:
            reps.append(best)
    reps = _by_belief_then_age(reps)[:soft_cap]
    return anchors + reps


def roulette_select(
    population: Sequence,
    rng: Random,
    k: int = 1,
    max_attempts: int = 32,
) -> tuple:
    """Draw k parents with probability proportional to belief.

    Falls back to uniform draws when the whole population has negligible
    belief mass.  Draws within the returned tuple are kept distinct by
    redrawing on collision; once the retry budget is spent the colliding
    draw is accepted, so a degenerate pool can yield duplicates rather
    than deadlock.
    """
    if not population:
        raise ValueError("cannot select parents from an empty population")
    weights = [max(ind.belief.probability, 0.0) for ind in population]
    total = math.fsum(weights)
    chosen: list = []
    chosen_ids: set[str] = set()
    for _ in range(k):
        cand = None
        for _ in range(max_attempts):
            if total < 1e-9:
                cand = population[rng.randrange(len(population))]
            else:
                r = rng.random() * total
                acc = 0.0
                cand = population[-1]
                for ind, w in zip(population, weights):
                    acc += w
                    if r <= acc:
                        cand = ind
                        break
            if cand.id not in chosen_ids:
                break
        chosen.append(cand)
        chosen_ids.add(cand.id)
    return tuple(chosen)


def offspring_belief(parents: Sequence) -> Belief:
    """A child starts no more trusted than its least trusted parent."""
    if not parents:
        raise ValueError("offspring needs at least one parent")
    return min((p.belief for p in parents), key=lambda b: b.probability)


def anchor_class_map(tests: Iterable[TestCase]) -> dict[str, str]:
    """Column-class lookup for matrix construction."""
    return {
        t.id: (ANCHOR_CLASS if t.is_anchor else EVOLVED_CLASS) for t in tests
    }
