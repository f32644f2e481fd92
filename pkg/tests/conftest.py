import itertools
from pathlib import Path
from random import Random

import pytest

from coevo.beliefs import ANCHOR_CLASS, EVOLVED_CLASS
from coevo.config import RunConfig
from coevo.population import ObservationMatrix
from coevo.problems import ProblemSpec

DATA_DIR = Path(__file__).parent / "data"

# 5x5 worked example: rows 3 and 4 behave identically, columns 4 and 5 too.
REFERENCE_ROWS = {
    "c0001": (1, 1, 0, 1, 1),
    "c0002": (1, 0, 0, 0, 0),
    "c0003": (0, 1, 1, 1, 1),
    "c0004": (0, 1, 1, 1, 1),
    "c0005": (1, 1, 1, 0, 0),
}


@pytest.fixture
def reference_matrix() -> ObservationMatrix:
    col_ids = [f"t{j:04d}" for j in range(1, 6)]
    classes = {tid: EVOLVED_CLASS for tid in col_ids}
    classes["t0001"] = ANCHOR_CLASS
    return ObservationMatrix.from_rows(REFERENCE_ROWS, col_ids, classes)


@pytest.fixture
def echo_problem() -> ProblemSpec:
    return ProblemSpec(
        id="echo-toy",
        statement="Read all of stdin and write it back unchanged.",
        public_examples=(("hello\n", "hello\n"), ("a b c\n", "a b c\n")),
    )


@pytest.fixture
def default_config() -> RunConfig:
    return RunConfig()


@pytest.fixture
def rng() -> Random:
    return Random(1234)


def random_bit_matrix(rng: Random, n: int, m: int) -> ObservationMatrix:
    rows = {f"c{i:04d}": tuple(rng.randint(0, 1) for _ in range(m)) for i in range(n)}
    col_ids = [f"t{j:04d}" for j in range(m)]
    classes = {tid: EVOLVED_CLASS for tid in col_ids}
    return ObservationMatrix.from_rows(rows, col_ids, classes)


def brute_force_clusters(vectors: dict[str, tuple]) -> list[list[str]]:
    """O(n^2) pairwise-comparison clustering, order of first appearance."""
    clusters: list[list[str]] = []
    for key in vectors:
        for group in clusters:
            if vectors[group[0]] == vectors[key]:
                group.append(key)
                break
        else:
            clusters.append([key])
    return clusters
