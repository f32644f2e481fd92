"""Ground-truth laboratory for the belief machinery.

Real runs never reveal which programs are correct; here we decide the
latent truth, sample observation matrices from the sensor model, and
measure how often the update pipeline recovers that truth.  This is the
package's main quantitative validation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from random import Random
from typing import Iterable, Sequence

from .beliefs import (
    ANCHOR_CLASS,
    Belief,
    EVOLVED_CLASS,
    InteractionLedger,
    NoiseModel,
    credibility_threshold,
    generation_update,
    woe_code,
    woe_test,
)
from .config import DEFAULT_ANCHOR_NOISE, DEFAULT_EVOLVED_NOISE
from .population import ObservationMatrix

ANCHOR_TRUTH = 1.0 - 1e-12


@dataclass
class LatentWorld:
    """Known ground truth: which programs and tests are actually right."""

    code_correct: tuple[bool, ...]
    test_valid: tuple[bool, ...]
    noise: NoiseModel
    anchor_indices: frozenset[int] = frozenset()
    forced_outcomes: dict[tuple[int, int], bool] = field(default_factory=dict)

    def validate(self) -> "LatentWorld":
        if not self.code_correct or not self.test_valid:
            raise ValueError("world needs at least one program and one test")
        self.noise.validate()
        invalid_anchors = [j for j in self.anchor_indices if not self.test_valid[j]]
        if invalid_anchors:
            raise ValueError(f"anchors must be valid tests, got invalid {invalid_anchors}")
        return self

    @property
    def code_ids(self) -> list[str]:
        return [f"c{i:04d}" for i in range(len(self.code_correct))]

    @property
    def test_ids(self) -> list[str]:
        return [f"t{j:04d}" for j in range(len(self.test_valid))]


def pass_probability(code_correct: bool, test_valid: bool, noise: NoiseModel) -> float:
    """The sensor's conditional pass table."""
    if code_correct and test_valid:
        return 1.0
    if code_correct:
        return noise.false_pass
    if test_valid:
        return noise.accidental_pass
    return noise.coincidental_pass


def sample_matrix(world: LatentWorld, rng: Random, anchored: bool = True) -> ObservationMatrix:
    """Draw one observation matrix cell-by-cell from the conditional table."""
    world.validate()
    col_classes = {
        tid: (ANCHOR_CLASS if anchored and j in world.anchor_indices else EVOLVED_CLASS)
        for j, tid in enumerate(world.test_ids)
    }
    matrix = ObservationMatrix(world.code_ids, world.test_ids, col_classes)
    for i, cid in enumerate(world.code_ids):
        for j, tid in enumerate(world.test_ids):
            p = pass_probability(world.code_correct[i], world.test_valid[j], world.noise)
            passed = rng.random() < p
            if (i, j) in world.forced_outcomes:
                passed = world.forced_outcomes[(i, j)]
            matrix.record(cid, tid, passed)
    return matrix


@dataclass(frozen=True)
class UpdateParams:
    """How the belief side of an experiment is configured."""

    anchor_noise: NoiseModel = DEFAULT_ANCHOR_NOISE
    evolved_noise: NoiseModel = DEFAULT_EVOLVED_NOISE
    eta: float = 1.0
    initial_belief: float = 0.2
    log_odds_limit: float = 30.0
    rounds: int = 1


def run_belief_rounds(
    world: LatentWorld,
    params: UpdateParams,
    rng: Random,
    anchored: bool = True,
) -> tuple[dict[str, Belief], dict[str, Belief], list[ObservationMatrix]]:
    """Sample fresh matrices and fold them into beliefs, round by round.

    Each round is an independent re-observation, so it gets its own
    interaction ledger; within a round the ledger still blocks any
    double counting by the three-phase update.
    """
    anchor_ids = (
        frozenset(world.test_ids[j] for j in world.anchor_indices) if anchored else frozenset()
    )
    prior = Belief.from_probability(params.initial_belief, params.log_odds_limit)
    code_beliefs = {cid: prior for cid in world.code_ids}
    test_beliefs = {
        tid: (
            Belief.from_probability(ANCHOR_TRUTH, params.log_odds_limit)
            if tid in anchor_ids
            else prior
        )
        for tid in world.test_ids
    }
    noise_by_class = {ANCHOR_CLASS: params.anchor_noise, EVOLVED_CLASS: params.evolved_noise}
    matrices = []
    for _ in range(params.rounds):
        matrix = sample_matrix(world, rng, anchored)
        matrices.append(matrix)
        code_beliefs, test_beliefs = generation_update(
            matrix,
            code_beliefs,
            test_beliefs,
            anchor_ids,
            noise_by_class,
            params.eta,
            InteractionLedger(),
            params.log_odds_limit,
        )
    return code_beliefs, test_beliefs, matrices


@dataclass(frozen=True)
class RecoveryStats:
    seeds: int
    map_accuracy: float
    baseline_accuracy: float
    mean_belief_correct: float
    mean_belief_incorrect: float


def recovery_experiment(
    world: LatentWorld,
    params: UpdateParams,
    seeds: Iterable[int],
    anchored: bool = True,
) -> RecoveryStats:
    """How often does MAP selection find a truly correct program?

    The baseline picks the program with the most raw passes over the same
    observations, which is exactly the heuristic the belief machinery is
    supposed to beat when tests lie.
    """
    world.validate()
    seed_list = list(seeds)
    hits = 0
    baseline_hits = 0
    sum_correct = 0.0
    n_correct = 0
    sum_incorrect = 0.0
    n_incorrect = 0
    truth = {cid: world.code_correct[i] for i, cid in enumerate(world.code_ids)}
    for seed in seed_list:
        rng = Random(seed)
        code_beliefs, _, matrices = run_belief_rounds(world, params, rng, anchored)
        map_id = min(code_beliefs, key=lambda cid: (-code_beliefs[cid].probability, cid))
        hits += truth[map_id]
        pass_counts = {
            cid: sum(m.pass_count(cid) for m in matrices) for cid in world.code_ids
        }
        baseline_id = min(pass_counts, key=lambda cid: (-pass_counts[cid], cid))
        baseline_hits += truth[baseline_id]
        for cid, belief in code_beliefs.items():
            if truth[cid]:
                sum_correct += belief.probability
                n_correct += 1
            else:
                sum_incorrect += belief.probability
                n_incorrect += 1
    n = len(seed_list)
    return RecoveryStats(
        seeds=n,
        map_accuracy=hits / n,
        baseline_accuracy=baseline_hits / n,
        mean_belief_correct=sum_correct / max(n_correct, 1),
        mean_belief_incorrect=sum_incorrect / max(n_incorrect, 1),
    )


def recovery_world() -> LatentWorld:
    """Reference world: 10 programs (1 correct), 20 tests (14 valid, 2 anchors)."""
    code = tuple(i == 3 for i in range(10))
    tests = tuple(j < 14 for j in range(20))
    return LatentWorld(
        code_correct=code,
        test_valid=tests,
        noise=NoiseModel(0.1, 0.2, 0.25),
        anchor_indices=frozenset({0, 1}),
    ).validate()


def adversarial_world() -> LatentWorld:
    """A colluding-tests trap for pass-count ranking.

    Six invalid tests are rigged to always pass one fixed wrong program
    (c0000), which also fails an anchor.  Raw pass counting crowns the
    colluder; anchored updates are supposed to see through it.
    """
    code = tuple(i == 3 for i in range(10))
    tests = tuple(j < 4 for j in range(20))
    forced: dict[tuple[int, int], bool] = {(0, j): True for j in range(4, 10)}
    forced[(0, 0)] = False
    return LatentWorld(
        code_correct=code,
        test_valid=tests,
        noise=NoiseModel(0.1, 0.2, 0.25),
        anchor_indices=frozenset({0, 1}),
        forced_outcomes=forced,
    ).validate()


@dataclass(frozen=True)
class SweepRow:
    target: str
    noise: NoiseModel
    belief: float
    passed: bool
    delta: float
    expected_sign: int
    agrees: bool


def threshold_sweep(
    noise_models: Sequence[NoiseModel],
    beliefs: Sequence[float],
    boundary_margin: float = 1e-9,
    limit: float = 30.0,
) -> tuple[list[SweepRow], int]:
    """Check the sign-inversion law on a grid; returns rows and disagreements.

    For every (noise, belief, outcome) cell, the observed sign of the
    weight of evidence is compared with the side of the credibility
    threshold the belief sits on.  Cells within ``boundary_margin`` of the
    threshold are judged as zero crossings instead.
    """
    rows: list[SweepRow] = []
    disagreements = 0
    for noise in noise_models:
        noise.validate()
        for target, woe in (("code_update", woe_code), ("test_update", woe_test)):
            thr = credibility_threshold(noise, target)
            for b in beliefs:
                for passed in (True, False):
                    delta = woe(passed, b, noise, limit)
                    margin = b - thr
                    if abs(margin) <= boundary_margin:
                        expected = 0
                        agrees = abs(delta) <= 1e-6
                    else:
                        expected = (1 if margin > 0 else -1) * (1 if passed else -1)
                        agrees = (delta > 0) if expected > 0 else (delta < 0)
                    if not agrees:
                        disagreements += 1
                    rows.append(SweepRow(target, noise, b, passed, delta, expected, agrees))
    return rows, disagreements


def random_noise_model(rng: Random) -> NoiseModel:
    """Rejection-sample a valid sensor parameterization."""
    while True:
        noise = NoiseModel(rng.random(), rng.random(), rng.random())
        if noise.slope() > 0.0:
            return noise


def exact_posterior(
    world: LatentWorld,
    matrix: ObservationMatrix,
    initial_belief: float,
    anchored: bool = True,
) -> list[float]:
    """P(program i correct | matrix) by full latent enumeration.

    Only feasible for tiny worlds; the co-evolutionary update is a
    reciprocal approximation of this quantity, so agreement is checked at
    ranking level, never as equality.
    """
    world.validate()
    n = len(world.code_correct)
    m = len(world.test_valid)
    if n + m > 16:
        raise ValueError("exact enumeration is limited to tiny worlds")
    anchors = world.anchor_indices if anchored else frozenset()
    weights_per_candidate = [0.0] * n
    total = 0.0
    for x in itertools.product((0, 1), repeat=n):
        px = math.prod(initial_belief if xi else 1.0 - initial_belief for xi in x)
        for y in itertools.product((0, 1), repeat=m):
            if any(j in anchors and not yj for j, yj in enumerate(y)):
                continue
            py = math.prod(
                1.0 if j in anchors else (initial_belief if yj else 1.0 - initial_belief)
                for j, yj in enumerate(y)
            )
            likelihood = 1.0
            for i, cid in enumerate(world.code_ids):
                for j, tid in enumerate(world.test_ids):
                    p = pass_probability(bool(x[i]), bool(y[j]), world.noise)
                    likelihood *= p if matrix.entry(cid, tid) else 1.0 - p
                    if likelihood == 0.0:
                        break
                if likelihood == 0.0:
                    break
            weight = px * py * likelihood
            if weight == 0.0:
                continue
            total += weight
            for i in range(n):
                if x[i]:
                    weights_per_candidate[i] += weight
    if total == 0.0:
        return [0.0] * n
    return [w / total for w in weights_per_candidate]
