"""Log-odds belief algebra over noisy pass/fail observations.

Every individual (program or test) carries a belief: the posterior
probability that it is correct with respect to the problem statement.
Execution outcomes are treated as readings from a noisy sensor, so a
single pass or fail contributes a finite weight of evidence (a
log-likelihood ratio) rather than a verdict.  All accumulation happens
in log-odds space; clamping to a configurable magnitude keeps the
arithmetic finite while preserving "reliably wrong" semantics for
candidates that fail an anchor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import ConfigError, MatrixIncompleteError

LOG_ODDS_LIMIT = 30.0
PROBABILITY_FLOOR = 1e-12

# Belief level a pass must clear to start rewarding the updated side.
CODE_UPDATE = "code_update"
TEST_UPDATE = "test_update"

# Noise classes used when looking up sensor parameters per test column.
ANCHOR_CLASS = "anchor"
EVOLVED_CLASS = "evolved"


def _clamp(value: float, limit: float) -> float:
    return min(max(value, -limit), limit)


def _sigmoid(log_odds: float) -> float:
    if log_odds >= 0.0:
        return 1.0 / (1.0 + math.exp(-log_odds))
    e = math.exp(log_odds)
    return e / (1.0 + e)


def logit(p: float, limit: float = LOG_ODDS_LIMIT) -> float:
    """Return ln(p / (1-p)) clamped to [-limit, +limit].

    Callers are expected to clamp p into [1e-12, 1 - 1e-12] first; values
    even closer to the endpoints simply saturate at the clamp.
    """
    if p <= 0.0 or p >= 1.0:
        return limit if p >= 1.0 else -limit
    return _clamp(math.log(p / (1.0 - p)), limit)


def clamp_probability(p: float, floor: float = PROBABILITY_FLOOR) -> float:
    """Pull p away from the exact 0/1 singularities of the logit."""
    return min(max(p, floor), 1.0 - floor)


@dataclass(frozen=True)
class Belief:
    """Posterior probability of correctness with its cached log-odds.

    ``probability`` is always derived from the clamped ``log_odds``, so the
    pair stays consistent by construction.
    """

    probability: float
    log_odds: float

    @classmethod
    def from_probability(cls, p: float, limit: float = LOG_ODDS_LIMIT) -> "Belief":
        lo = logit(clamp_probability(p), limit)
        return cls(probability=_sigmoid(lo), log_odds=lo)

    @classmethod
    def from_log_odds(cls, lo: float, limit: float = LOG_ODDS_LIMIT) -> "Belief":
        lo = _clamp(lo, limit)
        return cls(probability=_sigmoid(lo), log_odds=lo)

    def shifted(self, total_delta: float, limit: float = LOG_ODDS_LIMIT) -> "Belief":
        return Belief.from_log_odds(self.log_odds + total_delta, limit)


@dataclass(frozen=True)
class NoiseModel:
    """Conditional pass probabilities for the degenerate sensor branches.

    false_pass:        correct program passes an invalid test.
    accidental_pass:   incorrect program passes a valid test.
    coincidental_pass: incorrect program passes an invalid test.

    A correct program passing a valid test is taken as certain, so these
    three rates fully parameterize the sensor.
    """

    false_pass: float
    accidental_pass: float
    coincidental_pass: float

    def validate(self) -> "NoiseModel":
        for name in ("false_pass", "accidental_pass", "coincidental_pass"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ConfigError(f"noise rate {name}={rate} outside [0, 1]")
        if self.slope() <= 0.0:
            raise ConfigError(
                "noise model must satisfy "
                "1 - false_pass - accidental_pass + coincidental_pass > 0 "
                f"(got {self.slope():.6g})"
            )
        return self

    def slope(self) -> float:
        """The denominator term shared by both credibility thresholds."""
        return 1.0 - self.false_pass - self.accidental_pass + self.coincidental_pass


@dataclass(frozen=True)
class Evidence:
    """One consumed observation and its weight-of-evidence contribution."""

    code_id: str
    test_id: str
    passed: bool
    delta: float


class InteractionLedger:
    """Tracks which (code, test) pairs have already contributed evidence.

    A pair is counted once: the generation that first processes it uses the
    observation for both the test-side and code-side updates, and every
    later generation skips it.
    """

    def __init__(self) -> None:
        self._counted: set[tuple[str, str]] = set()

    def __contains__(self, pair: tuple[str, str]) -> bool:
        return pair in self._counted

    def __len__(self) -> int:
        return len(self._counted)

    def snapshot(self) -> frozenset[tuple[str, str]]:
        return frozenset(self._counted)

    def add_all(self, pairs: Iterable[tuple[str, str]]) -> None:
        self._counted.update(pairs)

    def drop_individual(self, individual_id: str) -> None:
        """Forget pairs touching a dead individual; its id is never reused."""
        self._counted = {
            p for p in self._counted if individual_id not in p
        }


def _log_ratio(numerator: float, denominator: float, limit: float) -> float:
    # Degenerate numerators/denominators (0, or 0/0) saturate at the clamp
    # instead of producing non-finite values; a zero numerator wins.
    if denominator <= 0.0:
        ratio = math.inf if numerator > 0.0 else 0.0
    else:
        ratio = numerator / denominator
    ratio = min(max(ratio, math.exp(-limit)), math.exp(limit))
    return math.log(ratio)


def woe_code(
    passed: bool,
    b_test: float,
    noise: NoiseModel,
    limit: float = LOG_ODDS_LIMIT,
) -> float:
    """Weight of evidence a test outcome contributes to a program's belief.

    The likelihood ratio is conditioned on the current belief in the test:
    a pass from a probably-valid test is strong support, while a pass from
    a probably-invalid one can count against the program.
    """
    a = noise.false_pass
    b = noise.accidental_pass
    g = noise.coincidental_pass
    if passed:
        num = b_test + a * (1.0 - b_test)
        den = b * b_test + g * (1.0 - b_test)
    else:
        num = (1.0 - a) * (1.0 - b_test)
        den = (1.0 - b) * b_test + (1.0 - g) * (1.0 - b_test)
    return _log_ratio(num, den, limit)


def woe_test(
    passed: bool,
    b_code: float,
    noise: NoiseModel,
    limit: float = LOG_ODDS_LIMIT,
) -> float:
    """Weight of evidence a program outcome contributes to a test's belief.

    Mirror image of :func:`woe_code` with the false-pass and accidental-pass
    roles exchanged: here the program population is the sensor.
    """
    a = noise.false_pass
    b = noise.accidental_pass
    g = noise.coincidental_pass
    if passed:
        num = b_code + b * (1.0 - b_code)
        den = a * b_code + g * (1.0 - b_code)
    else:
        num = (1.0 - b) * (1.0 - b_code)
        den = (1.0 - a) * b_code + (1.0 - g) * (1.0 - b_code)
    return _log_ratio(num, den, limit)


def credibility_threshold(noise: NoiseModel, target: str) -> float:
    """Interactor belief at which a pass stops penalizing and starts rewarding.

    Below the returned value the update logic inverts: a pass drags the
    updated individual down (it agreed with something probably wrong) and a
    fail pushes it up.  ``target`` selects which side is being updated,
    since the two directions swap the false-pass and accidental-pass roles.
    """
    slope = noise.slope()
    if target == TEST_UPDATE:
        margin = noise.coincidental_pass - noise.accidental_pass
    elif target == CODE_UPDATE:
        margin = noise.coincidental_pass - noise.false_pass
    else:
        raise ValueError(f"unknown update target: {target!r}")
    return max(0.0, margin / slope)


def apply_evidence(
    prior: Belief,
    deltas: Iterable[float],
    eta: float,
    limit: float = LOG_ODDS_LIMIT,
) -> Belief:
    """Fold a batch of evidence weights into a belief.

    The learning rate ``eta`` scales the summed evidence before it is added
    to the prior log-odds; the result is re-clamped and the probability
    recomputed from the clamped value.
    """
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"learning rate must be in (0, 1], got {eta}")
    total = math.fsum(deltas)
    if total == 0.0:
        return prior
    return prior.shifted(eta * total, limit)


def generation_update(
    matrix: "ObservationView",
    code_beliefs: Mapping[str, Belief],
    test_beliefs: Mapping[str, Belief],
    anchor_ids: frozenset[str] | set[str],
    noise_by_class: Mapping[str, NoiseModel],
    eta: float,
    ledger: InteractionLedger,
    limit: float = LOG_ODDS_LIMIT,
    trace: list[Evidence] | None = None,
) -> tuple[dict[str, Belief], dict[str, Belief]]:
    """Run the three-phase per-generation belief update.

    Phase 1 updates program beliefs from anchor columns only, phase 2
    updates evolved-test beliefs from the phase-1 program beliefs, and
    phase 3 updates program beliefs from the evolved columns using the test
    beliefs as they stood at the start of the generation.  Using the
    start-of-generation test priors in phase 3 keeps the reciprocal loop
    from feeding on its own same-generation output.

    Pairs already present in the ledger contribute nothing; every pair this
    call consumes is recorded.  Anchor beliefs are returned unchanged, and
    any program with a failing anchor entry leaves the generation at the
    negative clamp regardless of its other evidence.

    When ``trace`` is given, every weight actually applied is appended to
    it as an :class:`Evidence` row; a pair that feeds both the test-side
    and code-side updates contributes two rows.
    """
    anchors = frozenset(anchor_ids)
    unknown = anchors - set(matrix.col_ids)
    if unknown:
        raise MatrixIncompleteError(f"anchor columns missing from matrix: {sorted(unknown)}")
    anchor_noise = noise_by_class[ANCHOR_CLASS] if anchors else None
    evolved_cols = [t for t in matrix.col_ids if t not in anchors]
    anchor_cols = [t for t in matrix.col_ids if t in anchors]
    already = ledger.snapshot()
    consumed: set[tuple[str, str]] = set()

    start_test_beliefs = dict(test_beliefs)
    new_code: dict[str, Belief] = dict(code_beliefs)
    new_tests: dict[str, Belief] = dict(test_beliefs)

    def note(code_id: str, test_id: str, passed: bool, delta: float) -> None:
        if trace is not None:
            trace.append(Evidence(code_id=code_id, test_id=test_id, passed=passed, delta=delta))

    # Phase 1: program updates on anchors.  Anchor validity is treated as
    # certain inside the likelihood branches.
    for c in matrix.row_ids:
        deltas = []
        for t in anchor_cols:
            if (c, t) in already:
                continue
            passed = matrix.entry(c, t)
            delta = woe_code(passed, 1.0, anchor_noise, limit)
            deltas.append(delta)
            note(c, t, passed, delta)
            consumed.add((c, t))
        if deltas:
            new_code[c] = apply_evidence(new_code[c], deltas, eta, limit)

    # Phase 2: evolved-test updates, audited by the phase-1 program beliefs.
    for t in evolved_cols:
        noise = noise_by_class.get(matrix.col_class(t), noise_by_class[EVOLVED_CLASS])
        deltas = []
        for c in matrix.row_ids:
            if (c, t) in already:
                continue
            passed = matrix.entry(c, t)
            delta = woe_test(passed, new_code[c].probability, noise, limit)
            deltas.append(delta)
            note(c, t, passed, delta)
            consumed.add((c, t))
        if deltas:
            new_tests[t] = apply_evidence(new_tests[t], deltas, eta, limit)

    # Phase 3: program updates from evolved columns at their start-of-
    # generation beliefs.
    for c in matrix.row_ids:
        deltas = []
        for t in evolved_cols:
            if (c, t) in already:
                continue
            noise = noise_by_class.get(matrix.col_class(t), noise_by_class[EVOLVED_CLASS])
            passed = matrix.entry(c, t)
            delta = woe_code(passed, start_test_beliefs[t].probability, noise, limit)
            deltas.append(delta)
            note(c, t, passed, delta)
        if deltas:
            new_code[c] = apply_evidence(new_code[c], deltas, eta, limit)

    # A failed anchor is an unbounded penalty; the clamp realizes it as the
    # log-odds floor, and no same-run evidence may lift it back out.
    for c in matrix.row_ids:
        if any(not matrix.entry(c, t) for t in anchor_cols):
            new_code[c] = Belief.from_log_odds(-limit, limit)

    ledger.add_all(consumed)
    return new_code, new_tests


class ObservationView:
    """Minimal read surface :func:`generation_update` needs from a matrix.

    ``population.ObservationMatrix`` satisfies it; synthetic matrices in the
    simulation lab reuse the same class.
    """

    row_ids: tuple[str, ...] = ()
    col_ids: tuple[str, ...] = ()

    def entry(self, code_id: str, test_id: str) -> bool:  # pragma: no cover
        raise NotImplementedError

    def col_class(self, test_id: str) -> str:  # pragma: no cover
        return EVOLVED_CLASS
