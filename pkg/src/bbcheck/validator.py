"""Validation phase: strategy-guided comparison, witness construction, and
random equivalence testing against the learned model.

The comparison phase samples the system under the synthesized strategy
(scaffolded through the hypothesis), estimates the property's satisfaction
probability, and t-tests it against the value claimed by model checking.
When the test rejects, a witness trace whose conditional output frequency
deviates from the hypothesis beyond the witness bound is searched in the
shared multiset; independently, uniform random testing with an adaptive stop
probability looks for behavioral differences off the strategy's path.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from typing import Callable

from . import ltl, pmc, stats
from .blackbox import SampleMultiset, ScaffoldRunner, SutHandle, geometric_trace_length
from .learner import ObservationTable
from .mdp import FiniteMemoryStrategy, Mdp, Trace


@dataclass(frozen=True)
class EqTestParams:
    p_stop: float = 0.25
    decay: float = 0.9
    floor: float = 0.01
    traces_per_round: int = 1000

    def __post_init__(self) -> None:
        if not 0.0 < self.floor <= self.p_stop <= 1.0:
            raise ValueError("need 0 < floor <= p_stop <= 1")
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay must be in (0,1)")

    def decayed(self) -> "EqTestParams":
        return replace(self, p_stop=max(self.floor, self.p_stop * self.decay))


@dataclass(frozen=True)
class TraceLengthPolicy:
    """How long sampled traces run when the property has no finite horizon.

    "geometric" stops each step with probability `p_stop`; "decided" runs
    until the property's verdict is decided.  Both are capped at
    `cap_factor` times the hypothesis state count.
    """

    kind: str = "geometric"  # "geometric" | "decided"
    p_stop: float = 0.05
    cap_factor: int = 10

    def __post_init__(self) -> None:
        if self.kind not in ("geometric", "decided"):
            raise ValueError(f"unknown trace-length policy {self.kind!r}")
        if not 0.0 < self.p_stop <= 1.0:
            raise ValueError("p_stop must be in (0,1]")


@dataclass
class CompareResult:
    kind: str  # equivalent | rejected | off_model | table_broken | interrupted | budget
    p_bar: float | None = None
    trace: Trace | None = None
    reason: str | None = None
    test: stats.TestOutcome | None = None
    traces_sampled: int = 0


@dataclass
class TableCheck:
    ok: bool
    reason: str | None = None


def periodic_table_check(table: ObservationTable) -> TableCheck:
    """Recompute closedness and consistency from the live multiset."""
    uncovered = table.closedness_violation()
    if uncovered is not None:
        return TableCheck(False, f"not closed: row {uncovered} is uncovered")
    violation = table.consistency_violation()
    if violation is not None:
        r1, r2, a, o, col = violation
        return TableCheck(
            False,
            f"not consistent: rows {r1} and {r2} disagree after {a} {o.label} "
            f"on column {'.'.join(str(c) for c in col)}",
        )
    return TableCheck(True)


def compare_with_strategy(
    hypothesis: Mdp,
    sut: SutHandle,
    strategy: FiniteMemoryStrategy,
    p_hat: float,
    formula: ltl.Formula,
    n_samples: int,
    significance: float,
    multiset: SampleMultiset,
    rng: random.Random,
    *,
    table: ObservationTable | None = None,
    check_every: int = 500,
    length_policy: TraceLengthPolicy = TraceLengthPolicy(),
    budget=None,
    t_test_mode: str = "significance",
    on_trace: Callable[[int], None] | None = None,
) -> CompareResult:
    """Sample n traces of the system under `strategy` and t-test the estimate.

    Every sampled trace is recorded into the shared multiset.  The loop exits
    early on an off-model trace or when the periodic table check breaks; a
    budget exhaustion abandons the round after finishing the current trace.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    core = ltl.desugar(formula)
    h = ltl.horizon(core)
    runner = ScaffoldRunner(hypothesis, strategy)
    cap = max(2, length_policy.cap_factor * hypothesis.n_states)

    decided_check = None
    step_allowance = None
    steps_start = sut.steps_taken
    if h == float("inf"):
        try:
            decided_check = pmc.unbounded_decided(formula)
        except pmc.UnsupportedFormula:
            decided_check = None
        if length_policy.kind == "decided" and decided_check is not None:
            # Sample long enough that the hypothesis itself predicts the
            # verdict is almost surely settled; grant the round four times
            # the step cost the hypothesis predicts.  Exceeding that means
            # the system dwells in undecided regions far longer than the
            # model claims, so the round is interrupted for relearning.
            profile = pmc.decision_profile(hypothesis, strategy, formula)
            cap = max(2, profile.length)
            step_allowance = int(4.0 * n_samples * profile.expected_length) + 1000
    if decided_check is not None:
        def stop_decided(outputs) -> bool:
            return decided_check(outputs[-1])
    else:
        def stop_decided(outputs) -> bool:
            return ltl.evaluate(outputs, core) is not ltl.Verdict.INCONCLUSIVE

    successes = 0
    sampled = 0
    for i in range(n_samples):
        if budget is not None and budget.exhausted():
            return CompareResult("budget", traces_sampled=sampled)
        if step_allowance is not None and sut.steps_taken - steps_start > step_allowance:
            return CompareResult(
                "interrupted",
                reason=f"round exceeded its predicted step allowance {step_allowance}",
                traces_sampled=sampled,
            )
        if h != float("inf"):
            length = max(1, int(h))
            stop_when = None
        elif length_policy.kind == "decided":
            length = cap
            stop_when = stop_decided
        else:
            length = geometric_trace_length(length_policy.p_stop, cap, rng)
            stop_when = None
        outcome = runner.sample(sut, length, stop_when=stop_when)
        multiset.record(outcome.trace)
        sampled += 1
        if on_trace is not None:
            on_trace(sampled)
        if not outcome.on_model:
            return CompareResult("off_model", trace=outcome.trace, traces_sampled=sampled)
        verdict = ltl.evaluate(outcome.trace.outputs(), core)
        if verdict is ltl.Verdict.TRUE:
            successes += 1
        if table is not None and sampled % check_every == 0:
            tc = periodic_table_check(table)
            if not tc.ok:
                return CompareResult("table_broken", reason=tc.reason, traces_sampled=sampled)

    p_bar = successes / n_samples
    std = (p_bar * (1.0 - p_bar) * n_samples / (n_samples - 1)) ** 0.5
    if t_test_mode == "threshold":
        reject = abs(p_bar - p_hat) > significance
        test = stats.TestOutcome(p_bar - p_hat, float("nan"), reject)
    else:
        test = stats.t_test_one_sample(p_hat, p_bar, std, n_samples, significance)
    kind = "rejected" if test.reject else "equivalent"
    return CompareResult(kind, p_bar=p_bar, test=test, traces_sampled=sampled)


def construct_witness(
    hypothesis: Mdp, multiset: SampleMultiset, delta: float
) -> Trace | None:
    """Shortest recorded trace whose conditional output frequency deviates
    from the hypothesis by more than the witness bound.

    For a trace sigma = prefix + input + output, the hypothesis-side
    probability is the transition probability of that final output after
    resolving the prefix in the hypothesis (0 when the edge is missing); the
    empirical side is count(sigma) / count(all outputs after prefix+input).
    Prefixes with fewer than 2 observations cannot exceed the bound and are
    skipped; subtrees hanging off an off-model step have no defined
    conditional and are skipped as well.
    """
    if multiset.root_output != hypothesis.output_of(hypothesis.initial):
        return Trace(multiset.root_output)
    succ_tables = [
        [hypothesis.successors_by_output(q, i) for i in range(len(hypothesis.inputs))]
        for q in range(hypothesis.n_states)
    ]
    input_index = {a: i for i, a in enumerate(hypothesis.inputs)}
    # Breadth-first over the trie: shortest traces are compared first.
    queue: list[tuple] = [(multiset.root, hypothesis.initial, None)]
    pos = 0
    while pos < len(queue):
        node, state, back = queue[pos]
        pos += 1
        if node.count < 2:
            continue
        for a, by_out in node.kids.items():
            i = input_index.get(a)
            total = sum(child.count for child in by_out.values())
            for o, child in by_out.items():
                if state is not None and i is not None and total >= 2:
                    hit = succ_tables[state][i].get(o)
                    p_model = hit[1] if hit is not None else 0.0
                    p_emp = child.count / total
                    if abs(p_model - p_emp) > stats.witness_bound(delta, total):
                        return _materialize(multiset, back, a, o)
                next_state = None
                if state is not None and i is not None:
                    hit = succ_tables[state][i].get(o)
                    next_state = hit[0] if hit is not None else None
                queue.append((child, next_state, (back, a, o)))
    return None


def _materialize(multiset: SampleMultiset, back, a, o) -> Trace:
    steps = [(a, o)]
    while back is not None:
        back, a2, o2 = back
        steps.append((a2, o2))
    steps.reverse()
    return Trace(multiset.root_output, tuple(steps))


@dataclass
class EqTestResult:
    trace: Trace | None
    params: EqTestParams
    budget_exhausted: bool = False


def equivalence_test_random(
    hypothesis: Mdp,
    sut: SutHandle,
    params: EqTestParams,
    multiset: SampleMultiset,
    rng: random.Random,
    *,
    witness_delta: float = 0.025,
    budget=None,
) -> EqTestResult:
    """One round of uniform random equivalence testing.

    Feeds uniformly random inputs, stopping each episode with probability
    `p_stop` per step; an output impossible in the hypothesis is returned
    immediately.  After the round, the enlarged multiset is re-scanned with
    `construct_witness`; on full failure the stop probability decays toward
    its floor so that longer traces are eventually explored.
    """
    succ_tables = [
        [hypothesis.successors_by_output(q, i) for i in range(len(hypothesis.inputs))]
        for q in range(hypothesis.n_states)
    ]
    input_index = {a: i for i, a in enumerate(hypothesis.inputs)}
    init_output = hypothesis.output_of(hypothesis.initial)
    inputs = sut.inputs
    for _ in range(params.traces_per_round):
        if budget is not None and budget.exhausted():
            return EqTestResult(None, params, budget_exhausted=True)
        out = sut.reset()
        trace = Trace(out)
        state = hypothesis.initial if out == init_output else None
        if state is None:
            multiset.record(trace)
            return EqTestResult(trace, params)
        while True:
            a = inputs[rng.randrange(len(inputs))]
            out = sut.step(a)
            trace = trace.extend(a, out)
            if state is not None:
                i = input_index.get(a)
                hit = succ_tables[state][i].get(out) if i is not None else None
                if hit is None:
                    multiset.record(trace)
                    return EqTestResult(trace, params)
                state = hit[0]
            if rng.random() < params.p_stop:
                break
        multiset.record(trace)
    witness = construct_witness(hypothesis, multiset, witness_delta)
    if witness is not None:
        return EqTestResult(witness, params)
    return EqTestResult(None, params.decayed())
