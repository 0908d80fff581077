"""The executable-SUT boundary, the shared trace multiset, and scaffolded runs.

A system under test exposes only reset/step and its alphabets; the current
state stays hidden.  Every interaction is counted in `steps_taken` (a reset
counts as one step), which is the budget currency of the whole toolkit.

`SampleMultiset` is the prefix-closed multiset of observed traces shared
between the learner and the validator.  It is stored as a trie so that
prefix traversal, frequency queries, and shortest-first scans are all cheap.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Sequence

from .mdp import FiniteMemoryStrategy, Mdp, Output, Trace


class SutHandle:
    """Reset/step interface of an executable black-box system."""

    inputs: list[str]
    steps_taken: int

    def reset(self) -> Output:
        raise NotImplementedError

    def step(self, input_name: str) -> Output:
        raise NotImplementedError


class WhiteboxSut(SutHandle):
    """A known MDP executed behind the black-box interface (for benchmarks)."""

    def __init__(self, mdp: Mdp, seed) -> None:
        self.inputs = list(mdp.inputs)
        self.steps_taken = 0
        self._rng = random.Random(seed)
        self._mdp = mdp
        self._outputs = [mdp.output_of(q) for q in range(mdp.n_states)]
        # Cumulative sampling tables per (state, input).
        self._cum: list[list[tuple[tuple[float, ...], tuple[int, ...]]]] = []
        for q in range(mdp.n_states):
            row = []
            for i in range(len(mdp.inputs)):
                probs = []
                succs = []
                acc = 0.0
                for succ, p in mdp.trans[q][i]:
                    acc += p
                    probs.append(acc)
                    succs.append(succ)
                row.append((tuple(probs), tuple(succs)))
            self._cum.append(row)
        self._input_index = {a: i for i, a in enumerate(self.inputs)}
        self._state = mdp.initial

    def reset(self) -> Output:
        self._state = self._mdp.initial
        self.steps_taken += 1
        return self._outputs[self._state]

    def step(self, input_name: str) -> Output:
        i = self._input_index[input_name]
        cum, succs = self._cum[self._state][i]
        r = self._rng.random()
        k = 0
        last = len(cum) - 1
        while k < last and r >= cum[k]:
            k += 1
        self._state = succs[k]
        self.steps_taken += 1
        return self._outputs[self._state]


def wrap_whitebox(mdp: Mdp, seed) -> WhiteboxSut:
    return WhiteboxSut(mdp, seed)


class _Node:
    __slots__ = ("count", "kids", "freq_cache")

    def __init__(self) -> None:
        self.count = 0
        # input name -> {output -> child node}
        self.kids: dict[str, dict[Output, "_Node"]] = {}
        # input name -> (count snapshot, frequency map); valid while count
        # is unchanged, since recording below a node always bumps its count
        self.freq_cache: dict[str, tuple[int, dict[Output, int]]] = {}


class SampleMultiset:
    """Prefix-closed multiset of traces, keyed by alternating output/input.

    Recording a trace increments the count of every one of its prefixes, so
    count(sigma) >= sum of counts of sigma's extensions holds structurally.
    """

    def __init__(self, root_output: Output) -> None:
        self.root_output = root_output
        self.root = _Node()
        self.n_nodes = 1

    def record(self, trace: Trace) -> None:
        if trace.head != self.root_output:
            raise ValueError(
                f"trace head {trace.head.label!r} does not match the multiset root "
                f"{self.root_output.label!r}"
            )
        node = self.root
        node.count += 1
        for a, o in trace.tail:
            by_out = node.kids.get(a)
            if by_out is None:
                by_out = {}
                node.kids[a] = by_out
            child = by_out.get(o)
            if child is None:
                child = _Node()
                by_out[o] = child
                self.n_nodes += 1
            child.count += 1
            node = child

    def node_of(self, trace: Trace) -> _Node | None:
        """The trie node of a trace, or None when never observed.

        Nodes are stable objects: once a trace has a node, later recordings
        reuse it, so callers may cache the result.
        """
        if trace.head != self.root_output:
            return None
        node = self.root
        for a, o in trace.tail:
            by_out = node.kids.get(a)
            if by_out is None:
                return None
            node = by_out.get(o)
            if node is None:
                return None
        return node

    def count(self, trace: Trace) -> int:
        node = self.node_of(trace)
        return node.count if node is not None else 0

    @staticmethod
    def node_out_freq(node: _Node, input_name: str) -> dict[Output, int]:
        cached = node.freq_cache.get(input_name)
        if cached is not None and cached[0] == node.count:
            return cached[1]
        by_out = node.kids.get(input_name)
        freq = {o: child.count for o, child in by_out.items()} if by_out else {}
        node.freq_cache[input_name] = (node.count, freq)
        return freq

    def out_freq(self, trace: Trace, input_name: str) -> dict[Output, int]:
        """Frequency of each output observed after `trace` + `input_name`."""
        node = self.node_of(trace)
        if node is None:
            return {}
        return self.node_out_freq(node, input_name)

    def count_after(self, trace: Trace, input_name: str) -> int:
        return sum(self.out_freq(trace, input_name).values())

    def total_count(self) -> int:
        return self.root.count


@dataclass
class ScaffoldOutcome:
    trace: Trace
    on_model: bool
    verdict: object = None  # filled by the caller when a property is monitored


class ScaffoldRunner:
    """Executes the SUT under a strategy, tracking the hypothesis path.

    The strategy needs a state to choose inputs, and the SUT's state is
    hidden; the runner follows the unique hypothesis path matching the
    observed trace instead.  An observed output with probability 0 in the
    hypothesis ends the run early with `on_model=False`.
    """

    def __init__(self, hypothesis: Mdp, strategy: FiniteMemoryStrategy) -> None:
        self.hypothesis = hypothesis
        self.strategy = strategy
        self._succ = [
            [hypothesis.successors_by_output(q, i) for i in range(len(hypothesis.inputs))]
            for q in range(hypothesis.n_states)
        ]
        self._input_index = {a: i for i, a in enumerate(hypothesis.inputs)}
        self._init_output = hypothesis.output_of(hypothesis.initial)

    def sample(
        self,
        sut: SutHandle,
        length: int,
        stop_when: Callable[[list[Output]], bool] | None = None,
    ) -> ScaffoldOutcome:
        if length < 1:
            raise ValueError("length must be at least 1")
        out = sut.reset()
        outputs = [out]
        tail: list[tuple[str, Output]] = []
        if out != self._init_output:
            return ScaffoldOutcome(Trace(out), False)
        q = self.hypothesis.initial
        mode = self.strategy.initial_mode
        for _ in range(length - 1):
            if stop_when is not None and stop_when(outputs):
                break
            a = self.strategy.choose(mode, q)
            out = sut.step(a)
            tail.append((a, out))
            outputs.append(out)
            hit = self._succ[q][self._input_index[a]].get(out)
            if hit is None:
                return ScaffoldOutcome(Trace(outputs[0], tuple(tail)), False)
            mode = self.strategy.advance(mode, q, a)
            q = hit[0]
        return ScaffoldOutcome(Trace(outputs[0], tuple(tail)), True)


def sample_scaffolded(
    sut: SutHandle,
    hypothesis: Mdp,
    strategy: FiniteMemoryStrategy,
    length: int,
) -> ScaffoldOutcome:
    return ScaffoldRunner(hypothesis, strategy).sample(sut, length)


def geometric_trace_length(
    p_stop: float, cap: int, rng: random.Random, minimum: int = 2
) -> int:
    """Random trace length with per-step stop probability, capped.

    Every length between `minimum` and `cap` has positive mass, which is what
    equivalence arguments about unbounded properties need.
    """
    length = minimum
    while length < cap and rng.random() >= p_stop:
        length += 1
    return length
