"""Labeled Markov decision processes, traces, paths, and strategies.

States are dense integer ids with a side table of display names; inputs are
referenced by name at the API boundary and by index internally.  An MDP is
*deterministic* when, for every (state, input) pair, no two distinct
successors with positive probability carry the same output; an observed trace
of a deterministic MDP then corresponds to at most one path.

The module also defines the plain-text MDP file format shared with the
benchmark generators (see `parse_mdp`).
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

PROB_TOL = 1e-9


@dataclass(frozen=True)
class Output:
    """An observable output: a display label plus its atomic propositions."""

    label: str
    props: frozenset[str]

    @staticmethod
    def named(label: str, props: Iterable[str] | None = None) -> "Output":
        return Output(label, frozenset(props) if props is not None else frozenset((label,)))

    def __str__(self) -> str:
        return self.label


@dataclass(frozen=True)
class Trace:
    """Alternating output/input sequence, output first.

    The length of a trace is its number of outputs.
    """

    head: Output
    tail: tuple[tuple[str, Output], ...] = ()

    def __len__(self) -> int:
        return 1 + len(self.tail)

    def outputs(self) -> list[Output]:
        return [self.head] + [o for _, o in self.tail]

    def inputs(self) -> list[str]:
        return [a for a, _ in self.tail]

    def extend(self, inp: str, out: Output) -> "Trace":
        return Trace(self.head, self.tail + ((inp, out),))

    def prefixes(self) -> Iterator["Trace"]:
        """All prefixes from the single-output trace up to the trace itself."""
        for k in range(len(self.tail) + 1):
            yield Trace(self.head, self.tail[:k])

    def __str__(self) -> str:
        parts = [self.head.label]
        for a, o in self.tail:
            parts.append(a)
            parts.append(o.label)
        return " ".join(parts)


@dataclass(frozen=True)
class Path:
    """State-level counterpart of a trace: alternating state/input, state first."""

    head: int
    tail: tuple[tuple[str, int], ...] = ()

    def __len__(self) -> int:
        return 1 + len(self.tail)

    def states(self) -> list[int]:
        return [self.head] + [q for _, q in self.tail]


# A distribution is a tuple of (successor state, probability) entries with
# positive probabilities only.
Distribution = tuple[tuple[int, float], ...]


class Mdp:
    """Explicit-state MDP.

    `trans[q][i]` is the successor distribution for state `q` under the i-th
    input.  Distributions whose sum is within `PROB_TOL` of 1 are renormalized
    on construction; anything further off is kept as-is so `validate` can
    report it.
    """

    def __init__(
        self,
        state_names: Sequence[str],
        inputs: Sequence[str],
        outputs: Sequence[Output],
        initial: int,
        labels: Sequence[int],
        trans: Sequence[Sequence[Iterable[tuple[int, float]]]],
    ) -> None:
        self.state_names = list(state_names)
        self.inputs = list(inputs)
        self.outputs = list(outputs)
        self.initial = initial
        self.labels = list(labels)
        self.trans: list[list[Distribution]] = [
            [self._normalize(dist) for dist in row] for row in trans
        ]
        self._input_index = {a: i for i, a in enumerate(self.inputs)}
        self._succ_by_output: list[list[dict[Output, tuple[int, float]]]] | None = None

    @staticmethod
    def _normalize(dist: Iterable[tuple[int, float]]) -> Distribution:
        entries = tuple((q, p) for q, p in dist if p != 0.0)
        total = sum(p for _, p in entries)
        if entries and abs(total - 1.0) <= PROB_TOL and total != 1.0:
            entries = tuple((q, p / total) for q, p in entries)
        return entries

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    def input_index(self, name: str) -> int | None:
        return self._input_index.get(name)

    def output_of(self, state: int) -> Output:
        return self.outputs[self.labels[state]]

    def successors_by_output(self, state: int, input_idx: int) -> dict[Output, tuple[int, float]]:
        """Map each successor output to its (state, probability) edge.

        Meaningful on deterministic MDPs, where the map is injective.
        """
        if self._succ_by_output is None:
            self._succ_by_output = [
                [
                    {self.output_of(q): (q, p) for q, p in self.trans[s][i]}
                    for i in range(len(self.inputs))
                ]
                for s in range(self.n_states)
            ]
        return self._succ_by_output[state][input_idx]


def validate(mdp: Mdp, require_deterministic: bool = False) -> list[str]:
    """Check the MDP invariants; return a list of violation descriptions.

    An empty list means the model is valid.  With `require_deterministic`,
    additionally checks that distinct successors of any (state, input) pair
    carry distinct outputs.
    """
    problems: list[str] = []
    n = mdp.n_states
    if not (0 <= mdp.initial < n):
        problems.append(f"initial state {mdp.initial} not in range 0..{n - 1}")
    if len(mdp.labels) != n:
        problems.append("label table size does not match state count")
    for q, out_idx in enumerate(mdp.labels):
        if not (0 <= out_idx < len(mdp.outputs)):
            problems.append(f"state {mdp.state_names[q]} has unknown output index {out_idx}")
    if len(mdp.trans) != n:
        problems.append("transition table size does not match state count")
        return problems
    for q in range(n):
        if len(mdp.trans[q]) != len(mdp.inputs):
            problems.append(f"state {mdp.state_names[q]} is missing input rows")
            continue
        for i, a in enumerate(mdp.inputs):
            dist = mdp.trans[q][i]
            if not dist:
                problems.append(f"({mdp.state_names[q]}, {a}): empty distribution")
                continue
            total = 0.0
            for succ, p in dist:
                if not (0 <= succ < n):
                    problems.append(f"({mdp.state_names[q]}, {a}): unknown successor {succ}")
                if p <= 0.0 or p > 1.0 + PROB_TOL:
                    problems.append(
                        f"({mdp.state_names[q]}, {a}): probability {p} outside (0, 1]"
                    )
                total += p
            if abs(total - 1.0) > PROB_TOL:
                problems.append(
                    f"({mdp.state_names[q]}, {a}): probabilities sum to {total!r}, not 1"
                )
            if require_deterministic:
                seen: dict[Output, int] = {}
                for succ, _ in dist:
                    out = mdp.output_of(succ)
                    if out in seen and seen[out] != succ:
                        problems.append(
                            f"({mdp.state_names[q]}, {a}): successors "
                            f"{mdp.state_names[seen[out]]} and {mdp.state_names[succ]} "
                            f"share output {out.label}"
                        )
                    seen[out] = succ
    return problems


class InvalidMdpError(ValueError):
    pass


def ensure_valid(mdp: Mdp, require_deterministic: bool = False) -> Mdp:
    problems = validate(mdp, require_deterministic)
    if problems:
        raise InvalidMdpError("; ".join(problems))
    return mdp


def resolve_path(mdp: Mdp, trace: Trace) -> Path | None:
    """Resolve the unique positive-probability path of `trace`, or None.

    Requires a deterministic MDP; returns None when the head output does not
    match the initial state or some step has probability 0 (including inputs
    unknown to this MDP).
    """
    if trace.head != mdp.output_of(mdp.initial):
        return None
    state = mdp.initial
    steps: list[tuple[str, int]] = []
    for a, out in trace.tail:
        i = mdp.input_index(a)
        if i is None:
            return None
        hit = mdp.successors_by_output(state, i).get(out)
        if hit is None:
            return None
        state = hit[0]
        steps.append((a, state))
    return Path(mdp.initial, tuple(steps))


def trace_of_path(mdp: Mdp, path: Path) -> Trace:
    """The trace induced by a path; rejects paths with impossible steps."""
    state = path.head
    if not (0 <= state < mdp.n_states):
        raise ValueError(f"path head {state} is not a state")
    tail: list[tuple[str, Output]] = []
    for a, succ in path.tail:
        i = mdp.input_index(a)
        if i is None:
            raise ValueError(f"unknown input {a!r}")
        if not any(q == succ for q, _ in mdp.trans[state][i]):
            raise ValueError(
                f"step {mdp.state_names[state]} -{a}-> {mdp.state_names[succ]} "
                "has probability 0"
            )
        state = succ
        tail.append((a, mdp.output_of(succ)))
    return Trace(mdp.output_of(path.head), tuple(tail))


def sample_successor(dist: Distribution, rng: random.Random) -> int:
    r = rng.random()
    acc = 0.0
    for q, p in dist:
        acc += p
        if r < acc:
            return q
    return dist[-1][0]


class FiniteMemoryStrategy:
    """Deterministic finite-memory input chooser in Mealy form.

    `choose(mode, state)` returns an input name and `advance(mode, state,
    input)` the next mode.  Modes are 0..n_modes-1.  All strategies produced
    here advance on the mode alone, which covers both step counters and
    memoryless strategies.
    """

    def __init__(
        self,
        choose_table: Sequence[Sequence[str]],
        advance_table: Sequence[int],
        initial_mode: int = 0,
    ) -> None:
        self.choose_table = [list(row) for row in choose_table]
        self.advance_table = list(advance_table)
        self.initial_mode = initial_mode
        if len(self.choose_table) != len(self.advance_table):
            raise ValueError("choose and advance tables must cover the same modes")

    @property
    def n_modes(self) -> int:
        return len(self.advance_table)

    def choose(self, mode: int, state: int) -> str:
        return self.choose_table[mode][state]

    def advance(self, mode: int, state: int, inp: str) -> int:
        return self.advance_table[mode]

    @staticmethod
    def memoryless(choices: Sequence[str]) -> "FiniteMemoryStrategy":
        return FiniteMemoryStrategy([list(choices)], [0])

    @staticmethod
    def constant(input_name: str, n_states: int) -> "FiniteMemoryStrategy":
        return FiniteMemoryStrategy([[input_name] * n_states], [0])

    @staticmethod
    def step_counter(per_step_choices: Sequence[Sequence[str]]) -> "FiniteMemoryStrategy":
        """Strategy whose memory is the number of steps taken, saturating."""
        n = len(per_step_choices)
        advance = [min(t + 1, n - 1) for t in range(n)]
        return FiniteMemoryStrategy(per_step_choices, advance)

    def to_dict(self) -> dict:
        return {
            "initial_mode": self.initial_mode,
            "advance": self.advance_table,
            "choose": self.choose_table,
        }

    @staticmethod
    def from_dict(data: dict) -> "FiniteMemoryStrategy":
        return FiniteMemoryStrategy(
            data["choose"], data["advance"], data.get("initial_mode", 0)
        )


def simulate(
    mdp: Mdp, strategy: FiniteMemoryStrategy, length: int, rng: random.Random
) -> Trace:
    """Sample a trace of exactly `length` outputs from the composed chain."""
    if length < 1:
        raise ValueError("length must be at least 1")
    state = mdp.initial
    mode = strategy.initial_mode
    tail: list[tuple[str, Output]] = []
    for _ in range(length - 1):
        a = strategy.choose(mode, state)
        i = mdp.input_index(a)
        if i is None:
            raise ValueError(f"strategy chose unknown input {a!r}")
        mode = strategy.advance(mode, state, a)
        state = sample_successor(mdp.trans[state][i], rng)
        tail.append((a, mdp.output_of(state)))
    return Trace(mdp.output_of(mdp.initial), tuple(tail))


# ---------------------------------------------------------------------------
# Text file format
#
#   line 1:  mdp
#   state <name> <label> [init]        exactly one state carries `init`
#   label <labelname> <ap1> <ap2> ...  optional; default propositions {labelname}
#   trans <src> <input> <dst> <prob>   per (src, input) group sums to 1 +- 1e-9
#
# `#` starts a comment; tokens are whitespace-separated; lines may appear in
# any order after the header.  Input and output orderings are the order of
# first appearance.
# ---------------------------------------------------------------------------


class MdpFormatError(ValueError):
    pass


def parse_mdp(text: str, source: str = "<string>") -> Mdp:
    state_names: list[str] = []
    state_label: dict[str, str] = {}
    label_props: dict[str, frozenset[str]] = {}
    initial_name: str | None = None
    trans_entries: list[tuple[int, str, str, str, float]] = []  # (line, src, input, dst, p)
    input_order: list[str] = []

    def err(lineno: int, msg: str) -> MdpFormatError:
        return MdpFormatError(f"{source}:{lineno}: {msg}")

    lines = text.splitlines()
    header_seen = False
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if not header_seen:
            if line != "mdp":
                raise err(lineno, f"expected header 'mdp', got {line!r}")
            header_seen = True
            continue
        tokens = line.split()
        kind = tokens[0]
        if kind == "state":
            if len(tokens) not in (3, 4):
                raise err(lineno, "state line needs: state <name> <label> [init]")
            name, label = tokens[1], tokens[2]
            if name in state_label:
                raise err(lineno, f"duplicate state {name!r}")
            state_names.append(name)
            state_label[name] = label
            if len(tokens) == 4:
                if tokens[3] != "init":
                    raise err(lineno, f"unexpected token {tokens[3]!r}")
                if initial_name is not None:
                    raise err(lineno, "more than one init state")
                initial_name = name
        elif kind == "label":
            if len(tokens) < 2:
                raise err(lineno, "label line needs: label <name> <ap> ...")
            label_props[tokens[1]] = frozenset(tokens[2:]) if len(tokens) > 2 else frozenset()
        elif kind == "trans":
            if len(tokens) != 5:
                raise err(lineno, "trans line needs: trans <src> <input> <dst> <prob>")
            try:
                p = float(tokens[4])
            except ValueError:
                raise err(lineno, f"bad probability {tokens[4]!r}") from None
            trans_entries.append((lineno, tokens[1], tokens[2], tokens[3], p))
            if tokens[2] not in input_order:
                input_order.append(tokens[2])
        else:
            raise err(lineno, f"unknown directive {kind!r}")

    if not header_seen:
        raise MdpFormatError(f"{source}: empty file")
    if not state_names:
        raise MdpFormatError(f"{source}: no states")
    if initial_name is None:
        raise MdpFormatError(f"{source}: no state marked init")

    output_order: list[str] = []
    for name in state_names:
        lbl = state_label[name]
        if lbl not in output_order:
            output_order.append(lbl)
    outputs = [
        Output(lbl, label_props.get(lbl, frozenset((lbl,)))) for lbl in output_order
    ]
    out_idx = {lbl: i for i, lbl in enumerate(output_order)}
    state_idx = {name: i for i, name in enumerate(state_names)}

    grouped: dict[tuple[int, int], list[tuple[int, float]]] = {}
    group_line: dict[tuple[int, int], int] = {}
    input_idx = {a: i for i, a in enumerate(input_order)}
    for lineno, src, inp, dst, p in trans_entries:
        if src not in state_idx:
            raise err(lineno, f"unknown state {src!r}")
        if dst not in state_idx:
            raise err(lineno, f"unknown state {dst!r}")
        key = (state_idx[src], input_idx[inp])
        grouped.setdefault(key, []).append((state_idx[dst], p))
        group_line.setdefault(key, lineno)

    trans: list[list[list[tuple[int, float]]]] = [
        [[] for _ in input_order] for _ in state_names
    ]
    for (q, i), entries in grouped.items():
        total = sum(p for _, p in entries)
        if abs(total - 1.0) > PROB_TOL:
            raise err(
                group_line[(q, i)],
                f"({state_names[q]}, {input_order[i]}): probabilities sum to "
                f"{total!r}, not 1",
            )
        trans[q][i] = entries
    for q in range(len(state_names)):
        for i in range(len(input_order)):
            if not trans[q][i]:
                raise MdpFormatError(
                    f"{source}: ({state_names[q]}, {input_order[i]}) has no transitions"
                )

    return Mdp(
        state_names,
        input_order,
        outputs,
        state_idx[initial_name],
        [out_idx[state_label[name]] for name in state_names],
        trans,
    )


def format_mdp(mdp: Mdp) -> str:
    lines = ["mdp"]
    for out in mdp.outputs:
        if out.props != frozenset((out.label,)):
            lines.append("label " + " ".join([out.label] + sorted(out.props)))
    for q, name in enumerate(mdp.state_names):
        init = " init" if q == mdp.initial else ""
        lines.append(f"state {name} {mdp.output_of(q).label}{init}")
    for q, name in enumerate(mdp.state_names):
        for i, a in enumerate(mdp.inputs):
            for succ, p in mdp.trans[q][i]:
                lines.append(f"trans {name} {a} {mdp.state_names[succ]} {p!r}")
    return "\n".join(lines) + "\n"


def load_mdp_file(path: str) -> Mdp:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_mdp(fh.read(), source=path)


def save_mdp_file(mdp: Mdp, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_mdp(mdp))
