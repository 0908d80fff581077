"""Observation-table learning of a deterministic MDP from a black-box system.

The table's rows are access traces (the prefix-closed set P plus their
observed one-step extensions), its columns are continuation input sequences,
and every cell is an output-frequency map computed on demand from the shared
trace multiset, so cells are never stale.  Rows are compared statistically
with a Hoeffding-style bound; compatibility classes of P rows become the
states of the hypothesis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .blackbox import SampleMultiset, SutHandle
from .mdp import Mdp, Output, Trace, ensure_valid

# A column is a tuple alternating input, output, input, ... and ending with
# an input; a single input is the shortest column.
Column = tuple


def compatible(
    f1: dict[Output, int], f2: dict[Output, int], alpha: float
) -> bool:
    """Hoeffding-style two-sample test on output-frequency maps.

    Maps with no evidence on either side are compatible.  Otherwise the
    empirical frequencies must agree within
    (1/sqrt(n1) + 1/sqrt(n2)) * sqrt(ln(2/alpha) / 2) for every output.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0,1), got {alpha}")
    n1 = sum(f1.values())
    n2 = sum(f2.values())
    if n1 == 0 or n2 == 0:
        return True
    bound = (1.0 / math.sqrt(n1) + 1.0 / math.sqrt(n2)) * math.sqrt(
        0.5 * math.log(2.0 / alpha)
    )
    for o in f1.keys() | f2.keys():
        if abs(f1.get(o, 0) / n1 - f2.get(o, 0) / n2) > bound:
            return False
    return True


class TableNotReady(RuntimeError):
    """Hypothesis construction attempted on an unclosed or inconsistent table."""


@dataclass
class Hypothesis:
    mdp: Mdp
    representatives: list[Trace]
    # (state, input name) pairs whose distribution had no observations and
    # was filled with a probability-1 self-loop.
    incomplete: list[tuple[int, str]]

    def sidecar(self) -> dict:
        return {
            "representatives": [str(r) for r in self.representatives],
            "incomplete": [[state, inp] for state, inp in self.incomplete],
        }


class ObservationTable:
    def __init__(
        self,
        multiset: SampleMultiset,
        inputs: Sequence[str],
        alpha: float = 0.05,
        n_min: int = 400,
        refine_attempts: int = 20,
        n_min_growth: int = 0,
        refine_step_cap: int = 20000,
    ) -> None:
        self.S = multiset
        self.inputs = list(inputs)
        self.alpha = alpha
        self.n_min = n_min
        self.refine_attempts = refine_attempts
        # Replay-based refinement per stabilization round is capped at this
        # many SUT steps; remaining deficits carry over to later rounds.
        self.refine_step_cap = refine_step_cap
        # Completeness target grows by this much per learning round, so the
        # evidence at every P row keeps accumulating across rounds (row
        # comparisons only separate states once their cells carry enough
        # samples for the bound to drop below the true gap).
        self.n_min_growth = n_min_growth
        self.rounds = 0
        # Rows whose replay failed in several consecutive rounds; sampling
        # them is a waste, their counts still grow through validation traffic.
        self._refine_failures: dict[Trace, int] = {}
        # Cell totals as of the previous stabilization: cells that shared
        # sampling traffic keeps feeding are left to it, only cells rarely
        # appearing in S are refined by replay.
        self._last_totals: dict[tuple[Trace, str], int] = {}
        # Stable Trace instances for extension rows plus a compatibility memo
        # keyed by row identities and their node counts (a row's cells can
        # only change when its own node count grows).
        self._ext_instances: dict[tuple[int, str, Output], Trace] = {}
        self._compat_cache: dict[tuple[int, int, int, int, int], bool] = {}
        self.P: list[Trace] = [Trace(multiset.root_output)]
        self._p_set: set[Trace] = set(self.P)
        self.E: list[Column] = [(a,) for a in self.inputs]
        # Trie nodes are stable once created, so row nodes can be cached.
        self._node_cache: dict[Trace, object] = {}

    # -- cells and row comparison --------------------------------------

    def _node(self, row: Trace):
        node = self._node_cache.get(row)
        if node is None:
            node = self.S.node_of(row)
            if node is not None:
                self._node_cache[row] = node
        return node

    def cell(self, row: Trace, column: Column) -> dict[Output, int]:
        """Output frequencies observed after `row` extended by `column`."""
        node = self._node(row)
        for k in range(0, len(column) - 1, 2):
            if node is None:
                return {}
            by_out = node.kids.get(column[k])
            node = by_out.get(column[k + 1]) if by_out else None
        if node is None:
            return {}
        return self.S.node_out_freq(node, column[-1])

    def row_total(self, row: Trace, input_name: str) -> int:
        return self.S.count_after(row, input_name)

    def row_compatible(self, r1: Trace, r2: Trace) -> bool:
        if r1.outputs()[-1] != r2.outputs()[-1]:
            return False
        n1 = self._node(r1)
        n2 = self._node(r2)
        c1 = n1.count if n1 is not None else 0
        c2 = n2.count if n2 is not None else 0
        key = (id(r1), id(r2), c1, c2, len(self.E))
        hit = self._compat_cache.get(key)
        if hit is not None:
            return hit
        result = True
        for e in self.E:
            if not compatible(self.cell(r1, e), self.cell(r2, e), self.alpha):
                result = False
                break
        if len(self._compat_cache) > 400_000:
            self._compat_cache.clear()
        self._compat_cache[key] = result
        return result

    # -- row sets --------------------------------------------------------

    def observed_extensions(self, row: Trace) -> list[Trace]:
        """Observed one-step extensions row+a+b, in a deterministic order.

        Extension instances are interned so repeated scans hand out the same
        objects, which keeps the compatibility memo effective.
        """
        exts = []
        for a in self.inputs:
            freq = self.S.out_freq(row, a)
            for o in sorted(freq, key=lambda o: (o.label, tuple(sorted(o.props)))):
                key = (id(row), a, o)
                t = self._ext_instances.get(key)
                if t is None:
                    t = row.extend(a, o)
                    self._ext_instances[key] = t
                exts.append(t)
        return exts

    def extended_rows(self) -> list[Trace]:
        rows = []
        for row in self.P:
            for ext in self.observed_extensions(row):
                if ext not in self._p_set:
                    rows.append(ext)
        return rows

    # -- closedness / consistency -----------------------------------------

    def _p_by_label(self) -> dict[Output, list[Trace]]:
        groups: dict[Output, list[Trace]] = {}
        for r in self.P:
            groups.setdefault(r.outputs()[-1], []).append(r)
        return groups

    def closedness_violation(self) -> Trace | None:
        """Shortest observed extension not covered by any P row."""
        groups = self._p_by_label()
        best: Trace | None = None
        for ext in self.extended_rows():
            candidates = groups.get(ext.outputs()[-1], ())
            if any(self.row_compatible(ext, r) for r in candidates):
                continue
            if best is None or len(ext) < len(best):
                best = ext
        return best

    def consistency_violation(self):
        """First pair of compatible P rows with incompatible extensions.

        Returns (r1, r2, input, output, column) where `column` is an existing
        column distinguishing the extensions, or None when consistent.
        """
        for rows in self._p_by_label().values():
            for x, r1 in enumerate(rows):
                for r2 in rows[x + 1 :]:
                    if not self.row_compatible(r1, r2):
                        continue
                    hit = self._successor_mismatch(r1, r2)
                    if hit is not None:
                        return hit
        return None

    def _successor_mismatch(self, r1: Trace, r2: Trace):
        for a in self.inputs:
            outs = set(self.S.out_freq(r1, a)) & set(self.S.out_freq(r2, a))
            for o in sorted(outs, key=lambda o: (o.label, tuple(sorted(o.props)))):
                e1 = r1.extend(a, o)
                e2 = r2.extend(a, o)
                for col in self.E:
                    if not compatible(self.cell(e1, col), self.cell(e2, col), self.alpha):
                        return (r1, r2, a, o, col)
        return None

    def is_closed_and_consistent(self) -> bool:
        return self.closedness_violation() is None and self.consistency_violation() is None

    # -- completeness and refinement ----------------------------------------

    def completeness_target(self) -> int:
        return self.n_min + self.n_min_growth * max(0, self.rounds - 1)

    def deficient_cells(
        self, rows: Sequence[Trace] | None = None, target: int | None = None
    ) -> list[tuple[Trace, str, int]]:
        """Cells below target whose counts traffic is not already growing."""
        if target is None:
            target = self.completeness_target()
        grow_skip = max(10, target // 10)
        out = []
        for idx, row in enumerate(self.P if rows is None else rows):
            for i, a in enumerate(self.inputs):
                total = self.row_total(row, a)
                if total >= target:
                    continue
                last = self._last_totals.get((row, a))
                if last is not None and total - last >= grow_skip:
                    continue
                out.append((total, idx, i, row, a))
        out.sort(key=lambda item: (item[0], item[1], item[2]))
        return [(row, a, total) for total, _, _, row, a in out]

    def _snapshot_totals(self) -> None:
        for row in self.P + self.extended_rows():
            for a in self.inputs:
                self._last_totals[(row, a)] = self.row_total(row, a)

    def _refine_target(
        self, sut: SutHandle, row: Trace, input_name: str, budget, allowance,
        target: int | None = None,
    ) -> bool:
        """Try to sample the cell (row, input) by replaying the row's inputs.

        A replay whose stochastic outputs diverge from the row is aborted but
        still recorded.  Attempts are drawn from the per-round `allowance` of
        the target.  Returns True when at least one observation landed.
        """
        if self._refine_failures.get(row, 0) >= 3:
            return False
        if target is None:
            target = self.completeness_target()
        key = (row, input_name)
        remaining = allowance.get(key, self.refine_attempts)
        progressed = False
        for _ in range(remaining):
            allowance[key] = allowance.get(key, self.refine_attempts) - 1
            if budget is not None and budget.exhausted():
                return progressed
            out = sut.reset()
            got = Trace(out)
            if out != row.head:
                self.S.record(got)
                continue
            diverged = False
            for a, expected in row.tail:
                out = sut.step(a)
                got = got.extend(a, out)
                if out != expected:
                    diverged = True
                    break
            if diverged:
                self.S.record(got)
                continue
            out = sut.step(input_name)
            got = got.extend(input_name, out)
            self.S.record(got)
            progressed = True
            if self.row_total(row, input_name) >= target:
                break
        if progressed:
            self._refine_failures[row] = 0
        elif remaining > 0:
            self._refine_failures[row] = self._refine_failures.get(row, 0) + 1
        return progressed

    def close_and_consistentize(self, sut: SutHandle, budget=None) -> str:
        """Drive the table to a closed, consistent, sufficiently-sampled state.

        Returns "stable" or "budget_exhausted".  Stability requires the P-row
        cells to reach the completeness target; extended-row cells get one
        refinement pass per call, so the statistical closedness comparison has
        evidence on both sides.  Targets that repeatedly fail to be reached
        stop blocking stability once a refinement pass makes no progress;
        their cells stay sparse and surface as `incomplete` flags.
        """
        self.rounds += 1
        extended_pass_done = False
        allowance: dict[tuple[Trace, str], int] = {}
        refine_steps_start = sut.steps_taken
        def refine_cap_hit() -> bool:
            return sut.steps_taken - refine_steps_start >= self.refine_step_cap
        while True:
            if budget is not None and budget.exhausted():
                return "budget_exhausted"
            uncovered = self.closedness_violation()
            if uncovered is not None:
                self.P.append(uncovered)
                self._p_set.add(uncovered)
                continue
            violation = self.consistency_violation()
            if violation is not None:
                _, _, a, o, col = violation
                new_col = (a, o) + col
                if new_col in self.E:
                    raise AssertionError("distinguishing column already present")
                self.E.append(new_col)
                continue
            deficits = self.deficient_cells() if not refine_cap_hit() else []
            if deficits:
                progressed = False
                for row, a, _ in deficits:
                    if budget is not None and budget.exhausted():
                        return "budget_exhausted"
                    if refine_cap_hit():
                        break
                    if self._refine_target(sut, row, a, budget, allowance):
                        progressed = True
                if progressed:
                    continue
            if not extended_pass_done and not refine_cap_hit():
                extended_pass_done = True
                ext_target = max(1, self.completeness_target() // 4)
                refined = False
                for row, a, _ in self.deficient_cells(self.extended_rows(), ext_target):
                    if budget is not None and budget.exhausted():
                        return "budget_exhausted"
                    if refine_cap_hit():
                        break
                    refined = True
                    self._refine_target(sut, row, a, budget, allowance, ext_target)
                if refined:
                    continue  # new evidence may break closedness or consistency
            self._snapshot_totals()
            return "stable"

    # -- counterexamples ----------------------------------------------------

    def process_counterexample(self, trace: Trace) -> bool:
        """Add all prefixes of a differentiating trace to P.

        The trace itself must already be recorded in the multiset by the
        caller.  Returns True when P actually grew.
        """
        if trace.head != self.S.root_output:
            raise ValueError("counterexample head does not match the initial output")
        grew = False
        for prefix in trace.prefixes():
            if prefix not in self._p_set:
                self.P.append(prefix)
                self._p_set.add(prefix)
                grew = True
        return grew

    # -- hypothesis construction ---------------------------------------------

    def classes(self) -> tuple[list[Trace], dict[Trace, int]]:
        """Greedy partition of P rows by compatibility with representatives."""
        reps: list[Trace] = []
        assignment: dict[Trace, int] = {}
        for row in self.P:
            for k, rep in enumerate(reps):
                if self.row_compatible(row, rep):
                    assignment[row] = k
                    break
            else:
                assignment[row] = len(reps)
                reps.append(row)
        return reps, assignment

    def build_hypothesis(self) -> Hypothesis:
        if self.closedness_violation() is not None:
            raise TableNotReady("observation table is not closed")
        if self.consistency_violation() is not None:
            raise TableNotReady("observation table is not consistent")
        reps, assignment = self.classes()

        def class_of(row: Trace) -> int:
            hit = assignment.get(row)
            if hit is not None:
                return hit
            # Compatibility is not transitive: an extension may match a class
            # member without matching its representative, so scan all of P
            # (closedness guarantees a match exists).
            for p_row in self.P:
                if self.row_compatible(row, p_row):
                    return assignment[p_row]
            raise TableNotReady(f"row {row} is covered by no class")

        outputs: list[Output] = []
        out_index: dict[Output, int] = {}
        labels: list[int] = []
        for rep in reps:
            out = rep.outputs()[-1]
            if out not in out_index:
                out_index[out] = len(outputs)
                outputs.append(out)
            labels.append(out_index[out])

        members: list[list[Trace]] = [[] for _ in reps]
        for row in self.P:
            members[assignment[row]].append(row)

        incomplete: list[tuple[int, str]] = []
        trans: list[list[list[tuple[int, float]]]] = []
        for k, rep in enumerate(reps):
            row_trans = []
            for a in self.inputs:
                # Pool the evidence of every P row in the class: rows deemed
                # the same state sample the same distribution, and access
                # traces favored by validation sampling carry most counts.
                freq: dict[Output, int] = {}
                first_with: dict[Output, Trace] = {}
                for m in members[k]:
                    for o, c in self.S.out_freq(m, a).items():
                        freq[o] = freq.get(o, 0) + c
                        first_with.setdefault(o, m)
                total = sum(freq.values())
                if total == 0:
                    incomplete.append((k, a))
                    row_trans.append([(k, 1.0)])
                    continue
                dist: dict[int, float] = {}
                for o in sorted(freq, key=lambda o: (o.label, tuple(sorted(o.props)))):
                    succ = class_of(first_with[o].extend(a, o))
                    dist[succ] = dist.get(succ, 0.0) + freq[o] / total
                row_trans.append(sorted(dist.items()))
            trans.append(row_trans)

        mdp = Mdp(
            [f"q{k}" for k in range(len(reps))],
            self.inputs,
            outputs,
            0,
            labels,
            trans,
        )
        ensure_valid(mdp, require_deterministic=True)
        return Hypothesis(mdp, reps, incomplete)
