"""Quantitative model checking of the supported fragment on explicit MDPs.

Supported queries after desugaring: `phi U[lo,hi) psi` with propositional
operands, optionally under a single top-level negation (answered through the
min-probability dual).  Bounded windows use backward induction with a
step-counter strategy; unbounded ones use a graph precomputation of the
probability-0 states followed by Gauss-Seidel value iteration and a
memoryless strategy.  Argmax ties always break toward the lowest input
index, so synthesized strategies are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import ltl
from .mdp import FiniteMemoryStrategy, Mdp, Output

VI_MAX_SWEEPS = 10**6


def _clamp01(v: float) -> float:
    # Summation dust can push values a few ulp outside [0,1]; probabilities
    # leaving the unit interval would poison exact-equality comparisons.
    return 0.0 if v < 0.0 else (1.0 if v > 1.0 else v)


class UnsupportedFormula(Exception):
    """Raised for formulas outside the bounded/unbounded-until fragment."""


@dataclass
class PmcResult:
    value: float
    strategy: FiniteMemoryStrategy
    # (state,) -> value for unbounded queries, (state, step) -> value for
    # bounded ones.  For negated queries these are the values of the inner
    # until under the minimizing strategy.
    per_state_values: dict


def is_propositional(f: ltl.Formula) -> bool:
    if isinstance(f, (ltl.TrueF, ltl.Atom)):
        return True
    if isinstance(f, ltl.Not):
        return is_propositional(f.sub)
    if isinstance(f, ltl.Or):
        return is_propositional(f.left) and is_propositional(f.right)
    return False


def prop_holds(f: ltl.Formula, output: Output) -> bool:
    if isinstance(f, ltl.TrueF):
        return True
    if isinstance(f, ltl.Atom):
        return f.name in output.props
    if isinstance(f, ltl.Not):
        return not prop_holds(f.sub, output)
    if isinstance(f, ltl.Or):
        return prop_holds(f.left, output) or prop_holds(f.right, output)
    raise ValueError(f"not propositional: {ltl.format_formula(f)}")


def max_prob_bounded_until(
    mdp: Mdp, phi: ltl.Formula, psi: ltl.Formula, lo: int, hi: int
) -> PmcResult:
    return _bounded_until(mdp, phi, psi, lo, hi, maximize=True)


def max_prob_unbounded_until(
    mdp: Mdp, phi: ltl.Formula, psi: ltl.Formula, tol: float = 1e-9
) -> PmcResult:
    return _unbounded_until(mdp, phi, psi, tol, maximize=True)


def _prop_vectors(mdp: Mdp, phi: ltl.Formula, psi: ltl.Formula):
    if not (is_propositional(phi) and is_propositional(psi)):
        raise UnsupportedFormula("until operands must be propositional")
    phiv = [prop_holds(phi, mdp.output_of(q)) for q in range(mdp.n_states)]
    psiv = [prop_holds(psi, mdp.output_of(q)) for q in range(mdp.n_states)]
    return phiv, psiv


def _bounded_until(mdp, phi, psi, lo, hi, maximize):
    if not 0 <= lo < hi:
        raise ValueError(f"need 0 <= lo < hi, got [{lo},{hi})")
    phiv, psiv = _prop_vectors(mdp, phi, psi)
    n = mdp.n_states
    n_inputs = len(mdp.inputs)
    better = (lambda new, best: new > best) if maximize else (lambda new, best: new < best)

    values: dict[tuple[int, int], float] = {}
    v_next = [0.0] * n
    per_step_choices: list[list[str] | None] = [None] * hi
    for t in range(hi - 1, -1, -1):
        v_t = [0.0] * n
        c_t = [mdp.inputs[0]] * n
        for q in range(n):
            if psiv[q] and t >= lo:
                v_t[q] = 1.0
            elif not phiv[q]:
                v_t[q] = 0.0
            else:
                best = None
                best_i = 0
                for i in range(n_inputs):
                    acc = 0.0
                    for succ, p in mdp.trans[q][i]:
                        acc += p * v_next[succ]
                    if best is None or better(acc, best):
                        best = acc
                        best_i = i
                v_t[q] = _clamp01(best) if best is not None else 0.0
                c_t[q] = mdp.inputs[best_i]
        for q in range(n):
            values[(q, t)] = v_t[q]
        per_step_choices[t] = c_t
        v_next = v_t
    strategy = FiniteMemoryStrategy.step_counter(per_step_choices)
    return PmcResult(v_next[mdp.initial], strategy, values)


def _unbounded_until(mdp, phi, psi, tol, maximize):
    if tol <= 0.0:
        raise ValueError(f"tol must be positive, got {tol}")
    phiv, psiv = _prop_vectors(mdp, phi, psi)
    n = mdp.n_states
    n_inputs = len(mdp.inputs)

    frozen = [False] * n
    v = [0.0] * n
    for q in range(n):
        if psiv[q]:
            v[q] = 1.0
            frozen[q] = True
    if maximize:
        # States outside the backward phi-reachable set of psi have maximum
        # probability 0 under every strategy.
        reach = set(q for q in range(n) if psiv[q])
        changed = True
        while changed:
            changed = False
            for q in range(n):
                if q in reach or not phiv[q]:
                    continue
                for i in range(n_inputs):
                    if any(succ in reach for succ, _ in mdp.trans[q][i]):
                        reach.add(q)
                        changed = True
                        break
        for q in range(n):
            if q not in reach and not frozen[q]:
                frozen[q] = True  # value stays 0
    else:
        for q in range(n):
            if not phiv[q] and not psiv[q]:
                frozen[q] = True

    better = (lambda new, best: new > best) if maximize else (lambda new, best: new < best)
    for sweep in range(VI_MAX_SWEEPS):
        delta = 0.0
        for q in range(n):
            if frozen[q]:
                continue
            best = None
            for i in range(n_inputs):
                acc = 0.0
                for succ, p in mdp.trans[q][i]:
                    acc += p * v[succ]
                if best is None or better(acc, best):
                    best = acc
            best = _clamp01(best)
            diff = abs(best - v[q])
            if diff > delta:
                delta = diff
            v[q] = best
        if delta < tol:
            break
    else:
        raise RuntimeError(f"value iteration did not converge within {VI_MAX_SWEEPS} sweeps")

    if maximize:
        choices = _attractor_choices(mdp, v, psiv, phiv, tol)
    else:
        choices = [mdp.inputs[0]] * n
        for q in range(n):
            if frozen[q]:
                continue
            best = None
            best_i = 0
            for i in range(n_inputs):
                acc = 0.0
                for succ, p in mdp.trans[q][i]:
                    acc += p * v[succ]
                if best is None or acc < best:
                    best = acc
                    best_i = i
            choices[q] = mdp.inputs[best_i]
    strategy = FiniteMemoryStrategy.memoryless(choices)
    return PmcResult(v[mdp.initial], strategy, {(q,): v[q] for q in range(n)})


def _attractor_choices(mdp, v, psiv, phiv, tol):
    """Value-optimal memoryless choices that also make progress toward psi.

    At the value-iteration fixpoint a self-loop's Q-value equals the state's
    own value, so a plain argmax may dawdle forever without losing value.
    Restricting to optimal inputs and walking BFS layers backward from the
    psi states yields a strategy that both attains the value and decides in
    expected finite time from every positive-value state.
    """
    n = mdp.n_states
    n_inputs = len(mdp.inputs)
    slack = max(tol * 10.0, 1e-8)
    q_values = [[0.0] * n_inputs for _ in range(n)]
    for q in range(n):
        for i in range(n_inputs):
            acc = 0.0
            for succ, p in mdp.trans[q][i]:
                acc += p * v[succ]
            q_values[q][i] = _clamp01(acc)
    choices = [mdp.inputs[0]] * n
    layered = [psiv[q] for q in range(n)]
    pending = [
        q for q in range(n) if not layered[q] and phiv[q] and not psiv[q] and v[q] > 0.0
    ]
    # Residual noise in v can push the mathematically optimal input just
    # outside the slack band; widen it until every positive-value state is
    # covered (each widening only admits near-optimal inputs).
    while pending and slack <= 1e-4:
        changed = True
        while changed:
            changed = False
            remaining = []
            for q in pending:
                target = max(q_values[q])
                done = False
                for i in range(n_inputs):
                    if q_values[q][i] < target - slack:
                        continue
                    if any(layered[succ] for succ, _ in mdp.trans[q][i]):
                        choices[q] = mdp.inputs[i]
                        layered[q] = True
                        changed = True
                        done = True
                        break
                if not done:
                    remaining.append(q)
            pending = remaining
        slack *= 10.0
    return choices


@dataclass(frozen=True)
class _Query:
    phi: ltl.Formula
    psi: ltl.Formula
    lo: int
    hi: int | None
    negated: bool


def _classify(f: ltl.Formula) -> _Query:
    d = ltl.desugar(f)
    negated = False
    target = d
    if isinstance(d, ltl.Not) and isinstance(d.sub, ltl.Until):
        negated = True
        target = d.sub
    if not isinstance(target, ltl.Until):
        raise UnsupportedFormula(
            f"not an until-shaped query: {ltl.format_formula(target)}"
        )
    for side, name in ((target.left, "left"), (target.right, "right")):
        if not is_propositional(side):
            raise UnsupportedFormula(
                f"{name} operand is not propositional: {ltl.format_formula(side)}"
            )
    if target.hi is None and target.lo != 0:
        raise UnsupportedFormula(
            f"unbounded until requires a zero lower bound: {ltl.format_formula(target)}"
        )
    return _Query(target.left, target.right, target.lo, target.hi, negated)


def ensure_supported(f: ltl.Formula) -> None:
    """Raise UnsupportedFormula unless `check` would accept the formula."""
    _classify(f)


@dataclass(frozen=True)
class DecisionProfile:
    length: int          # outputs per trace so P(undecided) <= gamma per the model
    expected_length: float  # model-predicted mean outputs per sampled trace


def decision_profile(
    mdp: Mdp,
    strategy,
    f: ltl.Formula,
    gamma: float = 1e-3,
    t_max: int | None = None,
) -> DecisionProfile:
    """How long sampled traces must run according to the model.

    Runs the composed chain forward and returns the first length with
    P(undecided) <= gamma, stopping early when the undecided mass plateaus
    (paths the model itself expects never to decide).  Sampling traces of
    this length keeps the truncation bias below gamma whenever the model is
    accurate, and stays cheap when an inaccurate model predicts quick
    decisions that reality refuses to deliver.  The expected length makes a
    sampling round's cost predictable in advance.
    """
    q = _classify(f)
    phiv, psiv = _prop_vectors(mdp, q.phi, q.psi)
    n = max(1, mdp.n_states)
    if t_max is None:
        t_max = max(64, 64 * n)
    window = max(8, n)
    dist = {(mdp.initial, strategy.initial_mode): 1.0}
    undecided_hist = [1.0]
    expected_steps = 0.0
    t = 0
    while t < t_max:
        # undecided mass keeps stepping; psi- and not-phi-states absorb
        nxt: dict[tuple[int, int], float] = {}
        for (s, m), mass in dist.items():
            if psiv[s] or not phiv[s]:
                continue
            a = strategy.choose(m, s)
            i = mdp.input_index(a)
            m2 = strategy.advance(m, s, a)
            for succ, p in mdp.trans[s][i]:
                key = (succ, m2)
                nxt[key] = nxt.get(key, 0.0) + mass * p
        expected_steps += undecided_hist[-1]
        dist = nxt
        t += 1
        u = sum(
            mass for (s, _), mass in dist.items() if not psiv[s] and phiv[s]
        )
        undecided_hist.append(u)
        if u <= gamma:
            break
        if len(undecided_hist) > window and undecided_hist[-window - 1] - u <= gamma / 10.0:
            break  # plateau: the model itself predicts these paths never decide
    return DecisionProfile(t + 1, expected_steps + 1.0)


def unbounded_decided(f: ltl.Formula):
    """For an unbounded-until query, a constant-time decidedness check.

    Returns a predicate on the latest output that is True exactly when the
    three-valued verdict of the formula on the trace so far is no longer
    inconclusive (the verdict of `phi U psi` settles at the first output
    where psi holds or phi fails).  Returns None for bounded queries.
    """
    q = _classify(f)
    if q.hi is not None:
        return None

    def decided(output: Output) -> bool:
        return prop_holds(q.psi, output) or not prop_holds(q.phi, output)

    return decided


def check(mdp: Mdp, f: ltl.Formula, tol: float = 1e-9) -> PmcResult:
    """Dispatch a formula to the bounded or unbounded engine.

    A top-level negation is answered as 1 - (minimum probability of the
    inner until); the reported strategy is then the minimizing one.
    """
    q = _classify(f)
    if q.hi is not None and q.hi <= q.lo:
        # Empty window: the until is unsatisfiable.
        res = PmcResult(
            0.0,
            FiniteMemoryStrategy.constant(mdp.inputs[0], mdp.n_states),
            {},
        )
    elif q.hi is None:
        res = _unbounded_until(mdp, q.phi, q.psi, tol, maximize=not q.negated)
    else:
        res = _bounded_until(mdp, q.phi, q.psi, q.lo, q.hi, maximize=not q.negated)
    if q.negated:
        return PmcResult(1.0 - res.value, res.strategy, res.per_state_values)
    return res


def satisfaction_probability(
    mdp: Mdp, strategy: FiniteMemoryStrategy, f: ltl.Formula, tol: float = 1e-12
) -> float:
    """Exact probability that the chain mdp+strategy satisfies the formula.

    Used as the white-box evaluation of a fixed strategy: the composed chain
    is finite because the strategy is finite-memory.
    """
    q = _classify(f)
    inner = _chain_until_probability(mdp, strategy, q.phi, q.psi, q.lo, q.hi, tol)
    return 1.0 - inner if q.negated else inner


def _chain_until_probability(mdp, strategy, phi, psi, lo, hi, tol):
    phiv, psiv = _prop_vectors(mdp, phi, psi)
    if hi is not None and hi <= lo:
        return 0.0
    if hi is not None:
        dist = {(mdp.initial, strategy.initial_mode): 1.0}
        value = 0.0
        for t in range(hi):
            surviving: dict[tuple[int, int], float] = {}
            for (q, m), mass in dist.items():
                if psiv[q] and t >= lo:
                    value += mass
                elif phiv[q]:
                    surviving[(q, m)] = mass
            if t == hi - 1 or not surviving:
                break
            dist = {}
            for (q, m), mass in surviving.items():
                a = strategy.choose(m, q)
                i = mdp.input_index(a)
                m2 = strategy.advance(m, q, a)
                for succ, p in mdp.trans[q][i]:
                    key = (succ, m2)
                    dist[key] = dist.get(key, 0.0) + mass * p
        return _clamp01(value)

    # Unbounded: iterate the composed chain's reachability values.
    nodes: list[tuple[int, int]] = []
    index: dict[tuple[int, int], int] = {}
    edges: list[list[tuple[int, float]]] = []
    stack = [(mdp.initial, strategy.initial_mode)]
    index[stack[0]] = 0
    nodes.append(stack[0])
    edges.append([])
    while stack:
        q, m = stack.pop()
        k = index[(q, m)]
        if psiv[q] or not phiv[q]:
            continue  # absorbing for this query
        a = strategy.choose(m, q)
        i = mdp.input_index(a)
        m2 = strategy.advance(m, q, a)
        for succ, p in mdp.trans[q][i]:
            key = (succ, m2)
            if key not in index:
                index[key] = len(nodes)
                nodes.append(key)
                edges.append([])
                stack.append(key)
            edges[k].append((index[key], p))
    vals = [1.0 if psiv[q] else 0.0 for q, _ in nodes]
    frozen = [psiv[q] or not phiv[q] for q, _ in nodes]
    for _ in range(VI_MAX_SWEEPS):
        delta = 0.0
        for k in range(len(nodes)):
            if frozen[k]:
                continue
            acc = 0.0
            for succ_k, p in edges[k]:
                acc += p * vals[succ_k]
            acc = _clamp01(acc)
            diff = abs(acc - vals[k])
            if diff > delta:
                delta = diff
            vals[k] = acc
        if delta < tol:
            break
    else:
        raise RuntimeError("chain value iteration did not converge")
    return _clamp01(vals[0])
