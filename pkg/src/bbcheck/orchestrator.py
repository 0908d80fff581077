"""The outer learn / synthesize / validate loop with budget accounting.

One run is single-threaded and fully determined by its configuration, the
SUT's seed, and the run seed: reports serialize byte-identically across
repeated runs.  Phase costs are accounted in SUT steps (resets included),
which is also the x-axis of the reported estimate curve.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, asdict
from typing import Callable

from . import ltl, pmc
from .blackbox import SampleMultiset, SutHandle
from .learner import Hypothesis, ObservationTable
from .mdp import FiniteMemoryStrategy, Mdp, Trace, format_mdp
from .validator import (
    CompareResult,
    EqTestParams,
    TraceLengthPolicy,
    compare_with_strategy,
    construct_witness,
    equivalence_test_random,
)


@dataclass(frozen=True)
class RunConfig:
    n_samples: int = 5000          # traces per strategy-guided comparison round
    t_delta: float = 0.025         # two-sided significance of the t-test
    w_delta: float = 0.025         # witness bound parameter
    alpha: float = 0.05            # row-compatibility significance
    n_min: int = 400               # observations per table cell before complete
    budget: int = 2_000_000        # SUT steps (resets included)
    seed: int = 0
    eq_params: EqTestParams = field(default_factory=EqTestParams)
    check_every: int = 500
    length_policy: TraceLengthPolicy = field(default_factory=TraceLengthPolicy)
    conv_rounds: int = 3           # consecutive clean rounds before convergence
    t_test_mode: str = "significance"  # or "threshold": compare |p_bar-p_hat| raw
    vi_tol: float = 1e-9
    refine_attempts: int = 20
    n_min_growth: int = 0
    refine_step_cap: int = 20000
    curve_step_interval: int = 50_000

    def validated(self) -> "RunConfig":
        for name in ("t_delta", "w_delta", "alpha"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must be in (0,1), got {v}")
        if self.budget < 1:
            raise ValueError("budget must be at least 1")
        if self.n_samples < 2:
            raise ValueError("n_samples must be at least 2")
        if self.conv_rounds < 1:
            raise ValueError("conv_rounds must be at least 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Report:
    formula: str
    config: dict
    termination: str                    # "converged" | "budget"
    final_estimate: float | None
    best_estimate: float
    model_value: float | None           # value claimed by PMC on the final hypothesis
    strategy: dict | None
    hypothesis_mdp: str | None
    hypothesis_info: dict | None
    curve: list[tuple[int, float]]
    steps_used: int
    phase_steps: dict
    counters: dict

    def to_json_dict(self) -> dict:
        return {
            "formula": self.formula,
            "config": self.config,
            "termination": self.termination,
            "final_estimate": self.final_estimate,
            "best_estimate": self.best_estimate,
            "model_value": self.model_value,
            "strategy": self.strategy,
            "hypothesis_mdp": self.hypothesis_mdp,
            "hypothesis_info": self.hypothesis_info,
            "curve": [[s, v] for s, v in self.curve],
            "steps_used": self.steps_used,
            "phase_steps": self.phase_steps,
            "counters": self.counters,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"

    def curve_csv(self) -> str:
        lines = ["steps,best_estimate"]
        for s, v in self.curve:
            lines.append(f"{s},{v!r}")
        return "\n".join(lines) + "\n"


class _Budget:
    def __init__(self, sut: SutHandle, limit: int) -> None:
        self.sut = sut
        self.start = sut.steps_taken
        self.limit = limit

    def used(self) -> int:
        return self.sut.steps_taken - self.start

    def exhausted(self) -> bool:
        return self.used() >= self.limit


def run(
    sut: SutHandle,
    formula: ltl.Formula | str,
    cfg: RunConfig,
    log: Callable[[dict], None] | None = None,
) -> Report:
    """Run the full loop on a black-box system and a safety-LTL property."""
    cfg = cfg.validated()
    if isinstance(formula, str):
        formula = ltl.parse(formula)
    pmc.ensure_supported(formula)  # fail before touching the SUT

    def emit(event: dict) -> None:
        if log is not None:
            log(event)

    rng = random.Random(f"{cfg.seed}:run")
    budget = _Budget(sut, cfg.budget)
    root = sut.reset()
    multiset = SampleMultiset(root)
    multiset.record(Trace(root))
    table = ObservationTable(
        multiset, sut.inputs, alpha=cfg.alpha, n_min=cfg.n_min,
        refine_attempts=cfg.refine_attempts, n_min_growth=cfg.n_min_growth,
        refine_step_cap=cfg.refine_step_cap,
    )

    curve: list[tuple[int, float]] = []
    best = 0.0
    last_estimate: float | None = None
    model_value: float | None = None
    hypothesis: Hypothesis | None = None
    strategy: FiniteMemoryStrategy | None = None
    eq_params = cfg.eq_params
    conv_streak = 0
    termination = "budget"
    phase_steps = {"learning": 0, "validation": 0, "equivalence": 0}
    counters = {
        "rounds": 0,
        "witnesses": 0,
        "off_model": 0,
        "table_broken": 0,
        "eq_counterexamples": 0,
        "interrupted": 0,
        "no_progress_counterexamples": 0,
        "pmc_calls": 0,
    }
    next_tick = cfg.curve_step_interval

    def tick(force: bool = False) -> None:
        nonlocal next_tick
        steps = budget.used()
        if force or steps >= next_tick:
            while steps >= next_tick:
                next_tick += cfg.curve_step_interval
            if not curve or steps > curve[-1][0]:
                curve.append((steps, best))
                emit({"event": "curve", "steps": steps, "best": best})

    def note_round(p_bar: float) -> None:
        nonlocal best, last_estimate
        last_estimate = p_bar
        if p_bar > best:
            best = p_bar
        tick(force=True)

    def feed_counterexample(trace: Trace, source: str) -> bool:
        """Feed a differentiating trace to the learner; True when it changed
        the table (new rows, or closedness/consistency now violated)."""
        nonlocal conv_streak
        conv_streak = 0
        grew = table.process_counterexample(trace)
        progressed = grew or not table.is_closed_and_consistent()
        if not progressed:
            counters["no_progress_counterexamples"] += 1
            emit({"event": "counterexample_no_progress", "trace": str(trace)})
        emit({"event": "counterexample", "source": source, "trace": str(trace)})
        return progressed

    while True:
        # (A) learning
        before = budget.used()
        status = table.close_and_consistentize(sut, budget)
        phase_steps["learning"] += budget.used() - before
        if status == "budget_exhausted":
            emit({"event": "phase", "phase": "learning", "status": status})
            break
        hypothesis = table.build_hypothesis()
        emit(
            {
                "event": "phase",
                "phase": "learning",
                "states": hypothesis.mdp.n_states,
                "steps": budget.used(),
            }
        )

        # (B) synthesis
        result = pmc.check(hypothesis.mdp, formula, tol=cfg.vi_tol)
        counters["pmc_calls"] += 1
        strategy = result.strategy
        model_value = result.value
        emit({"event": "phase", "phase": "synthesis", "model_value": model_value})

        # (C) strategy-guided comparison
        counters["rounds"] += 1
        before = budget.used()
        cr = compare_with_strategy(
            hypothesis.mdp,
            sut,
            strategy,
            model_value,
            formula,
            cfg.n_samples,
            cfg.t_delta,
            multiset,
            rng,
            table=table,
            check_every=cfg.check_every,
            length_policy=cfg.length_policy,
            budget=budget,
            t_test_mode=cfg.t_test_mode,
            on_trace=lambda _n: tick(),
        )
        phase_steps["validation"] += budget.used() - before
        emit(
            {
                "event": "phase",
                "phase": "comparison",
                "outcome": cr.kind,
                "p_bar": cr.p_bar,
                "steps": budget.used(),
            }
        )
        if cr.kind == "budget":
            break
        if cr.kind == "off_model":
            counters["off_model"] += 1
            feed_counterexample(cr.trace, "off_model")
            continue
        if cr.kind == "table_broken":
            counters["table_broken"] += 1
            conv_streak = 0
            emit({"event": "table_broken", "reason": cr.reason})
            continue
        if cr.kind == "interrupted":
            counters["interrupted"] += 1
            conv_streak = 0
            emit({"event": "round_interrupted", "reason": cr.reason})
            continue
        note_round(cr.p_bar)
        if cr.kind == "rejected":
            # (D) witness construction; a witness that changes nothing is
            # treated like a failed construction and falls through to (E)
            witness = construct_witness(hypothesis.mdp, multiset, cfg.w_delta)
            if witness is not None:
                counters["witnesses"] += 1
                if feed_counterexample(witness, "witness"):
                    continue

        # (E) random equivalence testing
        before = budget.used()
        er = equivalence_test_random(
            hypothesis.mdp,
            sut,
            eq_params,
            multiset,
            rng,
            witness_delta=cfg.w_delta,
            budget=budget,
        )
        phase_steps["equivalence"] += budget.used() - before
        eq_params = er.params
        if er.budget_exhausted:
            break
        if er.trace is not None:
            counters["eq_counterexamples"] += 1
            feed_counterexample(er.trace, "equivalence_test")
            continue
        conv_streak += 1
        emit({"event": "clean_round", "streak": conv_streak})
        if conv_streak >= cfg.conv_rounds:
            termination = "converged"
            break
        if budget.exhausted():
            break

    tick(force=True)
    if not curve:
        curve.append((budget.used(), best))
    emit({"event": "done", "termination": termination, "steps": budget.used()})
    return Report(
        formula=ltl.format_formula(formula),
        config=cfg.to_dict(),
        termination=termination,
        final_estimate=last_estimate,
        best_estimate=best,
        model_value=model_value,
        strategy=strategy.to_dict() if strategy is not None else None,
        hypothesis_mdp=format_mdp(hypothesis.mdp) if hypothesis is not None else None,
        hypothesis_info=hypothesis.sidecar() if hypothesis is not None else None,
        curve=curve,
        steps_used=budget.used(),
        phase_steps=phase_steps,
        counters=counters,
    )
