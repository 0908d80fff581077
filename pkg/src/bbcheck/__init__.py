"""Black-box checking for stochastic systems.

Learns a deterministic MDP of an executable but unobservable-state system,
synthesizes a strategy maximizing a safety-LTL property's satisfaction
probability, and statistically validates the learned model against the real
system, feeding discovered differences back into learning.
"""

from .mdp import (
    FiniteMemoryStrategy,
    Mdp,
    Output,
    Path,
    Trace,
    format_mdp,
    parse_mdp,
    resolve_path,
    simulate,
    trace_of_path,
    validate,
)
from .ltl import Formula, Verdict, desugar, evaluate, horizon, parse
from .pmc import PmcResult, UnsupportedFormula, check, satisfaction_probability
from .blackbox import SampleMultiset, ScaffoldOutcome, SutHandle, wrap_whitebox
from .learner import ObservationTable, compatible
from .stats import TestOutcome, chernoff_sample_size, t_test_one_sample, witness_bound
from .validator import (
    EqTestParams,
    TraceLengthPolicy,
    compare_with_strategy,
    construct_witness,
    equivalence_test_random,
    periodic_table_check,
)
from .orchestrator import Report, RunConfig, run
from . import bench

__version__ = "0.1.0"

__all__ = [
    "FiniteMemoryStrategy", "Mdp", "Output", "Path", "Trace",
    "format_mdp", "parse_mdp", "resolve_path", "simulate", "trace_of_path",
    "validate",
    "Formula", "Verdict", "desugar", "evaluate", "horizon", "parse",
    "PmcResult", "UnsupportedFormula", "check", "satisfaction_probability",
    "SampleMultiset", "ScaffoldOutcome", "SutHandle", "wrap_whitebox",
    "ObservationTable", "compatible",
    "TestOutcome", "chernoff_sample_size", "t_test_one_sample", "witness_bound",
    "EqTestParams", "TraceLengthPolicy", "compare_with_strategy",
    "construct_witness", "equivalence_test_random", "periodic_table_check",
    "Report", "RunConfig", "run",
    "bench",
]
