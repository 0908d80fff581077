"""Command-line interface.

Subcommands:

    run   learn + synthesize + validate against a black-box execution of a model
    mc    white-box model checking of a model file or generated benchmark
    smc   statistical estimation of a fixed strategy's satisfaction probability
    gen   write a generated benchmark model to a file

Model sources are `--model <file>` or `--bench <spec>` with spec strings
`grid:<N>x<N>:seed=<K>`, `slot`, `slot:limited`.  A config file of
`key = value` lines can seed any flag; explicit flags win.  Exit codes:
0 success, 1 usage or I/O errors, 2 unsupported formula.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import re
import sys
from concurrent.futures import ThreadPoolExecutor

from . import bench, ltl, pmc, stats
from .blackbox import wrap_whitebox
from .mdp import (
    FiniteMemoryStrategy,
    Mdp,
    MdpFormatError,
    InvalidMdpError,
    format_mdp,
    simulate,
)
from .orchestrator import Report, RunConfig, run
from .validator import EqTestParams, TraceLengthPolicy

import random


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # usage errors exit 1, not 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


_BENCH_GRID = re.compile(r"^grid:(\d+)x(\d+):seed=(\d+)$")


def build_model(args) -> Mdp:
    if getattr(args, "model", None) and getattr(args, "bench", None):
        raise UsageError("give exactly one of --model and --bench")
    if getattr(args, "model", None):
        return bench.load_mdp(args.model)
    spec = getattr(args, "bench", None)
    if not spec:
        raise UsageError("give exactly one of --model and --bench")
    m = _BENCH_GRID.match(spec)
    if m:
        w, h, seed = int(m.group(1)), int(m.group(2)), int(m.group(3))
        if w != h:
            raise UsageError(f"grid benchmarks are square, got {w}x{h}")
        return bench.random_grid_world(w, seed)
    if spec in ("slot", "slot:full"):
        return bench.slot_machine(bench.SlotSpec())
    if spec == "slot:limited":
        return bench.slot_machine(bench.SlotSpec(observability="limited"))
    raise UsageError(f"unknown benchmark spec {spec!r}")


class UsageError(Exception):
    pass


def _read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


_CONFIG_KEYS = {
    "model": str, "bench": str, "formula": str, "budget": int, "N": int,
    "tdelta": float, "wdelta": float, "alpha": float, "nmin": int,
    "seed": int, "trials": int, "out": str, "curve": str,
    "conv-rounds": int, "trace-policy": str, "trace-pstop": float,
}


def _apply_config_file(args: argparse.Namespace) -> None:
    if not getattr(args, "config", None):
        return
    values = _read_config_file(args.config)
    for key, raw in values.items():
        if key not in _CONFIG_KEYS:
            raise UsageError(f"unknown config key {key!r}")
        attr = key.replace("-", "_")
        if getattr(args, attr, None) is None:
            setattr(args, attr, _CONFIG_KEYS[key](raw))


def _run_config(args) -> RunConfig:
    return RunConfig(
        n_samples=args.N if args.N is not None else 5000,
        t_delta=args.tdelta if args.tdelta is not None else 0.025,
        w_delta=args.wdelta if args.wdelta is not None else 0.025,
        alpha=args.alpha if args.alpha is not None else 0.05,
        n_min=args.nmin if args.nmin is not None else 400,
        budget=args.budget if args.budget is not None else 2_000_000,
        seed=args.seed if args.seed is not None else 0,
        conv_rounds=args.conv_rounds if args.conv_rounds is not None else 3,
        length_policy=TraceLengthPolicy(
            kind=args.trace_policy if args.trace_policy is not None else "geometric",
            p_stop=args.trace_pstop if args.trace_pstop is not None else 0.05,
        ),
    )


def _suffixed(path: str, k: int) -> str:
    if "." in path.rsplit("/", 1)[-1]:
        stem, ext = path.rsplit(".", 1)
        return f"{stem}.trial{k}.{ext}"
    return f"{path}.trial{k}"


def _write_run_outputs(report: Report, out: str, curve: str) -> None:
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    with open(curve, "w", encoding="utf-8") as fh:
        fh.write(report.curve_csv())
    if report.hypothesis_mdp is not None:
        learned = out[: -len(".json")] if out.endswith(".json") else out
        with open(learned + ".learned.mdp", "w", encoding="utf-8") as fh:
            fh.write(report.hypothesis_mdp)


def cmd_run(args) -> int:
    model = build_model(args)
    cfg = _run_config(args)
    out = args.out if args.out is not None else "report.json"
    curve = args.curve if args.curve is not None else "curve.csv"
    trials = args.trials if args.trials is not None else 1
    log_stream = sys.stderr if args.log else None

    def one_trial(k: int) -> Report:
        trial_cfg = cfg if trials == 1 else dataclasses.replace(
            cfg, seed=cfg.seed + 1000003 * k
        )
        sut = wrap_whitebox(model, f"{trial_cfg.seed}:sut")
        log = None
        if log_stream is not None:
            def log(event, _k=k):
                print(json.dumps({"trial": _k, **event}, sort_keys=True), file=log_stream)
        return run(sut, args.formula, trial_cfg, log=log)

    if trials == 1:
        report = one_trial(0)
        _write_run_outputs(report, out, curve)
        print(f"termination={report.termination} estimate={report.final_estimate} "
              f"best={report.best_estimate} steps={report.steps_used}")
    else:
        with ThreadPoolExecutor(max_workers=min(trials, 8)) as pool:
            reports = list(pool.map(one_trial, range(trials)))
        for k, report in enumerate(reports):
            _write_run_outputs(report, _suffixed(out, k), _suffixed(curve, k))
            print(f"trial={k} termination={report.termination} "
                  f"estimate={report.final_estimate} best={report.best_estimate} "
                  f"steps={report.steps_used}")
    return 0


def cmd_mc(args) -> int:
    model = build_model(args)
    formula = ltl.parse(args.formula)
    result = pmc.check(model, formula)
    print(f"value = {result.value!r}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(result.strategy.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def cmd_smc(args) -> int:
    model = build_model(args)
    formula = ltl.desugar(ltl.parse(args.formula))
    pmc.ensure_supported(formula)
    with open(args.strategy, "r", encoding="utf-8") as fh:
        strategy = FiniteMemoryStrategy.from_dict(json.load(fh))
    eps = args.eps if args.eps is not None else 0.01
    delta = args.delta if args.delta is not None else 0.01
    n = args.N if args.N is not None else stats.chernoff_sample_size(eps, delta)
    h = ltl.horizon(formula)
    cap = max(2, 10 * model.n_states)
    rng = random.Random(f"{args.seed if args.seed is not None else 0}:smc")
    successes = 0
    for _ in range(n):
        if h != float("inf"):
            length = max(1, int(h))
        else:
            from .blackbox import geometric_trace_length

            length = geometric_trace_length(0.05, cap, rng)
        trace = simulate(model, strategy, length, rng)
        if ltl.evaluate(trace.outputs(), formula) is ltl.Verdict.TRUE:
            successes += 1
    estimate = successes / n
    print(f"estimate = {estimate!r} (N = {n})")
    if args.out:
        meta = {
            "estimate": estimate,
            "N": n,
            "N_overridden": args.N is not None,
            "eps": eps,
            "delta": delta,
            "formula": args.formula,
        }
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def cmd_gen(args) -> int:
    model = build_model(args)
    text = format_mdp(model)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(f"wrote {args.out} ({model.n_states} states)")
    return 0


def _add_model_flags(p: _Parser) -> None:
    p.add_argument("--model", help="model file in the MDP text format")
    p.add_argument("--bench", help="benchmark spec, e.g. grid:4x4:seed=1 or slot:limited")
    p.add_argument("--config", help="key = value config file; flags override it")


def make_parser() -> _Parser:
    parser = _Parser(prog="bbcheck", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="full learn/synthesize/validate loop")
    _add_model_flags(p_run)
    p_run.add_argument("--formula", required=True)
    p_run.add_argument("--budget", type=int)
    p_run.add_argument("--N", type=int, dest="N")
    p_run.add_argument("--tdelta", type=float)
    p_run.add_argument("--wdelta", type=float)
    p_run.add_argument("--alpha", type=float)
    p_run.add_argument("--nmin", type=int)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--trials", type=int)
    p_run.add_argument("--out")
    p_run.add_argument("--curve")
    p_run.add_argument("--conv-rounds", type=int, dest="conv_rounds")
    p_run.add_argument("--trace-policy", dest="trace_policy",
                       choices=("geometric", "decided"))
    p_run.add_argument("--trace-pstop", type=float, dest="trace_pstop")
    p_run.add_argument("--log", action="store_true",
                       help="write one JSON event per line to stderr")
    p_run.set_defaults(fn=cmd_run)

    p_mc = sub.add_parser("mc", help="white-box model checking")
    _add_model_flags(p_mc)
    p_mc.add_argument("--formula", required=True)
    p_mc.add_argument("--out", help="write the optimal strategy as JSON")
    p_mc.set_defaults(fn=cmd_mc)

    p_smc = sub.add_parser("smc", help="estimate a fixed strategy's probability")
    _add_model_flags(p_smc)
    p_smc.add_argument("--formula", required=True)
    p_smc.add_argument("--strategy", required=True, help="strategy JSON file")
    p_smc.add_argument("--eps", type=float)
    p_smc.add_argument("--delta", type=float)
    p_smc.add_argument("--N", type=int, dest="N")
    p_smc.add_argument("--seed", type=int)
    p_smc.add_argument("--out", help="write estimate metadata as JSON")
    p_smc.set_defaults(fn=cmd_smc)

    p_gen = sub.add_parser("gen", help="write a generated benchmark model")
    _add_model_flags(p_gen)
    p_gen.add_argument("-o", "--out", required=True)
    p_gen.set_defaults(fn=cmd_gen)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args)
        return args.fn(args)
    except pmc.UnsupportedFormula as exc:
        print(f"unsupported formula: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ltl.LtlSyntaxError, MdpFormatError, InvalidMdpError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
