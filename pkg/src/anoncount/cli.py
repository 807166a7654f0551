"""Command-line entry point: ``anoncount {run,sweep,verify,trace}``."""

from __future__ import annotations

import argparse
import sys
import itertools

from .engine import SCHEDULERS, Trace, dump_trace, load_trace, make_scheduler
from .harness import (
    ExperimentConfig,
    RunResult,
    final_checks,
    rows_to_csv,
    run_experiment,
    run_one,
)
from .history_tree import build_ground_truth
from .protocol import LEADER_LABEL, MODES, NON_LEADER_LABEL

ALL_SCHEDULERS = SCHEDULERS + ("late-mixing",)


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _inputs(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scheduler", choices=ALL_SCHEDULERS, default="random-connected")
    p.add_argument("--mode", choices=MODES, default="basic")
    p.add_argument("--T", type=_positive, default=1, help="dynamic disconnectivity; >1 wraps processes")
    p.add_argument("--budget", type=_positive, help="round budget (default: T times the round bound)")
    p.add_argument("--no-check", action="store_true", help="skip the invariant monitor")
    p.add_argument("--csv", help="write CSV rows to this file")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="anoncount", description="Counting in congested anonymous dynamic networks.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="one experiment")
    r.add_argument("--n", type=_positive, required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--inputs", type=_inputs, help="generalized mode: comma-separated inputs of processes 1..n-1")
    r.add_argument("--trace-out", help="write the topology trace here")
    _add_run_flags(r)

    s = sub.add_parser("sweep", help="ranges of n and seeds")
    s.add_argument("--n-min", type=_positive, default=1)
    s.add_argument("--n-max", type=_positive, required=True)
    s.add_argument("--seeds", type=_positive, default=5, help="number of seeds, starting at 0")
    s.add_argument("--fault", action="store_true", help="add the fault-injecting schedulers")
    _add_run_flags(s)

    v = sub.add_parser("verify", help="full invariant suite over all schedulers")
    v.add_argument("--max-n", type=_positive, default=8)
    v.add_argument("--seeds", type=_positive, default=2)
    v.add_argument("--csv", help="write CSV rows to this file")

    t = sub.add_parser("trace", help="dump or inspect topology traces")
    tsub = t.add_subparsers(dest="trace_cmd", required=True)
    d = tsub.add_parser("dump", help="generate a trace from a scheduler")
    d.add_argument("--n", type=_positive, required=True)
    d.add_argument("--scheduler", choices=SCHEDULERS, default="random-connected")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--T", type=_positive, default=1)
    d.add_argument("--rounds", type=_positive, default=10)
    d.add_argument("--out", help="file to write (default: stdout)")
    sh = tsub.add_parser("show", help="check a trace and print its history tree")
    sh.add_argument("file")
    sh.add_argument("--depth", type=int, help="levels of the history tree to print")
    return ap


def _report(results: list[RunResult], csv_path: str | None) -> int:
    text = rows_to_csv(results)
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            fh.write(text)
    sys.stdout.write(text)
    failed = 0
    for r in results:
        problems = r.violations + final_checks(r)
        seen = set()
        for v in problems:
            if v.check not in seen:
                seen.add(v.check)
                print(f"n={r.n} seed={r.seed} {r.scheduler}: {v}", file=sys.stderr)
        if problems or not r.correct:
            failed += 1
    if failed:
        print(f"{failed} of {len(results)} runs failed", file=sys.stderr)
    return 1 if failed else 0


def cmd_run(a) -> int:
    inputs = None
    if a.inputs is not None:
        if a.mode != "generalized":
            raise SystemExit("anoncount run: --inputs needs --mode generalized")
        if len(a.inputs) != a.n - 1:
            raise SystemExit(f"anoncount run: --inputs needs {a.n - 1} values")
        inputs = [None] + a.inputs
    r = run_one(
        a.n, a.scheduler, a.seed, a.mode, a.T, a.budget, not a.no_check, inputs, record=a.trace_out is not None
    )
    if a.trace_out and r.trace is not None:
        r.trace.T = a.T
        with open(a.trace_out, "w") as fh:
            fh.write(dump_trace(r.trace))
    print(f"output {r.row()['output']}")
    return _report([r], a.csv)


def cmd_sweep(a) -> int:
    if a.n_min > a.n_max:
        raise SystemExit("anoncount sweep: --n-min exceeds --n-max")
    cfg = ExperimentConfig(
        n=range(a.n_min, a.n_max + 1),
        scheduler=a.scheduler,
        seeds=range(a.seeds),
        mode=a.mode,
        T=a.T,
        budget=a.budget,
        check=not a.no_check,
        fault=a.fault,
    )
    return _report(run_experiment(cfg), a.csv)


def cmd_verify(a) -> int:
    results = []
    for n in range(1, a.max_n + 1):
        for sched in ("static-star", "static-path", "alternating", "random-connected", "random-path", "late-mixing"):
            seeds = range(a.seeds) if sched in ("random-connected", "random-path", "late-mixing") else (0,)
            for seed in seeds:
                results.append(run_one(n, sched, seed))
    code = _report(results, a.csv)
    if code == 0:
        print(f"verify: {len(results)} runs, all invariants hold", file=sys.stderr)
    return code


def cmd_trace(a) -> int:
    if a.trace_cmd == "dump":
        sched = make_scheduler(a.scheduler, a.n, a.seed, a.T)
        trace = Trace(a.n, list(itertools.islice(sched, a.rounds)), a.T)
        text = dump_trace(trace)
        if a.out:
            with open(a.out, "w") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        return 0
    with open(a.file) as fh:
        trace = load_trace(fh.read())
    ok = trace.is_t_union_connected()
    print(f"n {trace.n} T {trace.T} rounds {len(trace.rounds)} {'T-union-connected' if ok else 'NOT T-union-connected'}")
    depth = len(trace.rounds) if a.depth is None else min(a.depth, len(trace.rounds))
    labels = [LEADER_LABEL] + [NON_LEADER_LABEL] * (trace.n - 1)
    tree, _ = build_ground_truth(trace, labels, depth)
    print(tree.dump())
    return 0 if ok else 1


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    try:
        return {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify, "trace": cmd_trace}[a.cmd](a)
    except (ValueError, OSError) as exc:
        print(f"anoncount: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
