"""Command-line entry point.

Machine-readable results go to stdout or ``--out``; logs go to stderr.
Exit status: 0 success, 1 invalid input, 2 failed assertion or threshold.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys

from scipy import stats as sps

from . import harness
from .harness import json_default
from .churn import PoissonChurnParams, pinned_jumps, population_after
from .engine import run_model
from .flooding import flood, write_traces_csv
from .metrics import (
    degree_stats,
    edge_prob_empirical,
    edge_prob_poisson_regen_bound,
    edge_prob_streaming_regen,
    h_out_exact,
    h_out_sampled,
    isolated_count,
)
from .model import (
    SCHEMA_VERSION,
    InvariantError,
    ModelKind,
    ModelParams,
    Replayer,
    Snapshot,
    TimeOutOfRange,
    load_trajectory,
    save_trajectory,
    snapshot_at,
    write_jsonl,
)
from .rng import RandomStream

log = logging.getLogger("churnsim")


class UsageError(Exception):
    """Invalid input: exit status 1."""


class CheckFailed(Exception):
    """A requested assertion or threshold did not hold: exit status 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _emit(obj, out: str | None = None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=json_default) + "\n"
    if out:
        with open(out, "w") as fp:
            fp.write(text)
    else:
        sys.stdout.write(text)


def _load(path):
    try:
        return load_trajectory(path)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read trajectory {path}: {exc}") from exc


# -- subcommands -----------------------------------------------------------

def cmd_simulate(args) -> None:
    try:
        params = ModelParams(ModelKind(args.model), d=args.d, n=args.n, lam=args.lam, mu=args.mu,
                             regen_before_birth=args.regen_before_birth)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    traj = run_model(params.kind, params, horizon=args.horizon, seed=args.seed)
    log.info("simulated %s: %d events up to t=%s", params.kind.value, len(traj.events), traj.horizon)
    if args.out:
        save_trajectory(traj, args.out)
    else:
        write_jsonl(traj, sys.stdout)


def _is_rule(text: str) -> bool:
    return any(c.isalpha() for c in text)


def resolve_start(traj, t0_arg: str, source_arg: str) -> tuple[float, int]:
    """Map ``--t0``/``--source`` onto a start time and a source node.

    For streaming trajectories a rule gives a round. For Poisson ones a rule
    gives a churn-event index r0 and ``born-at-t0`` picks the first node born
    at or after event r0. A plain number is a time.
    """
    params = traj.params
    if _is_rule(t0_arg):
        try:
            k = harness.resolve_rule(t0_arg, params.nominal_n)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        if params.kind.streaming:
            t0 = float(k)
        else:
            churn = [e for e in traj.events if e.kind != "rewire"]
            if k < 1 or k > len(churn):
                raise UsageError(f"event index {k} outside the trajectory's {len(churn)} churn events")
            t0 = churn[k - 1].t
    else:
        try:
            t0 = float(t0_arg)
        except ValueError as exc:
            raise UsageError(f"bad --t0 {t0_arg!r}") from exc
    if source_arg != "born-at-t0":
        try:
            return t0, int(source_arg)
        except ValueError as exc:
            raise UsageError(f"bad --source {source_arg!r}") from exc
    for e in traj.events:
        if e.kind == "birth" and e.t >= t0 - 1e-12:
            if params.kind.streaming and e.t != t0:
                break
            return e.t, e.id
    raise UsageError(f"no node joins at or after t0={t0} within the trajectory")


def cmd_flood(args) -> None:
    traj = _load(args.traj)
    variant = args.variant or ("sync" if traj.params.kind.streaming else "discretized")
    t0, source = resolve_start(traj, args.t0, args.source)
    if traj.params.kind.streaming:
        t0 = int(t0)
    max_steps = harness.resolve_rule(args.max_steps, traj.params.nominal_n) if args.max_steps else None
    try:
        tr = flood(traj, t0, source, variant, max_steps=max_steps)
    except (ValueError, TimeOutOfRange) as exc:
        raise UsageError(str(exc)) from exc
    log.info("flooding from %d at %s: completed=%s time=%s", source, t0, tr.completed, tr.flooding_time)
    if args.out:
        with open(args.out, "w", newline="") as fp:
            write_traces_csv([(0, tr)], fp)
    else:
        write_traces_csv([(0, tr)], sys.stdout)


def _snapshot_from_args(args) -> Snapshot:
    if bool(args.traj) == bool(getattr(args, "snapshot", None)):
        raise UsageError("give exactly one of --traj and --snapshot")
    if args.traj:
        traj = _load(args.traj)
        at = traj.horizon if args.at is None else args.at
        try:
            return snapshot_at(traj, at)
        except TimeOutOfRange as exc:
            raise UsageError(str(exc)) from exc
    try:
        with open(args.snapshot) as fp:
            return Snapshot.from_json(json.load(fp))
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read snapshot {args.snapshot}: {exc}") from exc


def cmd_expansion(args) -> None:
    snap = _snapshot_from_args(args)
    try:
        if args.method == "exact":
            rep = h_out_exact(snap, args.min_size, args.max_size)
        else:
            rep = h_out_sampled(snap, args.min_size, args.max_size, args.samples, RandomStream(args.seed))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = rep.to_json()
    out["time"] = snap.time
    out["nodes"] = len(snap)
    _emit(out, args.out)


def cmd_stats(args) -> None:
    snap = _snapshot_from_args(args)
    _emit({
        "schema": SCHEMA_VERSION,
        "time": snap.time,
        "population": len(snap),
        "edges": len(snap.edges()),
        "isolated": isolated_count(snap),
        "degree": degree_stats(snap).to_json(),
    }, args.out)


def _z(observed: float, expected: float, total: int) -> float:
    se = math.sqrt(expected * (1 - expected) / total)
    return (observed - expected) / se


def cmd_oracle(args) -> None:
    rng = RandomStream(args.seed)
    check = args.check
    if check == "edge-prob-sdgr":
        try:
            expected = edge_prob_streaming_regen(args.n, args.k)
            freq = edge_prob_empirical(ModelKind.SDGR, args.n, args.d, args.k, args.trials, rng)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        z = _z(freq.frequency, expected, freq.histories)
        out = {"formula": expected, "empirical": freq.frequency, "histories": freq.histories,
               "z": z, "passed": abs(z) < 3}
    elif check == "edge-prob-pdgr":
        try:
            bound = edge_prob_poisson_regen_bound(args.n, args.k)
            freq = edge_prob_empirical(ModelKind.PDGR, args.n, args.d, args.k, args.trials, rng)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        z = (freq.frequency - bound) / max(freq.std_error, 1e-300)
        out = {"bound": bound, "empirical": freq.frequency, "histories": freq.histories,
               "z_over_bound": z, "passed": z < 3}
    elif check == "jump-chain":
        params = PoissonChurnParams(args.lam, args.mu)
        rows = []
        for pinned in args.pinned:
            births, dts = pinned_jumps(pinned, params, args.trials, rng)
            rate = pinned * params.mu + params.lam
            p = params.lam / rate
            z = _z(births / args.trials, p, args.trials)
            ks = sps.kstest(dts, "expon", args=(0, 1 / rate))
            rows.append({"N": pinned, "birth_formula": p, "birth_empirical": births / args.trials, "z": z,
                         "ks_statistic": float(ks.statistic), "ks_pvalue": float(ks.pvalue),
                         "passed": bool(abs(z) < 3 and ks.pvalue > 0.01)})
        out = {"rows": rows, "passed": all(r["passed"] for r in rows)}
    else:  # concentration
        n = args.n
        params = PoissonChurnParams.canonical(n)
        count = harness.resolve_rule(args.events, n)
        sizes = [population_after(params, count, rng.child(i + 1)) for i in range(args.trials)]
        inside = sum(1 for s in sizes if 0.9 * n <= s <= 1.1 * n)
        out = {"events": count, "trials": args.trials, "inside": inside,
               "min": min(sizes), "max": max(sizes),
               "passed": inside >= math.ceil(0.99 * args.trials)}
    out.update(schema=SCHEMA_VERSION, check=check, seed=args.seed)
    _emit(out, args.out)
    if not out["passed"]:
        raise CheckFailed(f"oracle {check} failed")


def _configs_from_file(path: str):
    try:
        with open(path) as fp:
            obj = json.load(fp)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if isinstance(obj, dict) and "preset" in obj:
        if obj["preset"] not in harness.PRESETS:
            raise UsageError(f"unknown preset {obj['preset']!r}")
        return obj["preset"], obj.get("overrides", {})
    items = obj if isinstance(obj, list) else [obj]
    try:
        return None, [harness.ExperimentConfig.from_dict(c) for c in items]
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc


def cmd_experiment(args) -> None:
    preset, payload = _configs_from_file(args.config)
    if preset is not None:
        if args.output:
            payload = {**payload, "output": args.output}
        try:
            result = harness.run_preset(preset, workers=args.workers, **payload)
        except TypeError as exc:
            raise UsageError(f"bad preset overrides: {exc}") from exc
    else:
        runs = []
        for cfg in payload:
            if args.output:
                suffix = "" if len(payload) == 1 else f"-{cfg.name}"
                cfg.output = f"{args.output}{suffix}"
            runs.append(harness.run_and_save(cfg, workers=args.workers))
        result = {"schema": SCHEMA_VERSION, "runs": runs,
                  "passed": all(r.get("passed", True) for r in runs)}
    _emit(result)
    if not result["passed"]:
        raise CheckFailed("experiment thresholds not met")


def cmd_replay(args) -> None:
    traj = _load(args.traj)
    rep = Replayer(traj, check=args.assert_invariants)
    try:
        st = rep.advance_to(traj.horizon)
    except InvariantError as exc:
        _emit({"schema": SCHEMA_VERSION, "invariants": "violated", "error": str(exc)})
        raise CheckFailed(str(exc)) from exc
    _emit({
        "schema": SCHEMA_VERSION,
        "model": traj.params.kind.value,
        "events": len(traj.events),
        "horizon": traj.horizon,
        "population": len(st.alive),
        "invariants": "checked" if args.assert_invariants else "not checked",
    })


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="churnsim", description="Dynamic random graphs under churn: simulation and flooding.")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a trajectory as JSONL")
    s.add_argument("--model", required=True, choices=[k.value for k in ModelKind])
    s.add_argument("--n", type=int)
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--mu", type=float)
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--horizon", type=int, required=True, help="rounds (streaming) or churn events (Poisson)")
    s.add_argument("--regen-before-birth", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("flood", help="run a flooding process over a stored trajectory")
    f.add_argument("--traj", required=True)
    f.add_argument("--variant", choices=["sync", "async", "discretized"])
    f.add_argument("--t0", required=True, help='rule such as "2n" or "7nlogn", or a time')
    f.add_argument("--source", default="born-at-t0")
    f.add_argument("--max-steps", help='step cap, number or rule such as "50logn"')
    f.add_argument("--out")
    f.set_defaults(func=cmd_flood)

    for name, fn, helptext in (("expansion", cmd_expansion, "vertex expansion of a snapshot"),
                               ("stats", cmd_stats, "degree statistics and isolated nodes")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--traj")
        e.add_argument("--snapshot")
        e.add_argument("--at", type=float, help="snapshot time (default: trajectory horizon)")
        e.add_argument("--out")
        if name == "expansion":
            e.add_argument("--method", choices=["exact", "sampled"], default="sampled")
            e.add_argument("--min-size", type=int, default=1)
            e.add_argument("--max-size", type=int)
            e.add_argument("--samples", type=int, default=10_000)
            e.add_argument("--seed", type=int, default=0)
        e.set_defaults(func=fn)

    o = sub.add_parser("oracle", help="compare a closed form with Monte-Carlo estimates")
    o.add_argument("--check", required=True,
                   choices=["edge-prob-sdgr", "edge-prob-pdgr", "jump-chain", "concentration"])
    o.add_argument("--n", type=int, default=1000)
    o.add_argument("--d", type=int, default=3)
    o.add_argument("--k", type=int, default=0, help="deaths witnessed (streaming) or age in events (Poisson)")
    o.add_argument("--trials", type=int, default=10**6)
    o.add_argument("--lambda", dest="lam", type=float, default=1.0)
    o.add_argument("--mu", type=float, default=1e-3)
    o.add_argument("--pinned", type=int, nargs="+", default=[900, 1000, 1100])
    o.add_argument("--events", default="20nlogn")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out")
    o.set_defaults(func=cmd_oracle)

    x = sub.add_parser("experiment", help="run a multi-trial experiment from a JSON config")
    x.add_argument("--config", required=True)
    x.add_argument("--workers", type=int, default=1)
    x.add_argument("--output", help="path prefix for the records CSV and summary JSON")
    x.set_defaults(func=cmd_experiment)

    r = sub.add_parser("replay", help="replay a trajectory")
    r.add_argument("--traj", required=True)
    r.add_argument("--assert-invariants", action="store_true")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return 1
    except CheckFailed as exc:
        log.error("%s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
