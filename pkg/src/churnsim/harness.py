"""Multi-trial experiments: seeding, metric evaluation, aggregation, files.

Trial ``i`` uses seed ``base_seed ^ i`` for its trajectory and the child
stream 1 of that seed for any sampling done by metrics, so a trial's
record does not depend on which other trials run or in what order.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
from scipy import stats

from . import metrics as M
from .engine import Simulator
from .flooding import SourceError, flood
from .model import SCHEMA_VERSION, ModelKind, ModelParams, Snapshot, Trajectory, snapshot_at
from .onionskin import onion_skin_run
from .rng import RandomStream, trial_seed

log = logging.getLogger(__name__)

_RULE = re.compile(r"^(\d+(?:\.\d+)?)?\*?(n)?\*?(logn|lnn)?$")


def resolve_rule(rule: str | int | float, n: float) -> int:
    """Evaluate ``"2n"``, ``"7nlogn"`` or ``"50logn"`` (natural log) to an integer, rounding up."""
    if isinstance(rule, (int, np.integer)):
        return int(rule)
    if isinstance(rule, float):
        return math.ceil(rule)
    text = str(rule).replace(" ", "").lower()
    m = _RULE.match(text)
    if not m or not text:
        raise ValueError(f"cannot parse rule {rule!r}")
    coef = float(m.group(1)) if m.group(1) else 1.0
    value = coef * (n if m.group(2) else 1.0) * (math.log(n) if m.group(3) else 1.0)
    return math.ceil(value - 1e-9)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    name: str
    model: ModelKind
    d: int
    n: int | None = None
    lam: float | None = None
    mu: float | None = None
    t0: str | int = "2n"
    trials: int = 1
    base_seed: int = 0
    metrics: list = field(default_factory=list)
    thresholds: list = field(default_factory=list)
    claim: str = ""
    output: str | None = None
    regen_before_birth: bool = False

    def __post_init__(self):
        self.model = ModelKind(self.model)
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        for spec in self.metrics:
            name = spec if isinstance(spec, str) else spec.get("name")
            if name not in METRICS:
                raise ConfigError(f"unknown metric {name!r}")
        cols = set(self.columns)
        for th in self.thresholds:
            if th.get("metric") not in cols:
                raise ConfigError(f"threshold refers to unknown metric {th.get('metric')!r}")
            if th.get("op", ">=") not in _OPS:
                raise ConfigError(f"unknown threshold operator {th.get('op')!r}")
        try:
            self.params
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.model, d=self.d, n=self.n, lam=self.lam, mu=self.mu,
                           regen_before_birth=self.regen_before_birth)

    @property
    def metric_specs(self) -> list[dict]:
        return [{"name": s} if isinstance(s, str) else dict(s) for s in self.metrics]

    @property
    def columns(self) -> list[str]:
        return [s.get("as", s["name"]) for s in self.metric_specs]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["model"] = self.model.value
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> ExperimentConfig:
        obj = dict(obj)
        if "lambda" in obj:
            obj["lam"] = obj.pop("lambda")
        known = set(cls.__dataclass_fields__)
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class TrialRecord:
    trial: int
    seed: int
    values: dict[str, Any]
    errors: dict[str, str] = field(default_factory=dict)


class TrialContext:
    """Lazily built trajectory and per-trial caches shared by the metrics."""

    def __init__(self, config: ExperimentConfig, trial: int):
        self.config = config
        self.params = config.params
        self.trial = trial
        self.seed = trial_seed(config.base_seed, trial)
        self.n = self.params.nominal_n
        self.traj, self.t0, self.source = prepare_trajectory(self.params, config.t0, self.seed)
        self._snapshot: Snapshot | None = None
        self._floods: dict = {}

    @property
    def snapshot(self) -> Snapshot:
        if self._snapshot is None:
            self._snapshot = snapshot_at(self.traj, self.t0)
        return self._snapshot

    def sampler(self) -> RandomStream:
        return RandomStream(self.seed, stream=1)

    def flood(self, variant: str | None = None, **kw):
        variant = variant or ("sync" if self.params.kind.streaming else "discretized")
        key = (variant, tuple(sorted(kw.items())))
        if key not in self._floods:
            self._floods[key] = flood(self.traj, self.t0, self.source, variant, **kw)
        return self._floods[key]

    def steps(self, rule) -> int:
        return resolve_rule(rule, self.n)


def prepare_trajectory(params: ModelParams, t0_rule, seed: int) -> tuple[Trajectory, float, int]:
    """Run silently up to the flooding start and return a live trajectory.

    Streaming: ``t0`` is the round given by the rule and the source is the
    node joining then. Poisson: the rule gives a churn-event index r0 and the
    source is the first node born at or after event r0; ``t0`` is its birth
    time.
    """
    sim = Simulator(params, RandomStream(seed))
    r0 = resolve_rule(t0_rule, params.nominal_n)
    if r0 < 1:
        raise ConfigError("t0 must be at least 1")
    sim.run_events(r0 - 1, record=False)
    if params.kind.streaming:
        base = sim.state.copy()
        first = sim.step()
        return sim.live_trajectory(base=base, initial=first), r0, r0
    while True:
        jump = sim.draw()
        if jump.birth:
            break
        sim.apply_jump(jump)
    base = sim.state.copy()
    first = sim.apply_jump(jump)
    return sim.live_trajectory(base=base, initial=first), first[0].t, first[0].id


# -- metrics ---------------------------------------------------------------

def _population(ctx, **_):
    return len(ctx.snapshot)


def _isolated_count(ctx, **_):
    return M.isolated_count(ctx.snapshot)


def _isolated_fraction(ctx, **_):
    snap = ctx.snapshot
    return M.isolated_count(snap) / len(snap)


def _isolated_forever_fraction(ctx, **_):
    return len(M.isolated_forever(ctx.traj, ctx.t0)) / len(ctx.snapshot)


def _mean_degree(ctx, **_):
    return M.degree_stats(ctx.snapshot).mean


def _max_degree(ctx, **_):
    return M.degree_stats(ctx.snapshot).max


def _h_out_sampled(ctx, samples=10_000, min_size=1, min_frac=None, max_frac=None, **_):
    snap = ctx.snapshot
    m = len(snap)
    lo = max(min_size, math.ceil(min_frac * m)) if min_frac is not None else min_size
    hi = m // 2 if max_frac is None else int(max_frac * m)
    return M.h_out_sampled(snap, lo, hi, samples, ctx.sampler()).h_out


def _flood_time(ctx, variant=None, max_steps="50logn", **_):
    tr = ctx.flood(variant, max_steps=ctx.steps(max_steps))
    return tr.flooding_time


def _flood_completed(ctx, variant=None, max_steps="50logn", **_):
    return ctx.flood(variant, max_steps=ctx.steps(max_steps)).completed


def _informed_fraction(ctx, steps="10logn", variant=None, **_):
    k = ctx.steps(steps)
    tr = ctx.flood(variant, max_steps=k, stop_on_completion=False)
    s = tr.samples[-1]
    return s.informed / s.alive


def _max_informed_fraction(ctx, steps="10logn", variant=None, **_):
    k = ctx.steps(steps)
    tr = ctx.flood(variant, max_steps=k, stop_on_completion=False)
    return max(s.informed / s.alive for s in tr.samples)


def _stalled(ctx, variant=None, **_):
    limit = ctx.params.d + 1
    tr = ctx.flood(variant, stop_above=limit, stop_on_completion=False)
    return tr.max_informed() <= limit


def _onion_violations(ctx, reading="age", **_):
    layers = onion_skin_run(ctx.traj, int(ctx.t0), ctx.source, reading=reading)
    window = math.ceil(math.log(ctx.params.n))
    phases = [k for k in range(layers.phases) if 2 * k + 1 <= window]
    if not phases:
        return 0
    tr = ctx.flood("sync", max_steps=2 * phases[-1] + 1, keep_sets=True, stop_on_completion=False)
    bad = 0
    for k in phases:
        informed = tr.sets[min(2 * k + 1, len(tr.sets) - 1)]
        bad += len(layers.informed(k) - informed)
    return bad


METRICS: dict[str, Callable] = {
    "population": _population,
    "isolated_count": _isolated_count,
    "isolated_fraction": _isolated_fraction,
    "isolated_forever_fraction": _isolated_forever_fraction,
    "mean_degree": _mean_degree,
    "max_degree": _max_degree,
    "h_out_sampled": _h_out_sampled,
    "flood_time": _flood_time,
    "flood_completed": _flood_completed,
    "informed_fraction": _informed_fraction,
    "max_informed_fraction": _max_informed_fraction,
    "stalled": _stalled,
    "onion_violations": _onion_violations,
}


def run_trial(config: ExperimentConfig, trial: int) -> TrialRecord:
    seed = trial_seed(config.base_seed, trial)
    values: dict[str, Any] = {}
    errors: dict[str, str] = {}
    try:
        ctx = TrialContext(config, trial)
    except (SourceError, ValueError) as exc:
        for col in config.columns:
            values[col] = None
            errors[col] = f"trajectory: {exc}"
        return TrialRecord(trial, seed, values, errors)
    for spec, col in zip(config.metric_specs, config.columns):
        fn = METRICS[spec["name"]]
        kw = {k: v for k, v in spec.items() if k not in ("name", "as")}
        try:
            values[col] = fn(ctx, **kw)
        except Exception as exc:  # metric failures are data, not fatal
            log.warning("trial %d metric %s failed: %s", trial, col, exc)
            values[col] = None
            errors[col] = f"{type(exc).__name__}: {exc}"
    ctx.traj.close()
    return TrialRecord(trial, seed, values, errors)


def run_experiment(config: ExperimentConfig, workers: int = 1) -> list[TrialRecord]:
    trials = range(config.trials)
    if workers <= 1:
        return [run_trial(config, i) for i in trials]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda i: run_trial(config, i), trials))


# -- aggregation -----------------------------------------------------------

def wilson_interval(successes: int, total: int, confidence: float = 0.99) -> tuple[float, float]:
    if total <= 0:
        raise ValueError("Wilson interval needs at least one observation")
    z = stats.norm.ppf(0.5 + confidence / 2)
    p = successes / total
    denom = 1 + z * z / total
    center = (p + z * z / (2 * total)) / denom
    half = z * math.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / denom
    return max(0.0, center - half), min(1.0, center + half)


_OPS = {
    ">=": lambda a, b: a >= b,
    ">": lambda a, b: a > b,
    "<=": lambda a, b: a <= b,
    "<": lambda a, b: a < b,
    "==": lambda a, b: a == b,
}


def _numeric_summary(vals: list[float]) -> dict:
    a = np.asarray(vals, dtype=float)
    return {
        "count": int(a.size),
        "mean": float(a.mean()),
        "median": float(np.median(a)),
        "q05": float(np.quantile(a, 0.05)),
        "q95": float(np.quantile(a, 0.95)),
        "min": float(a.min()),
        "max": float(a.max()),
    }


def aggregate(records: list[TrialRecord], thresholds: list[dict] | None = None) -> dict:
    if not records:
        raise ValueError("aggregate needs at least one record")
    columns = list(records[0].values)
    out: dict[str, Any] = {"schema": SCHEMA_VERSION, "trials": len(records), "metrics": {}}
    for col in columns:
        vals = [r.values.get(col) for r in records]
        present = [v for v in vals if v is not None]
        entry: dict[str, Any] = {"missing": len(vals) - len(present)}
        if present and all(isinstance(v, (bool, np.bool_)) for v in present):
            k = sum(bool(v) for v in present)
            lo, hi = wilson_interval(k, len(present))
            entry.update(kind="proportion", successes=k, total=len(present),
                         proportion=k / len(present), wilson99=[lo, hi])
        elif present:
            entry.update(kind="numeric", **_numeric_summary(present))
        if col.startswith("flood_time"):
            entry["completion_rate"] = len(present) / len(vals)
            entry["over_completers_only"] = True
        out["metrics"][col] = entry
    if thresholds:
        results = []
        for th in thresholds:
            col, op, value = th["metric"], th.get("op", ">="), th["value"]
            vals = [r.values.get(col) for r in records]
            ok = sum(1 for v in vals if v is not None and _OPS[op](v, value))
            need = th.get("min_successes")
            if need is None:
                need = math.ceil(th.get("min_rate", 1.0) * len(records) - 1e-9)
            results.append({**th, "successes": ok, "required": need, "passed": ok >= need})
        out["thresholds"] = results
        out["passed"] = all(r["passed"] for r in results)
    return out


# -- files -----------------------------------------------------------------

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "True" if v else "False"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _parse(s: str):
    if s == "":
        return None
    if s in ("True", "False"):
        return s == "True"
    try:
        return int(s)
    except ValueError:
        return float(s)


def write_records_csv(records: list[TrialRecord], path) -> None:
    columns = list(records[0].values) if records else []
    with open(path, "w", newline="") as fp:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(["trial", "seed", *columns, "notes", "schema_version"])
        for r in records:
            notes = "; ".join(f"{k}: {v}" for k, v in sorted(r.errors.items()))
            w.writerow([r.trial, r.seed, *(_cell(r.values.get(c)) for c in columns), notes, SCHEMA_VERSION])


def read_records_csv(path) -> list[TrialRecord]:
    with open(path, newline="") as fp:
        rows = list(csv.reader(fp))
    header = rows[0]
    columns = header[2:-2]
    out = []
    for row in rows[1:]:
        values = {c: _parse(x) for c, x in zip(columns, row[2:-2])}
        errors = {}
        if row[-2]:
            for part in row[-2].split("; "):
                k, _, v = part.partition(": ")
                errors[k] = v
        out.append(TrialRecord(int(row[0]), int(row[1]), values, errors))
    return out


def json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"{type(o).__name__} is not JSON serializable")


def write_summary(summary: dict, path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True, default=json_default) + "\n")


def run_and_save(config: ExperimentConfig, workers: int = 1) -> dict:
    records = run_experiment(config, workers=workers)
    summary = aggregate(records, config.thresholds)
    summary["experiment"] = config.name
    summary["claim"] = config.claim
    summary["config"] = {k: v for k, v in config.to_dict().items() if k != "output"}
    if config.output:
        write_records_csv(records, f"{config.output}.csv")
        write_summary(summary, f"{config.output}.summary.json")
    return summary


# -- predefined experiments ------------------------------------------------

@dataclass
class Preset:
    name: str
    claim: str
    configs: Callable[..., list[ExperimentConfig]]
    check: Callable[[list[dict]], dict] | None = None


def _scaling_configs(trials: int = 100, base_seed: int = 2024, sizes=(256, 1024, 4096), d: int = 21,
                     output: str | None = None) -> list[ExperimentConfig]:
    return [
        ExperimentConfig(
            name=f"sdgr-floodtime-n{n}", model=ModelKind.SDGR, n=n, d=d, t0="2n", trials=trials,
            base_seed=base_seed, metrics=["flood_time", "flood_completed"],
            thresholds=[{"metric": "flood_completed", "op": "==", "value": True, "min_rate": 0.95}],
            claim="flooding over streaming churn with regeneration completes in O(log n) rounds",
            output=None if output is None else f"{output}-n{n}",
        )
        for n in sizes
    ]


def scaling_fit(sizes: list[float], medians: list[float]) -> dict:
    """Least-squares fit of ``a + b ln n`` with per-point relative residuals."""
    x = np.log(np.asarray(sizes, dtype=float))
    y = np.asarray(medians, dtype=float)
    b, a = np.polyfit(x, y, 1)
    resid = np.abs(y - (a + b * x)) / y
    return {"a": float(a), "b": float(b), "relative_residuals": resid.tolist()}


def _scaling_check(summaries: list[dict]) -> dict:
    sizes = [s["config"]["n"] for s in summaries]
    medians = [s["metrics"]["flood_time"].get("median") for s in summaries]
    if any(m is None for m in medians):
        return {"passed": False, "reason": "a size had no completed trial"}
    fit = scaling_fit(sizes, medians)
    ratio = medians[-1] / medians[0]
    increasing = all(a <= b for a, b in zip(medians, medians[1:])) and medians[-1] > medians[0]
    return {
        "sizes": sizes, "medians": medians, "ratio": ratio, "fit": fit,
        "medians_increasing": increasing,
        "passed": bool(increasing and ratio <= 2.2 and max(fit["relative_residuals"]) <= 0.25),
    }


PRESETS: dict[str, Preset] = {
    "sdgr-floodtime-scaling": Preset(
        "sdgr-floodtime-scaling",
        "median flooding time over streaming churn with regeneration grows like log n",
        _scaling_configs,
        _scaling_check,
    ),
}


def run_preset(name: str, workers: int = 1, **overrides) -> dict:
    preset = PRESETS[name]
    summaries = [run_and_save(c, workers=workers) for c in preset.configs(**overrides)]
    out = {"schema": SCHEMA_VERSION, "preset": name, "claim": preset.claim, "runs": summaries}
    passed = all(s.get("passed", True) for s in summaries)
    if preset.check is not None:
        out["suite"] = preset.check(summaries)
        passed = passed and out["suite"]["passed"]
    out["passed"] = passed
    return out
