"""Batch experiments: a JSON plan in, a per-run CSV and an aggregate CSV out.

Plan document (paths are resolved against the plan's own directory)::

    {
      "network": "net.json",
      "method": "saa",                     # or a list of methods
      "sweep": {"n": [5, 10, 20]},         # k / n1 / n2 for subselect
      "seeds": 50,                         # a count (0..49) or an explicit list
      "output": "runs.csv",
      "aggregate_output": "runs_aggregate.csv",   # optional
      "true_value": "auto",                # auto | exact | mc | none
      "true_mc_n": 10000, "true_mc_seed": 0,
      "enumeration_cap": 12
    }

Methods ``exact``, ``deterministic`` and ``mean`` ignore seeds and emit one
row each.  ``evaluate`` needs an ``"allocation"`` file and scores it with
``mc_evaluate`` for every ``n`` and seed.  ``bounds`` needs no network; its
sweep lists BoundQuery fields and it writes its own column set.

``true_objective`` is the value of each run's allocation under the original
network: exact enumeration, a shared-seed Monte-Carlo estimate, or blank
(``true_value`` auto means exact while ``k <= enumeration_cap`` and blank
otherwise).  ``std_error`` holds the standard error of ``objective`` for
``evaluate`` rows and of ``true_objective`` for every other method.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

from .bounds import BoundQuery, DegenerateBoundWarning, theorem1_bound, theorem2_bound, theorem3_bound
from .network import NetworkFormatError, NetworkSpec, load_network, require_valid
from .saa import deterministic_plan, mean_plan, saa_optimize, subselect_optimize
from .twostage import Allocation, exact_evaluate, exact_optimize, load_allocation, mc_evaluate

RUN_COLUMNS = (
    "method",
    "n",
    "k_candidates",
    "n1",
    "n2",
    "seed",
    "objective",
    "true_objective",
    "std_error",
    "n_distinct_scenarios",
    "wall_time_ms",
)
AGGREGATE_COLUMNS = (
    "method",
    "n",
    "k_candidates",
    "n1",
    "n2",
    "runs",
    "objective_mean",
    "objective_min",
    "objective_max",
    "true_objective_mean",
    "true_objective_min",
    "true_objective_max",
    "true_objective_sem",
    "wall_time_ms_mean",
)
BOUND_FIELDS = ("q_d", "epsilon", "delta", "x_space_size", "n_dim", "d_box", "lipschitz_K")
BOUND_COLUMNS = ("theorem",) + BOUND_FIELDS + ("n_required",)

METHODS = ("exact", "saa", "subselect", "deterministic", "mean", "evaluate", "bounds")
SEEDLESS = ("exact", "deterministic", "mean")
TRUE_MODES = ("auto", "exact", "mc", "none")


class PlanError(NetworkFormatError):
    """Plan document is malformed or inconsistent."""


@dataclass(frozen=True)
class ExperimentPlan:
    methods: tuple[str, ...]
    sweep: dict
    seeds: tuple[int, ...]
    output_path: Path
    aggregate_path: Path
    network_path: Path | None = None
    allocation_path: Path | None = None
    true_value: str = "auto"
    true_mc_n: int = 10_000
    true_mc_seed: int = 0
    enumeration_cap: int = 12


def _int_list(values, name: str, allow_none: bool = False) -> tuple:
    if not isinstance(values, list) or not values:
        raise PlanError(f"sweep '{name}' must be a non-empty list")
    out = []
    for v in values:
        if v is None and allow_none:
            out.append(None)
        elif isinstance(v, int) and not isinstance(v, bool) and v >= 1:
            out.append(v)
        else:
            raise PlanError(f"sweep '{name}' entries must be positive integers, got {v!r}")
    return tuple(out)


def parse_plan(doc, base_dir: Path = Path(".")) -> ExperimentPlan:
    if not isinstance(doc, dict):
        raise PlanError("plan must be a JSON object")
    method = doc.get("method")
    methods = tuple(method) if isinstance(method, list) else (method,)
    if not methods or any(m not in METHODS for m in methods):
        raise PlanError(f"method must be one of {', '.join(METHODS)} (or a list of them), got {method!r}")
    if "bounds" in methods and len(methods) > 1:
        raise PlanError("the bounds method has its own output schema and cannot be mixed")

    sweep = doc.get("sweep", {})
    if not isinstance(sweep, dict):
        raise PlanError("sweep must be an object")
    needs = {"saa": ("n",), "evaluate": ("n",), "subselect": ("k", "n1")}
    for m in methods:
        for key in needs.get(m, ()):
            if key not in sweep:
                raise PlanError(f"method {m} needs sweep '{key}'")
    clean = {}
    if "bounds" in methods:
        for key in ("q_d", "epsilon", "delta"):
            if key not in sweep:
                raise PlanError(f"bounds sweep needs '{key}'")
        for key, vals in sweep.items():
            if key not in BOUND_FIELDS:
                raise PlanError(f"unknown bounds sweep key {key!r}")
            if not isinstance(vals, list) or not vals:
                raise PlanError(f"sweep '{key}' must be a non-empty list")
            clean[key] = tuple(vals)
    else:
        for key, vals in sweep.items():
            if key not in ("n", "k", "n1", "n2"):
                raise PlanError(f"unknown sweep key {key!r}")
            clean[key] = _int_list(vals, key, allow_none=key == "n2")

    seeds = doc.get("seeds", 1)
    if isinstance(seeds, int) and not isinstance(seeds, bool):
        if seeds < 1:
            raise PlanError("seed count must be positive")
        seeds = tuple(range(seeds))
    elif isinstance(seeds, list) and seeds and all(isinstance(s, int) and s >= 0 for s in seeds):
        seeds = tuple(seeds)
        if len(set(seeds)) != len(seeds):
            raise PlanError("seeds must be distinct")
    else:
        raise PlanError("seeds must be a positive count or a non-empty list of nonnegative integers")

    if "output" not in doc:
        raise PlanError("plan needs an 'output' path")
    out = base_dir / doc["output"]
    agg = base_dir / doc["aggregate_output"] if "aggregate_output" in doc else out.with_name(out.stem + "_aggregate.csv")

    net_path = None
    if "bounds" not in methods:
        if "network" not in doc:
            raise PlanError("plan needs a 'network' path")
        net_path = base_dir / doc["network"]
    alloc_path = None
    if "evaluate" in methods:
        if "allocation" not in doc:
            raise PlanError("method evaluate needs an 'allocation' path")
        alloc_path = base_dir / doc["allocation"]

    true_value = doc.get("true_value", "auto")
    if true_value not in TRUE_MODES:
        raise PlanError(f"true_value must be one of {', '.join(TRUE_MODES)}")
    try:
        return ExperimentPlan(
            methods=methods,
            sweep=clean,
            seeds=seeds,
            output_path=out,
            aggregate_path=agg,
            network_path=net_path,
            allocation_path=alloc_path,
            true_value=true_value,
            true_mc_n=int(doc.get("true_mc_n", 10_000)),
            true_mc_seed=int(doc.get("true_mc_seed", 0)),
            enumeration_cap=int(doc.get("enumeration_cap", 12)),
        )
    except (TypeError, ValueError) as exc:
        raise PlanError(f"bad numeric plan field: {exc}") from exc


def load_plan(path: str | Path) -> ExperimentPlan:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise PlanError(f"{path}: {exc}") from exc
    return parse_plan(doc, path.parent)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".12g")
    return str(v)


class _TrueValue:
    """Per-run cache of ``Q(x)`` keyed by the allocation vector."""

    def __init__(self, net: NetworkSpec, plan: ExperimentPlan):
        mode = plan.true_value
        if mode == "auto":
            mode = "exact" if net.k <= plan.enumeration_cap else "none"
        self.mode, self.net, self.plan = mode, net, plan
        self.cache: dict[bytes, tuple[float, float]] = {}

    def __call__(self, x: Allocation) -> tuple[float | None, float | None]:
        if self.mode == "none":
            return None, None
        key = x.as_vector(self.net).tobytes()
        if key not in self.cache:
            if self.mode == "exact":
                res = exact_evaluate(self.net, x, cap=max(self.plan.enumeration_cap, self.net.k))
            else:
                res = mc_evaluate(self.net, x, self.plan.true_mc_n, self.plan.true_mc_seed)
            self.cache[key] = (res.estimate, res.std_error)
        return self.cache[key]


def _cells(plan: ExperimentPlan, method: str):
    """Yield ``(n, k, n1, n2)`` parameter points in plan order."""
    sw = plan.sweep
    if method in ("saa", "evaluate"):
        for n in sw["n"]:
            yield n, None, None, None
    elif method == "subselect":
        for k, n1, n2 in itertools.product(sw["k"], sw["n1"], sw.get("n2", (None,))):
            yield None, k, n1, 2 * n1 if n2 is None else n2
    else:
        yield None, None, None, None


def run_rows(plan: ExperimentPlan, net: NetworkSpec, x_eval: Allocation | None = None) -> list[dict]:
    truth = _TrueValue(net, plan)
    rows = []
    for method in plan.methods:
        for n, k, n1, n2 in _cells(plan, method):
            for seed in (None,) if method in SEEDLESS else plan.seeds:
                t0 = time.perf_counter()
                se = None
                if method == "exact":
                    x, obj = exact_optimize(net, cap=max(plan.enumeration_cap, net.k))
                    distinct = 2**net.k
                elif method == "deterministic":
                    x, obj = deterministic_plan(net)
                    distinct = 1
                elif method == "mean":
                    x, obj = mean_plan(net)
                    distinct = 1
                elif method == "saa":
                    res = saa_optimize(net, n, seed)
                    x, obj, distinct = res.allocation, res.saa_objective, res.n_distinct
                elif method == "subselect":
                    sub = subselect_optimize(net, k, n1, n2, seed)
                    x, obj, distinct = sub.allocation, sub.saa_objective, sub.best.n_distinct
                else:  # evaluate
                    ev = mc_evaluate(net, x_eval, n, seed)
                    x, obj, se, distinct = x_eval, ev.estimate, ev.std_error, ev.n_distinct
                elapsed = round((time.perf_counter() - t0) * 1e3, 3)
                true_obj, true_se = truth(x)
                rows.append(
                    dict(
                        method=method,
                        n=n,
                        k_candidates=k,
                        n1=n1,
                        n2=n2,
                        seed=seed,
                        objective=float(obj),
                        true_objective=true_obj,
                        std_error=se if method == "evaluate" else true_se,
                        n_distinct_scenarios=distinct,
                        wall_time_ms=elapsed,
                    )
                )
    return rows


def _stats(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None, None, None
    mean = math.fsum(vals) / len(vals)
    sem = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1) / len(vals)) if len(vals) > 1 else 0.0
    return mean, min(vals), max(vals), sem


def aggregate_rows(rows: list[dict]) -> list[dict]:
    """Mean / min / max per parameter point, in order of first appearance."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r[c] for c in AGGREGATE_COLUMNS[:5]), []).append(r)
    out = []
    for key, members in groups.items():
        o_mean, o_min, o_max, _ = _stats(r["objective"] for r in members)
        t_mean, t_min, t_max, t_sem = _stats(r["true_objective"] for r in members)
        w_mean = _stats(r["wall_time_ms"] for r in members)[0]
        out.append(
            dict(
                zip(AGGREGATE_COLUMNS[:5], key),
                runs=len(members),
                objective_mean=o_mean,
                objective_min=o_min,
                objective_max=o_max,
                true_objective_mean=t_mean,
                true_objective_min=t_min,
                true_objective_max=t_max,
                true_objective_sem=t_sem,
                wall_time_ms_mean=w_mean,
            )
        )
    return out


def bound_rows(plan: ExperimentPlan) -> list[dict]:
    keys = [f for f in BOUND_FIELDS if f in plan.sweep]
    rows = []
    for combo in itertools.product(*(plan.sweep[k] for k in keys)):
        params = dict(zip(keys, combo))
        q = BoundQuery(**params)
        calcs = [("theorem1", theorem1_bound)]
        if q.x_space_size is not None:
            calcs.append(("theorem2", theorem2_bound))
        if None not in (q.n_dim, q.d_box, q.lipschitz_K):
            calcs.append(("theorem3", theorem3_bound))
        for name, fn in calcs:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegenerateBoundWarning)
                n_req = fn(q)
            rows.append(dict({f: params.get(f) for f in BOUND_FIELDS}, theorem=name, n_required=n_req))
    return rows


def write_csv(path: Path, columns, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def run_experiment(plan: ExperimentPlan) -> tuple[list[dict], list[dict]]:
    """Execute ``plan``, write its CSV file(s) and return ``(rows, aggregate)``."""
    if plan.methods == ("bounds",):
        rows = bound_rows(plan)
        write_csv(plan.output_path, BOUND_COLUMNS, rows)
        return rows, []
    net = load_network(plan.network_path)
    require_valid(net)
    x_eval = load_allocation(plan.allocation_path) if plan.allocation_path else None
    rows = run_rows(plan, net, x_eval)
    agg = aggregate_rows(rows)
    write_csv(plan.output_path, RUN_COLUMNS, rows)
    write_csv(plan.aggregate_path, AGGREGATE_COLUMNS, agg)
    return rows, agg
