"""Two-stage allocation values: first-stage revenue, recourse LPs and expectations.

First stage: each producer ``j`` is bought ``x_j^in`` units at its stage-1
price, each consumer ``i`` is sold ``x_i^out`` units at its stage-1 price.
Second stage, once the failure configuration ``s`` is known: route flow
through the surviving edges to deliver ``y^in <= x^in`` / ``y^out <= x^out``.
Undelivered purchases are refunded at the producer's stage-2 price and
undelivered sales cost the consumer's stage-2 price, so the recourse value

    f2(x, s) = max_y  sum_j (x_j^in - y_j^in) r_j^II,in - sum_i (x_i^out - y_i^out) r_i^II,out

is a linear program.  ``Q(x) = f1(x) + E_s f2(x, s)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .lp import EQ, LE, LinearProgram, NumericalFailure, solve_lp
from .network import (
    CONSUMER,
    DEFAULT_ENUMERATION_CAP,
    EXPLICIT,
    PRODUCER,
    REGULAR,
    FailureScenario,
    NetworkError,
    NetworkFormatError,
    NetworkSpec,
    ScenarioSet,
    _unique_rows,
    all_up_scenarios,
    enumerate_scenarios,
    sample_bits,
)

ALLOCATION_TOL = 1e-9
DE_COLUMN_LIMIT = 1_000_000


class AllocationError(NetworkError):
    """Allocation names unknown nodes or breaks a node capacity."""


class ProblemTooLarge(NetworkError):
    """Deterministic equivalent would exceed the column budget."""


@dataclass(frozen=True, eq=False)
class Allocation:
    producer_amounts: Mapping[str, float] = field(default_factory=dict)
    consumer_amounts: Mapping[str, float] = field(default_factory=dict)

    def as_vector(self, net: NetworkSpec) -> np.ndarray:
        """Amounts in network order: producers first, then consumers."""
        check_allocation(net, self)
        v = [float(self.producer_amounts.get(n.id, 0.0)) for n in net.producers]
        v += [float(self.consumer_amounts.get(n.id, 0.0)) for n in net.consumers]
        return np.array(v)

    @classmethod
    def from_vector(cls, net: NetworkSpec, vec: Sequence[float]) -> "Allocation":
        P = len(net.producers)
        return cls(
            {n.id: float(v) for n, v in zip(net.producers, vec[:P])},
            {n.id: float(v) for n, v in zip(net.consumers, vec[P:])},
        )

    @classmethod
    def zeros(cls, net: NetworkSpec) -> "Allocation":
        return cls.from_vector(net, np.zeros(len(net.producers) + len(net.consumers)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Allocation):
            return NotImplemented
        return dict(self.producer_amounts) == dict(other.producer_amounts) and dict(
            self.consumer_amounts
        ) == dict(other.consumer_amounts)

    def to_dict(self) -> dict:
        return {
            "producers": {k: float(v) for k, v in self.producer_amounts.items()},
            "consumers": {k: float(v) for k, v in self.consumer_amounts.items()},
        }

    @classmethod
    def from_dict(cls, doc) -> "Allocation":
        try:
            return cls(
                {str(k): float(v) for k, v in doc.get("producers", {}).items()},
                {str(k): float(v) for k, v in doc.get("consumers", {}).items()},
            )
        except (AttributeError, TypeError, ValueError) as exc:
            raise NetworkFormatError(f"malformed allocation document: {exc!r}") from exc


def save_allocation(x: Allocation, path: str | Path) -> None:
    Path(path).write_text(json.dumps(x.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_allocation(path: str | Path) -> Allocation:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise NetworkFormatError(f"{path}: top level must be an object")
    return Allocation.from_dict(doc)


def check_allocation(net: NetworkSpec, x: Allocation) -> None:
    for amounts, nodes, label in (
        (x.producer_amounts, net.producers, PRODUCER),
        (x.consumer_amounts, net.consumers, CONSUMER),
    ):
        caps = {n.id: n.capacity for n in nodes}
        for nid, v in amounts.items():
            if nid not in caps:
                raise AllocationError(f"{nid!r} is not a {label} of this network")
            if not (-ALLOCATION_TOL <= v <= caps[nid] + ALLOCATION_TOL):
                raise AllocationError(f"{label} {nid!r}: amount {v} outside [0, {caps[nid]}]")


@dataclass(frozen=True)
class RecourseDecision:
    edge_flows: Mapping[int, float]
    delivered_in: Mapping[str, float]
    delivered_out: Mapping[str, float]


@dataclass(frozen=True)
class EvaluationResult:
    estimate: float
    std_error: float
    n_samples: int
    per_scenario_values: tuple[float, ...] | None = None
    n_distinct: int | None = None


def first_stage_value(net: NetworkSpec, x: Allocation) -> float:
    """Sales revenue minus purchase cost at stage-1 prices."""
    v = x.as_vector(net)
    return float(_first_stage_coeffs(net) @ v)


def _first_stage_coeffs(net: NetworkSpec) -> np.ndarray:
    return np.array(
        [-n.price_stage1 for n in net.producers] + [n.price_stage1 for n in net.consumers], dtype=float
    )


# ---------------------------------------------------------------------------
# recourse LP


class _RecourseTemplate:
    """Scenario- and allocation-independent part of the recourse LP.

    Columns: edge flows, then ``y^in`` per producer, then ``y^out`` per consumer.
    Rows: one conservation equality per node, then a throughput row
    (inflow <= capacity) per regular node with finite capacity.
    """

    def __init__(self, net: NetworkSpec):
        E, P, C = len(net.edges), len(net.producers), len(net.consumers)
        self.E, self.P, self.C = E, P, C
        pos = {n.id: i for i, n in enumerate(net.nodes)}
        p_idx = {n.id: i for i, n in enumerate(net.producers)}
        c_idx = {n.id: i for i, n in enumerate(net.consumers)}
        rows, cols, vals = [], [], []
        for j, e in enumerate(net.edges):
            rows += [pos[e.src], pos[e.dst]]
            cols += [j, j]
            vals += [1.0, -1.0]
        for nd in net.nodes:
            if nd.kind == PRODUCER:
                rows.append(pos[nd.id])
                cols.append(E + p_idx[nd.id])
                vals.append(-1.0)
            elif nd.kind == CONSUMER:
                rows.append(pos[nd.id])
                cols.append(E + P + c_idx[nd.id])
                vals.append(1.0)
        senses = [EQ] * len(net.nodes)
        rhs = [0.0] * len(net.nodes)
        for nd in net.nodes:
            if nd.kind == REGULAR and math.isfinite(nd.capacity):
                r = len(senses)
                for j, e in enumerate(net.edges):
                    if e.dst == nd.id:
                        rows.append(r)
                        cols.append(j)
                        vals.append(1.0)
                senses.append(LE)
                rhs.append(float(nd.capacity))
        nv = E + P + C
        self.A = sp.coo_matrix((vals, (rows, cols)), shape=(len(senses), nv)).tocsr()
        self.senses = tuple(senses)
        self.rhs = np.array(rhs)
        self.refund = np.array([n.price_stage2 for n in net.producers], dtype=float)
        self.penalty = np.array([n.price_stage2 for n in net.consumers], dtype=float)
        self.cost = np.concatenate([np.zeros(E), -self.refund, self.penalty])
        self.edge_caps = np.array([e.capacity for e in net.edges], dtype=float)
        self.unreliable = np.array(net.unreliable_edges, dtype=np.int64)
        self.k = net.k
        self.memo: dict[tuple[bytes, bytes], float] = {}

    def constant(self, xv: np.ndarray) -> float:
        return float(self.refund @ xv[: self.P] - self.penalty @ xv[self.P :])

    def edge_upper(self, bits) -> np.ndarray:
        caps = self.edge_caps.copy()
        if self.k:
            caps[self.unreliable] *= np.asarray(bits, dtype=float)
        return caps

    def lp(self, xv: np.ndarray, bits) -> LinearProgram:
        lower = np.zeros(self.E + self.P + self.C)
        upper = np.concatenate([self.edge_upper(bits), xv])
        return LinearProgram(
            objective=self.cost,
            lower=lower,
            upper=upper,
            A=self.A,
            senses=self.senses,
            rhs=self.rhs,
            maximize=True,
            objective_constant=self.constant(xv),
        )


@lru_cache(maxsize=32)
def _template(net: NetworkSpec) -> _RecourseTemplate:
    return _RecourseTemplate(net)


_MEMO_LIMIT = 400_000


def _check_bits(net: NetworkSpec, bits) -> np.ndarray:
    b = np.asarray(bits, dtype=np.uint8).ravel()
    if b.size != net.k:
        raise NetworkError(f"scenario has {b.size} bits, network has {net.k} unreliable edges")
    return b


def build_recourse_lp(net: NetworkSpec, x: Allocation, s: FailureScenario) -> LinearProgram:
    """Second-stage LP for allocation ``x`` under failure configuration ``s``."""
    xv = x.as_vector(net)
    return _template(net).lp(np.clip(xv, 0.0, None), _check_bits(net, s.bits))


def _solve_recourse(tpl: _RecourseTemplate, xv: np.ndarray, bits: np.ndarray):
    rep = solve_lp(tpl.lp(xv, bits))
    if not rep.optimal:
        # y = 0 is always feasible and the objective is bounded by the y box
        raise NumericalFailure(f"recourse LP reported {rep.status}")
    return rep


def _recourse_values(net: NetworkSpec, xv: np.ndarray, bits: np.ndarray, memo: bool = True) -> np.ndarray:
    tpl = _template(net)
    xv = np.clip(np.asarray(xv, dtype=float), 0.0, None)
    xkey = xv.tobytes()
    out = np.empty(bits.shape[0])
    for i, row in enumerate(bits):
        key = (xkey, row.tobytes())
        if memo and key in tpl.memo:
            out[i] = tpl.memo[key]
            continue
        val = _solve_recourse(tpl, xv, row).objective_value
        if memo:
            if len(tpl.memo) >= _MEMO_LIMIT:
                tpl.memo.clear()
            tpl.memo[key] = val
        out[i] = val
    return out


def recourse_value(net: NetworkSpec, x: Allocation, s: FailureScenario) -> float:
    """``f2(x, s)``: optimal second-stage value."""
    bits = _check_bits(net, s.bits)
    return float(_recourse_values(net, x.as_vector(net), bits[None, :])[0])


def recourse_decision(net: NetworkSpec, x: Allocation, s: FailureScenario) -> tuple[float, RecourseDecision]:
    """``f2(x, s)`` together with the optimal flows and deliveries."""
    tpl = _template(net)
    xv = np.clip(x.as_vector(net), 0.0, None)
    rep = _solve_recourse(tpl, xv, _check_bits(net, s.bits))
    y = rep.primal
    E, P = tpl.E, tpl.P
    dec = RecourseDecision(
        edge_flows={j: float(y[j]) for j in range(E)},
        delivered_in={n.id: float(y[E + i]) for i, n in enumerate(net.producers)},
        delivered_out={n.id: float(y[E + P + i]) for i, n in enumerate(net.consumers)},
    )
    return rep.objective_value, dec


# ---------------------------------------------------------------------------
# evaluation


def _resolve_scenarios(net: NetworkSpec, scen: ScenarioSet | None, cap: int) -> ScenarioSet:
    if scen is None or scen.mode != EXPLICIT:
        return enumerate_scenarios(net, cap)
    if scen.k != net.k:
        raise NetworkError(f"scenario set has k={scen.k}, network has k={net.k}")
    return scen


def exact_evaluate(
    net: NetworkSpec,
    x: Allocation,
    scen: ScenarioSet | None = None,
    *,
    cap: int = DEFAULT_ENUMERATION_CAP,
    keep_values: bool = False,
) -> EvaluationResult:
    """``Q(x)`` summed over an explicit scenario set (full enumeration by default)."""
    scen = _resolve_scenarios(net, scen, cap)
    xv = x.as_vector(net)
    vals = _recourse_values(net, xv, scen.bits)
    est = first_stage_value(net, x) + math.fsum(scen.probabilities * vals)
    return EvaluationResult(
        estimate=est,
        std_error=0.0,
        n_samples=len(scen),
        per_scenario_values=tuple(float(v) for v in vals) if keep_values else None,
        n_distinct=len(scen),
    )


def mc_evaluate(
    net: NetworkSpec,
    x: Allocation,
    n: int,
    seed,
    *,
    compress: bool = True,
    keep_values: bool = False,
    memo: bool = True,
) -> EvaluationResult:
    """Sample-average estimate ``Q_N(x)`` from ``n`` seeded independent draws.

    ``std_error`` is the sample standard deviation of the per-draw values
    over ``sqrt(n)`` (zero when ``n == 1``).  With ``compress`` only the
    distinct outcomes are solved; ``keep_values`` returns per-draw values.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    draws = sample_bits(net, n, rng)
    xv = x.as_vector(net)
    f1 = first_stage_value(net, x)
    if compress:
        uniq, counts, inverse = _unique_rows(draws)
        vals = _recourse_values(net, xv, uniq, memo=memo)
        per_draw = vals[inverse]
        est = f1 + math.fsum(counts * vals) / n
        n_distinct = uniq.shape[0]
    else:
        per_draw = _recourse_values(net, xv, draws, memo=memo)
        est = f1 + math.fsum(per_draw) / n
        n_distinct = None
    # a constant sample must report exactly zero, not round-off
    spread = n > 1 and per_draw.max() > per_draw.min()
    se = float(np.std(per_draw, ddof=1) / math.sqrt(n)) if spread else 0.0
    return EvaluationResult(
        estimate=est,
        std_error=se,
        n_samples=n,
        per_scenario_values=tuple(float(v) for v in per_draw) if keep_values else None,
        n_distinct=n_distinct,
    )


def recourse_range(net: NetworkSpec, x: Allocation, scen: ScenarioSet | None = None, cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """Exact width ``max_s f2(x, s) - min_s f2(x, s)`` over an enumerable scenario set."""
    scen = _resolve_scenarios(net, scen, cap)
    vals = _recourse_values(net, x.as_vector(net), scen.bits)
    return float(vals.max() - vals.min())


def recourse_range_bound(net: NetworkSpec) -> float:
    """Crude width of attainable ``f2`` values over the whole allocation box."""
    return float(
        sum(n.capacity * abs(n.price_stage2) for n in net.producers)
        + sum(n.capacity * abs(n.price_stage2) for n in net.consumers)
    )


# ---------------------------------------------------------------------------
# deterministic equivalent


@dataclass(frozen=True)
class DeIndex:
    """Column layout of a deterministic equivalent.

    ``[x^in (P), x^out (C)]`` followed, per scenario, by
    ``[edge flows (E), y^in (P), y^out (C)]``.
    """

    n_first: int
    block: int
    n_scenarios: int
    n_edges: int

    def x_columns(self) -> slice:
        return slice(0, self.n_first)

    def scenario_columns(self, s: int) -> slice:
        start = self.n_first + s * self.block
        return slice(start, start + self.block)

    @property
    def n_columns(self) -> int:
        return self.n_first + self.n_scenarios * self.block


def de_column_count(net: NetworkSpec, n_scenarios: int) -> int:
    P, C = len(net.producers), len(net.consumers)
    return (P + C) + n_scenarios * (len(net.edges) + P + C)


def build_deterministic_equivalent(
    net: NetworkSpec, scen: ScenarioSet, *, max_columns: int = DE_COLUMN_LIMIT
) -> tuple[LinearProgram, DeIndex]:
    """Merge the first stage and one recourse copy per scenario into one LP.

    Coupling rows ``y - x <= 0`` tie each scenario's deliveries to the shared
    first-stage amounts; recourse variables are weighted by scenario
    probability in the objective.
    """
    if scen.mode != EXPLICIT:
        raise NetworkError("deterministic equivalent needs an explicit scenario set")
    if scen.k != net.k:
        raise NetworkError(f"scenario set has k={scen.k}, network has k={net.k}")
    S = len(scen)
    cols = de_column_count(net, S)
    if cols > max_columns:
        raise ProblemTooLarge(f"deterministic equivalent needs {cols} columns (limit {max_columns})")
    tpl = _template(net)
    E, P, C = tpl.E, tpl.P, tpl.C
    F = P + C
    mt = tpl.A.shape[0]
    block = sp.vstack([tpl.A, sp.hstack([sp.csr_matrix((F, E)), sp.identity(F)])]).tocsr()
    x_block = sp.vstack([sp.csr_matrix((mt, F)), -sp.identity(F)])
    A_y = sp.kron(sp.identity(S, format="csr"), block, format="csr")
    A_x = sp.kron(sp.csr_matrix(np.ones((S, 1))), x_block, format="csr")
    A = sp.hstack([A_x, A_y], format="csr")
    senses = (tpl.senses + (LE,) * F) * S
    rhs = np.tile(np.concatenate([tpl.rhs, np.zeros(F)]), S)

    probs = scen.probabilities
    total_p = math.fsum(probs)
    caps_first = np.array([n.capacity for n in net.producers] + [n.capacity for n in net.consumers], dtype=float)
    c_x = _first_stage_coeffs(net) + total_p * np.concatenate([tpl.refund, -tpl.penalty])
    c_y = np.outer(probs, tpl.cost).ravel()
    objective = np.concatenate([c_x, c_y])

    edge_up = np.tile(tpl.edge_caps, (S, 1))
    if tpl.k:
        edge_up[:, tpl.unreliable] *= scen.bits.astype(float)
    y_up = np.hstack([edge_up, np.tile(caps_first, (S, 1))]).ravel()
    upper = np.concatenate([caps_first, y_up])
    lp = LinearProgram(
        objective=objective,
        lower=np.zeros(cols),
        upper=upper,
        A=A,
        senses=senses,
        rhs=rhs,
        maximize=True,
    )
    return lp, DeIndex(F, E + F, S, E)


def exact_optimize(
    net: NetworkSpec,
    scen: ScenarioSet | None = None,
    *,
    cap: int = DEFAULT_ENUMERATION_CAP,
    max_columns: int = DE_COLUMN_LIMIT,
) -> tuple[Allocation, float]:
    """Optimal allocation and its value ``Q`` via the deterministic equivalent."""
    scen = _resolve_scenarios(net, scen, cap)
    lp, idx = build_deterministic_equivalent(net, scen, max_columns=max_columns)
    rep = solve_lp(lp)
    if not rep.optimal:
        raise NumericalFailure(f"deterministic equivalent reported {rep.status}")
    xv = rep.primal[idx.x_columns()]
    return Allocation.from_vector(net, xv), rep.objective_value

