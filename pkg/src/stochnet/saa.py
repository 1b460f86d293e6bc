"""Sample average approximation, best-of-K subselection and the two strawman plans."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .network import (
    EdgeSpec,
    NetworkSpec,
    ScenarioSet,
    all_up_scenarios,
    compress_sample,
    sample_bits,
)
from .twostage import Allocation, exact_optimize, mc_evaluate

__all__ = [
    "Candidate",
    "SaaResult",
    "SubselectResult",
    "derive_seed",
    "deterministic_baseline",
    "deterministic_plan",
    "mean_baseline",
    "mean_network",
    "mean_plan",
    "saa_optimize",
    "subselect_optimize",
]


def derive_seed(seed: int, index: int) -> int:
    """Deterministic child seed number ``index`` of ``seed`` (a 63-bit int)."""
    state = np.random.SeedSequence(int(seed), spawn_key=(int(index),)).generate_state(2, np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


@dataclass(frozen=True, eq=False)
class SaaResult:
    allocation: Allocation
    saa_objective: float
    sample: ScenarioSet
    seed: int
    n_raw: int
    n_distinct: int


def saa_optimize(net: NetworkSpec, n: int, seed: int) -> SaaResult:
    """Maximise ``Q_N`` over a seeded sample of ``n`` failure configurations.

    The sample is compressed to its distinct outcomes before the
    deterministic equivalent is built, so the LP grows with ``N'`` rather
    than ``N``.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    draws = sample_bits(net, n, np.random.default_rng(seed))
    sample = compress_sample(draws)
    x, value = exact_optimize(net, sample)
    return SaaResult(x, value, sample, int(seed), n, len(sample))


@dataclass(frozen=True, eq=False)
class Candidate:
    index: int
    seed: int
    allocation: Allocation
    q_n1: float
    q_n2: float
    q_n2_std_error: float


@dataclass(frozen=True, eq=False)
class SubselectResult:
    best: SaaResult
    chosen: int
    candidates: tuple[Candidate, ...]
    eval_seed: int
    n2: int

    @property
    def allocation(self) -> Allocation:
        return self.best.allocation

    @property
    def saa_objective(self) -> float:
        return self.best.saa_objective


def subselect_optimize(net: NetworkSpec, k: int, n1: int, n2: int | None = None, seed: int = 0) -> SubselectResult:
    """Best of ``k`` small-sample SAA solutions, judged on one shared larger sample.

    Candidate ``i`` is solved with ``derive_seed(seed, i)``; all candidates
    are scored by :func:`mc_evaluate` on ``n2`` draws (default ``2 * n1``)
    seeded with ``derive_seed(seed, k)``.  Ties go to the lowest index.
    """
    if k < 1 or n1 < 1:
        raise ValueError("k and n1 must be positive")
    n2 = 2 * n1 if n2 is None else n2
    if n2 < 1:
        raise ValueError("n2 must be positive")
    eval_seed = derive_seed(seed, k)
    results, cands = [], []
    for i in range(k):
        res = saa_optimize(net, n1, derive_seed(seed, i))
        ev = mc_evaluate(net, res.allocation, n2, eval_seed)
        results.append(res)
        cands.append(Candidate(i, res.seed, res.allocation, res.saa_objective, ev.estimate, ev.std_error))
    chosen = 0
    for c in cands[1:]:
        if c.q_n2 > cands[chosen].q_n2:
            chosen = c.index
    return SubselectResult(results[chosen], chosen, tuple(cands), eval_seed, n2)


def deterministic_plan(net: NetworkSpec) -> tuple[Allocation, float]:
    """Plan and model value when failures are ignored (every edge assumed up)."""
    return exact_optimize(net, all_up_scenarios(net))


def deterministic_baseline(net: NetworkSpec) -> Allocation:
    return deterministic_plan(net)[0]


def mean_network(net: NetworkSpec) -> NetworkSpec:
    """Copy of ``net`` where each unreliable edge carries its mean capacity and never fails."""
    edges = tuple(
        EdgeSpec(e.src, e.dst, e.capacity * e.reliability, 1.0) if e.reliability < 1.0 else e for e in net.edges
    )
    return replace(net, edges=edges)


def mean_plan(net: NetworkSpec) -> tuple[Allocation, float]:
    """Plan and model value for the network whose random capacities are replaced by their means."""
    return exact_optimize(mean_network(net), None)


def mean_baseline(net: NetworkSpec) -> Allocation:
    return mean_plan(net)[0]
