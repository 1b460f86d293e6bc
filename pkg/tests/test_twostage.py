import math

import numpy as np
import pytest

from stochnet.lp import check_solution, solve_lp
from stochnet.network import (
    EdgeSpec,
    FailureScenario,
    GeneratorParams,
    NetworkError,
    NetworkSpec,
    NodeSpec,
    ScenarioSet,
    all_up_scenarios,
    compress_sample,
    enumerate_scenarios,
    generate_random_network,
)
from stochnet.twostage import (
    Allocation,
    AllocationError,
    ProblemTooLarge,
    build_deterministic_equivalent,
    build_recourse_lp,
    de_column_count,
    exact_evaluate,
    exact_optimize,
    first_stage_value,
    load_allocation,
    mc_evaluate,
    recourse_decision,
    recourse_range,
    recourse_range_bound,
    recourse_value,
    save_allocation,
)

from conftest import one_edge, small_net
from oracles import brute_force_flow_value, enumerate_bernoulli, single_edge_value


def _alloc(a, b=None):
    return Allocation({"P": a}, {"C": a if b is None else b})


def _random_alloc(net, rng):
    caps = np.array([n.capacity for n in net.producers + net.consumers])
    return Allocation.from_vector(net, np.round(rng.random(caps.size) * caps, 3))


def _as_dict(x):
    return {**x.producer_amounts, **x.consumer_amounts}


def test_first_stage_examples(one_edge_net):
    assert first_stage_value(one_edge_net, Allocation.zeros(one_edge_net)) == 0.0
    assert first_stage_value(one_edge_net, _alloc(10)) == 10.0
    net = small_net(2)
    x = _random_alloc(net, np.random.default_rng(0))
    doubled = Allocation.from_vector(net, x.as_vector(net) / 2)
    assert first_stage_value(net, x) == pytest.approx(2 * first_stage_value(net, doubled), rel=1e-12)


def test_allocation_errors(one_edge_net):
    with pytest.raises(AllocationError):
        first_stage_value(one_edge_net, Allocation({"Q": 1.0}, {}))
    with pytest.raises(AllocationError):
        first_stage_value(one_edge_net, Allocation({"C": 1.0}, {}))
    with pytest.raises(AllocationError):
        first_stage_value(one_edge_net, _alloc(10.5))
    with pytest.raises(AllocationError):
        first_stage_value(one_edge_net, _alloc(-1))
    with pytest.raises(NetworkError):
        recourse_value(one_edge_net, _alloc(1), FailureScenario((1, 0)))


def test_recourse_lp_shape(one_edge_net):
    lp = build_recourse_lp(one_edge_net, _alloc(4, 6), FailureScenario((0,)))
    assert lp.n_vars == 3 and lp.maximize
    assert lp.upper.tolist() == [0.0, 4.0, 6.0]
    assert lp.objective_constant == pytest.approx(0.5 * 4 - 3 * 6)


def test_all_edges_failed_collapses_to_origin():
    net = small_net(5, k=8)
    fully = NetworkSpec(net.nodes, tuple(EdgeSpec(e.src, e.dst, e.capacity, 0.5) for e in net.edges))
    x = _random_alloc(fully, np.random.default_rng(1))
    want = sum(x.producer_amounts[n.id] * n.price_stage2 for n in fully.producers) - sum(
        x.consumer_amounts[n.id] * n.price_stage2 for n in fully.consumers
    )
    got = recourse_value(fully, x, FailureScenario((0,) * fully.k))
    assert got == pytest.approx(want, abs=1e-9)


def test_zero_allocation_has_zero_recourse():
    net = small_net(6, k=5)
    for bits in [(1,) * 5, (0,) * 5, (1, 0, 1, 0, 1)]:
        assert recourse_value(net, Allocation.zeros(net), FailureScenario(bits)) == 0.0


@pytest.mark.parametrize("a", [0.0, 3.0, 10.0])
def test_single_operating_edge_delivers_everything(one_edge_net, a):
    val, dec = recourse_decision(one_edge_net, _alloc(a), FailureScenario((1,)))
    assert val == pytest.approx(0.0, abs=1e-12)
    assert dec.delivered_in["P"] == pytest.approx(a) and dec.delivered_out["C"] == pytest.approx(a)


@pytest.mark.parametrize("bits", [(0,), (1,)])
def test_single_edge_closed_form(bits):
    rng = np.random.default_rng(3)
    for cap in (10.0, 4.0):
        net = one_edge(cap=cap)
        for _ in range(10):
            xi, xo = rng.uniform(0, 10, 2)
            want = single_edge_value(xi, xo, cap * bits[0], (0.5, 3.0))
            got = recourse_value(net, _alloc(xi, xo), FailureScenario(bits))
            assert got == pytest.approx(want, abs=1e-9)


@pytest.mark.parametrize("seed", range(8))
def test_recourse_matches_independent_lp(seed):
    net = small_net(seed, k=6, regular_capacity_range=(2.0, 30.0) if seed % 2 else None)
    rng = np.random.default_rng(seed)
    for _ in range(6):
        x = _random_alloc(net, rng)
        bits = tuple(int(b) for b in rng.integers(0, 2, net.k))
        want = brute_force_flow_value(net, _as_dict(x), bits)
        got = recourse_value(net, x, FailureScenario(bits))
        assert got == pytest.approx(want, rel=1e-7, abs=1e-7)


def test_recourse_decision_is_feasible():
    net = small_net(4, k=6, regular_capacity_range=(1.0, 10.0))
    rng = np.random.default_rng(0)
    x = _random_alloc(net, rng)
    bits = (1, 0, 1, 1, 0, 1)
    val, dec = recourse_decision(net, x, FailureScenario(bits))
    lp = build_recourse_lp(net, x, FailureScenario(bits))
    y = np.array(list(dec.edge_flows.values()) + list(dec.delivered_in.values()) + list(dec.delivered_out.values()))
    res = check_solution(lp, y)
    assert res.max_bound_violation <= 1e-9 and res.max_constraint_violation <= 1e-9
    assert res.objective_value == pytest.approx(val, abs=1e-9)


def test_recourse_lower_bound_and_monotonicity():
    rng = np.random.default_rng(12)
    for seed in range(5):
        net = small_net(seed, k=5)
        x = _random_alloc(net, rng)
        floor = min(
            0.0,
            sum(x.producer_amounts[n.id] * n.price_stage2 for n in net.producers)
            - sum(x.consumer_amounts[n.id] * n.price_stage2 for n in net.consumers),
        )
        scen = enumerate_scenarios(net)
        vals = exact_evaluate(net, x, scen, keep_values=True).per_scenario_values
        table = {tuple(int(b) for b in row): v for row, v in zip(scen.bits, vals)}
        for s, v in table.items():
            assert v >= floor - 1e-9
            for j in range(net.k):
                if s[j]:
                    weaker = s[:j] + (0,) + s[j + 1 :]
                    assert table[weaker] <= v + 1e-7


def test_exact_evaluate_single_scenario(one_edge_net):
    net = one_edge(reliability=1.0)
    x = _alloc(6, 8)
    res = exact_evaluate(net, x)
    want = first_stage_value(net, x) + recourse_value(net, x, FailureScenario(()))
    assert res.estimate == want and res.std_error == 0.0 and res.n_samples == 1


def test_exact_evaluate_hand_model(one_edge_net):
    for a in (0.0, 2.0, 10.0):
        assert exact_evaluate(one_edge_net, _alloc(a)).estimate == pytest.approx(0.75 * a, abs=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_exact_evaluate_matches_naive_sum(seed):
    net = small_net(seed, k=6, n_edges=9)
    x = _random_alloc(net, np.random.default_rng(seed))
    naive = first_stage_value(net, x)
    f1 = sum(x.consumer_amounts[n.id] * n.price_stage1 for n in net.consumers) - sum(
        x.producer_amounts[n.id] * n.price_stage1 for n in net.producers
    )
    assert f1 == pytest.approx(naive, abs=1e-12)
    terms = [p * brute_force_flow_value(net, _as_dict(x), bits) for bits, p in enumerate_bernoulli(net.reliabilities)]
    assert exact_evaluate(net, x).estimate == pytest.approx(f1 + math.fsum(terms), rel=1e-8, abs=1e-8)


def test_mc_degenerate_when_reliable():
    net = small_net(3, k=0)
    x = _random_alloc(net, np.random.default_rng(2))
    exact = exact_evaluate(net, x).estimate
    for n in (1, 7, 100):
        res = mc_evaluate(net, x, n, seed=4)
        assert res.estimate == pytest.approx(exact, abs=1e-12) and res.std_error == 0.0


def test_mc_single_edge(one_edge_net):
    res = mc_evaluate(one_edge_net, _alloc(10), 10_000, seed=123)
    assert res.n_samples == 10_000 and res.n_distinct == 2
    assert abs(res.estimate - 7.5) <= 3 * res.std_error


def test_mc_values_and_determinism():
    net = small_net(1, k=6)
    x = _random_alloc(net, np.random.default_rng(1))
    a = mc_evaluate(net, x, 300, seed=9, keep_values=True)
    b = mc_evaluate(net, x, 300, seed=9, keep_values=True)
    assert a == b and len(a.per_scenario_values) == 300
    f1 = first_stage_value(net, x)
    assert a.estimate == pytest.approx(f1 + np.mean(a.per_scenario_values), abs=1e-9)
    with pytest.raises(ValueError):
        mc_evaluate(net, x, 0, seed=1)


@pytest.mark.parametrize("seed", range(10))
def test_mc_compression_invariance(seed):
    net = small_net(seed, k=5)
    x = _random_alloc(net, np.random.default_rng(seed))
    raw = mc_evaluate(net, x, 200, seed, compress=False, memo=False)
    comp = mc_evaluate(net, x, 200, seed, compress=True, memo=False)
    assert abs(raw.estimate - comp.estimate) <= 1e-9
    assert abs(raw.std_error - comp.std_error) <= 1e-9


def test_mc_unbiased_small():
    net = small_net(7, k=4)
    x = _random_alloc(net, np.random.default_rng(7))
    exact = exact_evaluate(net, x).estimate
    ests = np.array([mc_evaluate(net, x, 30, seed=s).estimate for s in range(200)])
    t = (ests.mean() - exact) / (ests.std(ddof=1) / math.sqrt(ests.size))
    assert abs(t) <= 3


def test_recourse_range(one_edge_net):
    assert recourse_range(one_edge_net, _alloc(10)) == pytest.approx(25.0)
    assert recourse_range_bound(one_edge_net) == pytest.approx(35.0)


def test_de_dimensions_formula():
    net = generate_random_network(GeneratorParams(5, 5, 12, 96, 22), 3)
    assert len(net.edges) + 10 == 106
    rng = np.random.default_rng(0)
    codes = rng.choice(2**22, size=600, replace=False)
    bits = ((codes[:, None] >> np.arange(21, -1, -1)) & 1).astype(np.uint8)
    scen = ScenarioSet.explicit(
        [FailureScenario(tuple(int(b) for b in row), 1 / 600) for row in bits]
    )
    lp, idx = build_deterministic_equivalent(net, scen)
    assert lp.n_vars == idx.n_columns == de_column_count(net, 600) == 10 + 600 * 106 == 63_610
    assert lp.n_constraints == 600 * (len(net.nodes) + 10)
    with pytest.raises(ProblemTooLarge):
        build_deterministic_equivalent(net, scen, max_columns=60_000)


def test_de_single_scenario_collapse():
    net = small_net(2, k=4)
    x, val = exact_optimize(net, all_up_scenarios(net))
    reliable = NetworkSpec(net.nodes, tuple(EdgeSpec(e.src, e.dst, e.capacity, 1.0) for e in net.edges))
    x2, val2 = exact_optimize(reliable)
    assert val == pytest.approx(val2, rel=1e-9, abs=1e-9)


def test_exact_optimize_hand_model(one_edge_net):
    x, val = exact_optimize(one_edge_net)
    assert x == _alloc(10.0)
    assert val == pytest.approx(7.5, abs=1e-9)
    lp, idx = build_deterministic_equivalent(one_edge_net, enumerate_scenarios(one_edge_net))
    assert lp.n_vars == 2 + 2 * 3


def test_exact_optimize_zero_prices():
    net = small_net(1, k=3)
    zero = NetworkSpec(
        tuple(
            NodeSpec(n.id, n.kind, n.capacity, 0.0, 0.0) if n.kind != "regular" else n for n in net.nodes
        ),
        net.edges,
    )
    x, val = exact_optimize(zero)
    assert val == pytest.approx(0.0, abs=1e-12)
    assert exact_evaluate(zero, x).estimate == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_exact_optimize_consistency_and_dominance(seed):
    net = small_net(seed, k=5, regular_capacity_range=(5.0, 40.0) if seed % 2 else None)
    x, val = exact_optimize(net)
    assert exact_evaluate(net, x).estimate == pytest.approx(val, rel=1e-6, abs=1e-9)
    rng = np.random.default_rng(seed)
    for _ in range(100):
        assert exact_evaluate(net, _random_alloc(net, rng)).estimate <= val + 1e-6


def test_de_duals_certify_optimum(k8_net):
    lp, _ = build_deterministic_equivalent(k8_net, enumerate_scenarios(k8_net))
    rep = solve_lp(lp)
    assert rep.optimal
    assert abs(rep.dual_objective - rep.objective_value) <= 1e-6 * max(1.0, abs(rep.objective_value))


def test_explicit_scenario_mismatch(one_edge_net):
    bad = compress_sample(np.array([[1, 0]], dtype=np.uint8))
    with pytest.raises(NetworkError):
        exact_evaluate(one_edge_net, _alloc(1), bad)


def test_allocation_file_roundtrip(tmp_path, one_edge_net):
    x = Allocation({"P": 1 / 3}, {"C": 2.5})
    save_allocation(x, tmp_path / "x.json")
    assert load_allocation(tmp_path / "x.json") == x
    assert Allocation.from_vector(one_edge_net, x.as_vector(one_edge_net)) == x
