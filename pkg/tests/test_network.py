import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochnet.network import (
    EXPLICIT,
    EdgeSpec,
    EnumerationCapExceeded,
    FailureScenario,
    GeneratorParams,
    NetworkError,
    NetworkFormatError,
    NetworkSpec,
    NodeSpec,
    ScenarioSet,
    bits_to_str,
    compress_sample,
    dumps_network,
    enumerate_scenarios,
    generate_random_network,
    load_network,
    load_scenarios,
    network_from_dict,
    network_to_dict,
    sample_bits,
    sample_scenario,
    save_network,
    save_scenarios,
    validate_network,
)

from conftest import one_edge, small_net
from oracles import enumerate_bernoulli


def _as_map(scen):
    return {bits_to_str(row): p for row, p in zip(scen.bits, scen.probabilities)}


def test_minimal_instance_is_clean(one_edge_net):
    rep = validate_network(one_edge_net)
    assert rep.ok and rep.warnings == []


def test_reliability_out_of_range():
    net = one_edge(reliability=1.3)
    rep = validate_network(net)
    assert not rep.ok
    assert any("reliability out of [0,1]" in v for v in rep.violations)


def test_refund_above_purchase_warns_only():
    net = NetworkSpec(
        (NodeSpec("P", "producer", 10.0, 1.0, 2.0), NodeSpec("C", "consumer", 10.0, 2.0, 3.0)),
        (EdgeSpec("P", "C", 10.0, 0.9),),
    )
    rep = validate_network(net)
    assert rep.ok
    assert len(rep.warnings) == 1 and "refund" in rep.warnings[0]


def test_penalty_below_sale_warns():
    net = NetworkSpec(
        (NodeSpec("P", "producer", 10.0, 1.0, 0.5), NodeSpec("C", "consumer", 10.0, 2.0, 1.0)),
        (EdgeSpec("P", "C", 10.0, 0.9),),
    )
    rep = validate_network(net)
    assert rep.ok and "penalty" in rep.warnings[0]


def test_every_violation_reported():
    net = NetworkSpec(
        (
            NodeSpec("A", "producer", -1.0, 1.0, 0.5),
            NodeSpec("A", "regular", 5.0, 1.0, None),
            NodeSpec("B", "producer", 3.0, 1.0, None),
            NodeSpec("Z", "sink", 1.0),
        ),
        (EdgeSpec("A", "A", 1.0), EdgeSpec("A", "Q", -2.0, 0.5)),
    )
    text = " | ".join(validate_network(net).violations)
    for needle in (
        "duplicate node id 'A'",
        "capacity must be a nonnegative number",
        "regular node 'A' must not carry prices",
        "needs both stage prices",
        "unknown kind 'sink'",
        "at least one consumer",
        "self-loop",
        "unknown endpoint 'Q'",
    ):
        assert needle in text


def test_enumerate_no_unreliable_edges():
    net = one_edge(reliability=1.0)
    scen = enumerate_scenarios(net)
    assert scen.k == 0 and len(scen) == 1
    assert scen.probabilities.tolist() == [1.0]
    assert list(scen)[0].bits == ()


def test_enumerate_two_edges():
    net = NetworkSpec(
        (NodeSpec("P", "producer", 10.0, 1.0, 0.5), NodeSpec("C", "consumer", 10.0, 2.0, 3.0)),
        (EdgeSpec("P", "C", 10.0, 0.9), EdgeSpec("C", "P", 10.0, 0.5)),
    )
    got = _as_map(enumerate_scenarios(net))
    assert got.keys() == {"11", "10", "01", "00"}
    for key, want in {"11": 0.45, "10": 0.45, "01": 0.05, "00": 0.05}.items():
        assert got[key] == pytest.approx(want, abs=1e-15)


def test_enumeration_cap():
    net = generate_random_network(GeneratorParams(n_unreliable=22), 2)
    assert net.k == 22
    with pytest.raises(EnumerationCapExceeded):
        enumerate_scenarios(net)
    with pytest.raises(EnumerationCapExceeded):
        enumerate_scenarios(small_net(0, k=6), cap=5)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=12))
def test_enumeration_matches_product_rule(rels):
    nodes = (NodeSpec("P", "producer", 1.0, 1.0, 0.5), NodeSpec("C", "consumer", 1.0, 2.0, 3.0))
    edges = tuple(EdgeSpec("P", "C", 1.0, r) for r in rels)
    scen = enumerate_scenarios(NetworkSpec(nodes, edges))
    assert len(scen) == 2 ** len(rels)
    assert abs(math.fsum(scen.probabilities) - 1.0) <= 1e-12
    if len(rels) <= 6:
        want = {bits_to_str(b): p for b, p in enumerate_bernoulli(rels)}
        got = _as_map(scen)
        for key, p in want.items():
            assert got[key] == pytest.approx(p, rel=1e-12)


def test_degenerate_sampling():
    rng = np.random.default_rng(0)
    up = one_edge(reliability=1.0)
    assert sample_scenario(up, rng).bits == ()
    nodes = (NodeSpec("P", "producer", 1.0, 1.0, 0.5), NodeSpec("C", "consumer", 1.0, 2.0, 3.0))
    dead = NetworkSpec(nodes, tuple(EdgeSpec("P", "C", 1.0, 0.0) for _ in range(3)))
    for _ in range(50):
        s = sample_scenario(dead, rng)
        assert s.bits == (0, 0, 0) and s.probability == 1.0


def test_single_edge_frequency():
    draws = sample_bits(one_edge(0.9), 100_000, np.random.default_rng(11))
    assert abs(draws.mean() - 0.9) <= 0.01


@pytest.mark.parametrize("seed", range(5))
def test_marginals_within_four_sigma(seed):
    net = small_net(seed, k=6, reliability_range=(0.05, 0.95))
    n = 10_000
    freq = sample_bits(net, n, np.random.default_rng(seed)).mean(axis=0)
    p = net.reliabilities
    assert np.all(np.abs(freq - p) <= 4 * np.sqrt(p * (1 - p) / n))


def test_batched_draws_match_single_draws():
    net = small_net(3, k=5)
    a = sample_bits(net, 20, np.random.default_rng(5))
    rng = np.random.default_rng(5)
    b = np.array([sample_scenario(net, rng).bits for _ in range(20)])
    assert np.array_equal(a, b)


def test_compress_counts():
    draws = [FailureScenario(b) for b in [(1, 1), (1, 1), (0, 1), (1, 1)]]
    got = _as_map(compress_sample(draws))
    assert got == {"11": 0.75, "01": 0.25}
    same = compress_sample([FailureScenario((1, 0, 1))] * 7)
    assert len(same) == 1 and same.probabilities.tolist() == [1.0]


def test_compress_rejects_mixed_lengths_and_empty():
    with pytest.raises(NetworkError):
        compress_sample([FailureScenario((1,)), FailureScenario((1, 0))])
    with pytest.raises(NetworkError):
        compress_sample([])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6), st.integers(1, 400))
def test_compressed_weights_reproduce_raw_average(seed, k, n):
    rng = np.random.default_rng(seed)
    draws = (rng.random((n, k)) < rng.random(k)).astype(np.uint8)
    table = rng.normal(size=2**k) * 100  # an arbitrary per-scenario function
    weights = 2 ** np.arange(k - 1, -1, -1)
    raw = math.fsum(table[draws @ weights]) / n
    scen = compress_sample(draws)
    assert len(scen) <= min(n, 2**k)
    comp = math.fsum(scen.probabilities * table[scen.bits @ weights])
    assert abs(raw - comp) <= 1e-9


def test_explicit_set_invariants():
    with pytest.raises(NetworkError):
        ScenarioSet.explicit([FailureScenario((1,), 0.5), FailureScenario((0,), 0.4)])
    with pytest.raises(NetworkError):
        ScenarioSet.explicit([FailureScenario((1,), 0.5), FailureScenario((1,), 0.5)])
    ok = ScenarioSet.explicit([FailureScenario((1, 0), 0.3), FailureScenario((0, 0), 0.7)])
    assert ok.mode == EXPLICIT and len(ok) == 2
    assert ScenarioSet.bernoulli(3).bits.shape == (0, 3)


def test_generator_is_pure():
    p = GeneratorParams(3, 3, 2, 12, 5)
    assert dumps_network(generate_random_network(p, 1)) == dumps_network(generate_random_network(p, 1))
    assert dumps_network(generate_random_network(p, 1)) != dumps_network(generate_random_network(p, 2))


def test_generator_reliable_and_full_size():
    net = generate_random_network(GeneratorParams(3, 3, 2, 12, 0), 4)
    assert all(e.reliability == 1.0 for e in net.edges) and net.k == 0
    fig = generate_random_network(GeneratorParams(n_producers=5, n_consumers=5, n_unreliable=22), 1)
    assert validate_network(fig).ok and fig.k == 22
    assert len(fig.producers) == 5 and len(fig.consumers) == 5


def test_generator_rejects_infeasible_params():
    with pytest.raises(NetworkError):
        generate_random_network(GeneratorParams(3, 3, 3, 4, 0), 0)
    with pytest.raises(NetworkError):
        generate_random_network(GeneratorParams(1, 1, 0, 5, 0), 0)
    with pytest.raises(NetworkError):
        generate_random_network(GeneratorParams(2, 2, 1, 6, 7), 0)


def test_network_file_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    nodes = (
        NodeSpec("P", "producer", float(rng.random()), float(rng.random()), float(rng.random()) / 10),
        NodeSpec("C", "consumer", float(rng.random()) * 1e3, 1 / 3, 2 / 3),
        NodeSpec("R", "regular"),
    )
    edges = (EdgeSpec("P", "R", 0.1 + 0.2, 1 - 1e-12), EdgeSpec("R", "C", math.pi, 0.7))
    net = NetworkSpec(nodes, edges)
    path = tmp_path / "net.json"
    save_network(net, path)
    assert load_network(path) == net
    assert network_from_dict(json.loads(json.dumps(network_to_dict(net)))) == net
    assert json.loads(path.read_text())["nodes"][2]["capacity"] is None


def test_scenario_file_roundtrip(tmp_path):
    scen = enumerate_scenarios(small_net(1, k=3))
    path = tmp_path / "s.json"
    save_scenarios(scen, path)
    back = load_scenarios(path)
    assert np.array_equal(back.bits, scen.bits)
    assert back.probabilities.tobytes() == scen.probabilities.tobytes()
    doc = json.loads(path.read_text())
    assert doc["k"] == 3 and doc["scenarios"][0]["bits"] == "000"


def test_malformed_documents(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(NetworkFormatError):
        load_network(bad)
    bad.write_text('{"nodes": [{"kind": "producer"}], "edges": []}')
    with pytest.raises(NetworkFormatError):
        load_network(bad)
    bad.write_text('{"k": 2, "scenarios": [{"bits": "1x", "probability": 1}]}')
    with pytest.raises(NetworkFormatError):
        load_scenarios(bad)
