import pytest

from stochnet.network import EdgeSpec, GeneratorParams, NetworkSpec, NodeSpec, generate_random_network


def one_edge(reliability=0.9, cap=10.0):
    """Producer (c=10, buy 1, refund 0.5) -> consumer (c=10, sell 2, penalty 3)."""
    return NetworkSpec(
        (NodeSpec("P", "producer", 10.0, 1.0, 0.5), NodeSpec("C", "consumer", 10.0, 2.0, 3.0)),
        (EdgeSpec("P", "C", cap, reliability),),
    )


@pytest.fixture
def one_edge_net():
    return one_edge()


def small_net(seed, k=4, **kw):
    params = dict(n_producers=2, n_consumers=2, n_regular=2, n_edges=max(8, k + 2), n_unreliable=k)
    params.update(kw)
    return generate_random_network(GeneratorParams(**params), seed)


K8_PARAMS = GeneratorParams(3, 3, 3, 14, 8, reliability_range=(0.5, 0.9))
K8_SEED = 1


@pytest.fixture(scope="session")
def k8_net():
    return generate_random_network(K8_PARAMS, K8_SEED)


ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        if n in ACCEPTANCE_RESULTS:
            ok, detail = ACCEPTANCE_RESULTS[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
