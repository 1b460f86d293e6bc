"""Problem instances: unreliable transportation networks and their failure scenarios.

A network has producer, consumer and regular nodes joined by directed,
capacitated edges.  Edges with reliability below one are *unreliable*; their
declaration order fixes the bit positions of a :class:`FailureScenario`
(bit ``1`` means the edge operates, ``0`` that it failed).  Edges fail
independently unless an explicit :class:`ScenarioSet` says otherwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

PRODUCER, CONSUMER, REGULAR = "producer", "consumer", "regular"
NODE_KINDS = (PRODUCER, CONSUMER, REGULAR)

INDEPENDENT = "independent-bernoulli"
EXPLICIT = "explicit"

DEFAULT_ENUMERATION_CAP = 20


class NetworkError(ValueError):
    """Invalid network or scenario data."""


class NetworkFormatError(NetworkError):
    """A network or scenario document could not be parsed."""


class EnumerationCapExceeded(NetworkError):
    def __init__(self, k: int, cap: int):
        super().__init__(f"{k} unreliable edges exceed the enumeration cap of {cap} (2^{k} scenarios)")
        self.k = k
        self.cap = cap


@dataclass(frozen=True)
class NodeSpec:
    id: str
    kind: str
    capacity: float = math.inf
    price_stage1: float | None = None
    price_stage2: float | None = None


@dataclass(frozen=True)
class EdgeSpec:
    src: str
    dst: str
    capacity: float
    reliability: float = 1.0


@dataclass(frozen=True)
class NetworkSpec:
    nodes: tuple[NodeSpec, ...]
    edges: tuple[EdgeSpec, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))

    @cached_property
    def unreliable_edges(self) -> tuple[int, ...]:
        """Indices (into ``edges``) of edges with reliability < 1, in declaration order."""
        return tuple(i for i, e in enumerate(self.edges) if e.reliability < 1.0)

    @property
    def k(self) -> int:
        return len(self.unreliable_edges)

    @cached_property
    def reliabilities(self) -> np.ndarray:
        r = np.array([self.edges[i].reliability for i in self.unreliable_edges], dtype=float)
        r.setflags(write=False)
        return r

    @cached_property
    def producers(self) -> tuple[NodeSpec, ...]:
        return tuple(n for n in self.nodes if n.kind == PRODUCER)

    @cached_property
    def consumers(self) -> tuple[NodeSpec, ...]:
        return tuple(n for n in self.nodes if n.kind == CONSUMER)

    def node(self, node_id: str) -> NodeSpec:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)


@dataclass(frozen=True)
class FailureScenario:
    bits: tuple[int, ...]
    probability: float = 1.0

    def __str__(self) -> str:
        return bits_to_str(self.bits)


def bits_to_str(bits: Iterable[int]) -> str:
    return "".join("1" if b else "0" for b in bits)


def str_to_bits(text: str) -> tuple[int, ...]:
    if any(ch not in "01" for ch in text):
        raise NetworkFormatError(f"scenario bits must be a 0/1 string, got {text!r}")
    return tuple(int(ch) for ch in text)


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    """A distribution over failure scenarios.

    In ``explicit`` mode the rows of ``bits`` (shape ``(S, k)``) are distinct
    outcomes with weights ``probabilities``.  In ``independent-bernoulli``
    mode both arrays are empty and the weights follow from edge
    reliabilities (see :func:`enumerate_scenarios`).
    """

    mode: str
    k: int
    bits: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=np.uint8))
    probabilities: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        if self.mode not in (INDEPENDENT, EXPLICIT):
            raise NetworkError(f"unknown scenario mode {self.mode!r}")
        probs = np.asarray(self.probabilities, dtype=float).ravel()
        if self.mode == INDEPENDENT:
            bits = np.zeros((0, self.k), dtype=np.uint8)
            probs = np.zeros(0)
        else:
            if self.k == 0:
                bits = np.zeros((probs.size, 0), dtype=np.uint8)
            else:
                bits = np.asarray(self.bits, dtype=np.uint8).reshape(-1, self.k)
            if bits.shape[0] != probs.size or probs.size == 0:
                raise NetworkError("explicit scenario sets need one probability per scenario")
            if np.any(probs <= 0) or np.any(probs > 1):
                raise NetworkError("scenario probabilities must lie in (0, 1]")
            if abs(math.fsum(probs) - 1.0) > 1e-9:
                raise NetworkError(f"scenario probabilities sum to {math.fsum(probs)!r}, not 1")
            if np.any(bits > 1):
                raise NetworkError("scenario bits must be 0 or 1")
            n_distinct = np.unique(bits, axis=0).shape[0] if self.k else 1
            if n_distinct != probs.size:
                raise NetworkError("explicit scenarios must be pairwise distinct")
        bits.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "probabilities", probs)

    @classmethod
    def explicit(cls, scenarios: Sequence[FailureScenario]) -> "ScenarioSet":
        if not scenarios:
            raise NetworkError("explicit scenario sets cannot be empty")
        k = len(scenarios[0].bits)
        if any(len(s.bits) != k for s in scenarios):
            raise NetworkError("scenarios have mixed bit-lengths")
        bits = np.array([s.bits for s in scenarios], dtype=np.uint8).reshape(len(scenarios), k)
        return cls(EXPLICIT, k, bits, np.array([s.probability for s in scenarios]))

    @classmethod
    def bernoulli(cls, k: int) -> "ScenarioSet":
        return cls(INDEPENDENT, k)

    def __len__(self) -> int:
        return self.probabilities.size

    def __iter__(self) -> Iterator[FailureScenario]:
        for row, p in zip(self.bits, self.probabilities):
            yield FailureScenario(tuple(int(b) for b in row), float(p))

    @property
    def scenarios(self) -> list[FailureScenario]:
        return list(self)


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _bad_number(v) -> bool:
    return not isinstance(v, (int, float)) or isinstance(v, bool) or math.isnan(v)


def validate_network(net: NetworkSpec) -> ValidationReport:
    """Collect every invariant violation plus arbitrage warnings."""
    rep = ValidationReport()
    seen: set[str] = set()
    for nd in net.nodes:
        if nd.id in seen:
            rep.violations.append(f"duplicate node id {nd.id!r}")
        seen.add(nd.id)
        if nd.kind not in NODE_KINDS:
            rep.violations.append(f"node {nd.id!r}: unknown kind {nd.kind!r}")
            continue
        if _bad_number(nd.capacity) or nd.capacity < 0:
            rep.violations.append(f"node {nd.id!r}: capacity must be a nonnegative number")
        priced = (nd.price_stage1 is not None, nd.price_stage2 is not None)
        if nd.kind == REGULAR:
            if any(priced):
                rep.violations.append(f"regular node {nd.id!r} must not carry prices")
            continue
        if not all(priced):
            rep.violations.append(f"{nd.kind} node {nd.id!r} needs both stage prices")
            continue
        if _bad_number(nd.price_stage1) or _bad_number(nd.price_stage2) or not (
            math.isfinite(nd.price_stage1) and math.isfinite(nd.price_stage2)
        ):
            rep.violations.append(f"node {nd.id!r}: prices must be finite numbers")
            continue
        if nd.kind == PRODUCER and nd.price_stage2 > nd.price_stage1:
            rep.warnings.append(
                f"producer {nd.id!r}: refund {nd.price_stage2} exceeds purchase price "
                f"{nd.price_stage1} (buying to return is riskless profit)"
            )
        if nd.kind == CONSUMER and nd.price_stage2 < nd.price_stage1:
            rep.warnings.append(
                f"consumer {nd.id!r}: penalty {nd.price_stage2} is below sale price "
                f"{nd.price_stage1} (selling without delivering is riskless profit)"
            )
    kinds = {nd.kind for nd in net.nodes}
    if PRODUCER not in kinds:
        rep.violations.append("network needs at least one producer")
    if CONSUMER not in kinds:
        rep.violations.append("network needs at least one consumer")
    for i, e in enumerate(net.edges):
        tag = f"edge {i} ({e.src}->{e.dst})"
        for end in (e.src, e.dst):
            if end not in seen:
                rep.violations.append(f"{tag}: unknown endpoint {end!r}")
        if e.src == e.dst:
            rep.violations.append(f"{tag}: self-loop")
        if _bad_number(e.capacity) or e.capacity < 0:
            rep.violations.append(f"{tag}: capacity must be a nonnegative number")
        if _bad_number(e.reliability) or not 0.0 <= e.reliability <= 1.0:
            rep.violations.append(f"{tag}: reliability out of [0,1]")
    return rep


def require_valid(net: NetworkSpec) -> None:
    rep = validate_network(net)
    if not rep.ok:
        raise NetworkError("; ".join(rep.violations))


# ---------------------------------------------------------------------------
# scenarios


def enumerate_scenarios(net: NetworkSpec, cap: int = DEFAULT_ENUMERATION_CAP) -> ScenarioSet:
    """Every failure configuration with its independent-failure probability.

    Rows are in binary counting order with the first unreliable edge as the
    most significant bit.  Outcomes of probability exactly zero (an edge of
    reliability 0 reported as operating) are left out.
    """
    k = net.k
    if k > cap:
        raise EnumerationCapExceeded(k, cap)
    idx = np.arange(2**k, dtype=np.int64)
    shifts = np.arange(k - 1, -1, -1, dtype=np.int64)
    bits = ((idx[:, None] >> shifts) & 1).astype(np.uint8)
    p = net.reliabilities
    probs = np.prod(np.where(bits == 1, p, 1.0 - p), axis=1) if k else np.ones(1)
    keep = probs > 0
    return ScenarioSet(EXPLICIT, k, bits[keep], probs[keep])


def sample_scenario(net: NetworkSpec, rng: np.random.Generator) -> FailureScenario:
    """One independent draw; each unreliable edge operates with its reliability."""
    bits = rng.random(net.k) < net.reliabilities
    return FailureScenario(tuple(int(b) for b in bits), 1.0)


def sample_bits(net: NetworkSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws as a ``(n, k)`` uint8 array.

    Consumes the generator exactly like ``n`` successive :func:`sample_scenario` calls.
    """
    return (rng.random((n, net.k)) < net.reliabilities).astype(np.uint8)


def _unique_rows(bits: np.ndarray):
    n, k = bits.shape
    if k == 0:
        return np.zeros((1, 0), dtype=np.uint8), np.array([n]), np.zeros(n, dtype=np.int64)
    uniq, inverse, counts = np.unique(bits, axis=0, return_inverse=True, return_counts=True)
    return uniq, counts, inverse.ravel()


def compress_sample(draws: Sequence[FailureScenario] | np.ndarray) -> ScenarioSet:
    """Empirical distribution of a sample: distinct outcomes weighted by multiplicity / N."""
    if isinstance(draws, np.ndarray):
        bits = draws.astype(np.uint8)
        if bits.ndim != 2:
            raise NetworkError("draw array must be two-dimensional")
    else:
        if len(draws) == 0:
            raise NetworkError("cannot compress an empty sample")
        k = len(draws[0].bits)
        if any(len(d.bits) != k for d in draws):
            raise NetworkError("draws have mixed bit-lengths")
        bits = np.array([d.bits for d in draws], dtype=np.uint8).reshape(len(draws), k)
    if bits.shape[0] == 0:
        raise NetworkError("cannot compress an empty sample")
    uniq, counts, _ = _unique_rows(bits)
    return ScenarioSet(EXPLICIT, bits.shape[1], uniq, counts / bits.shape[0])


def all_up_scenarios(net: NetworkSpec) -> ScenarioSet:
    return ScenarioSet(EXPLICIT, net.k, np.ones((1, net.k), dtype=np.uint8), np.ones(1))


# ---------------------------------------------------------------------------
# random instances


@dataclass(frozen=True)
class GeneratorParams:
    """Knobs for :func:`generate_random_network`.

    Producer refunds and consumer penalties are drawn as ratios of the
    first-stage price, so refund ratios below one and penalty ratios at or
    above one keep the instance free of arbitrage.
    """

    n_producers: int = 5
    n_consumers: int = 5
    n_regular: int = 6
    n_edges: int = 30
    n_unreliable: int = 22
    capacity_range: tuple[float, float] = (5.0, 20.0)
    node_capacity_range: tuple[float, float] = (10.0, 30.0)
    purchase_range: tuple[float, float] = (1.0, 3.0)
    sale_range: tuple[float, float] = (3.0, 6.0)
    refund_ratio_range: tuple[float, float] = (0.2, 0.8)
    penalty_ratio_range: tuple[float, float] = (1.0, 1.5)
    reliability_range: tuple[float, float] = (0.6, 0.95)
    regular_capacity_range: tuple[float, float] | None = None


def _uniform(rng: np.random.Generator, lohi: tuple[float, float]) -> float:
    lo, hi = lohi
    return float(round(rng.uniform(lo, hi), 6))


def generate_random_network(params: GeneratorParams, seed: int) -> NetworkSpec:
    """Layered producers -> regular -> consumers network, pure in ``(params, seed)``.

    A backbone gives every producer an outgoing edge and every consumer an
    incoming one (through regular nodes when there are any); the remaining
    edges are drawn from the admissible pairs without repetition.
    """
    P, C, R = params.n_producers, params.n_consumers, params.n_regular
    if P < 1 or C < 1 or R < 0:
        raise NetworkError("need at least one producer and one consumer")
    if not 0 <= params.n_unreliable <= params.n_edges:
        raise NetworkError("n_unreliable must lie between 0 and n_edges")
    lo, hi = params.reliability_range
    if not (0.0 <= lo <= hi <= 1.0):
        raise NetworkError("reliability_range must sit inside [0, 1]")
    if params.n_unreliable and lo >= 1.0:
        raise NetworkError("unreliable edges need reliabilities below 1")
    rng = np.random.default_rng(seed)
    prod = [f"P{i + 1}" for i in range(P)]
    cons = [f"C{i + 1}" for i in range(C)]
    reg = [f"R{i + 1}" for i in range(R)]

    backbone: list[tuple[str, str]] = []
    if R:
        for i, p in enumerate(prod):
            backbone.append((p, reg[i % R]))
        for i, c in enumerate(cons):
            backbone.append((reg[(i + P) % R], c))
        for r in reg:
            if not any(d == r for _, d in backbone):
                backbone.append((prod[int(rng.integers(P))], r))
            if not any(s == r for s, _ in backbone):
                backbone.append((r, cons[int(rng.integers(C))]))
    else:
        for i in range(max(P, C)):
            backbone.append((prod[i % P], cons[i % C]))
    backbone = list(dict.fromkeys(backbone))
    candidates = [(p, r) for p in prod for r in reg]
    candidates += [(a, b) for a in reg for b in reg if a != b]
    candidates += [(r, c) for r in reg for c in cons]
    candidates += [(p, c) for p in prod for c in cons]
    extra = [pair for pair in candidates if pair not in set(backbone)]
    if params.n_edges < len(backbone):
        raise NetworkError(f"n_edges={params.n_edges} cannot connect the nodes; need {len(backbone)}")
    if params.n_edges > len(backbone) + len(extra):
        raise NetworkError(f"n_edges={params.n_edges} exceeds the {len(backbone) + len(extra)} admissible pairs")
    picks = rng.choice(len(extra), size=params.n_edges - len(backbone), replace=False)
    pairs = backbone + [extra[int(i)] for i in sorted(picks)]
    unreliable = set(int(i) for i in rng.choice(len(pairs), size=params.n_unreliable, replace=False))

    nodes: list[NodeSpec] = []
    for p in prod:
        buy = _uniform(rng, params.purchase_range)
        refund = round(buy * rng.uniform(*params.refund_ratio_range), 6)
        nodes.append(NodeSpec(p, PRODUCER, _uniform(rng, params.node_capacity_range), buy, refund))
    for c in cons:
        sell = _uniform(rng, params.sale_range)
        penalty = round(sell * rng.uniform(*params.penalty_ratio_range), 6)
        nodes.append(NodeSpec(c, CONSUMER, _uniform(rng, params.node_capacity_range), sell, penalty))
    for r in reg:
        cap = _uniform(rng, params.regular_capacity_range) if params.regular_capacity_range else math.inf
        nodes.append(NodeSpec(r, REGULAR, cap))
    edges = []
    for i, (a, b) in enumerate(pairs):
        cap = _uniform(rng, params.capacity_range)
        rel = 1.0
        if i in unreliable:
            rel = min(_uniform(rng, params.reliability_range), 1.0 - 1e-6)
        edges.append(EdgeSpec(a, b, cap, rel))
    net = NetworkSpec(tuple(nodes), tuple(edges))
    require_valid(net)
    return net


# ---------------------------------------------------------------------------
# file formats


def _num(v: float | None):
    if v is None:
        return None
    return None if math.isinf(v) else float(v)


def network_to_dict(net: NetworkSpec) -> dict:
    nodes = []
    for nd in net.nodes:
        d = {"id": nd.id, "kind": nd.kind, "capacity": _num(nd.capacity)}
        if nd.price_stage1 is not None:
            d["price_stage1"] = float(nd.price_stage1)
        if nd.price_stage2 is not None:
            d["price_stage2"] = float(nd.price_stage2)
        nodes.append(d)
    edges = [
        {"from": e.src, "to": e.dst, "capacity": float(e.capacity), "reliability": float(e.reliability)}
        for e in net.edges
    ]
    return {"nodes": nodes, "edges": edges}


def network_from_dict(doc) -> NetworkSpec:
    try:
        nodes = []
        for d in doc["nodes"]:
            cap = d.get("capacity")
            nodes.append(
                NodeSpec(
                    id=str(d["id"]),
                    kind=d["kind"],
                    capacity=math.inf if cap is None else cap,
                    price_stage1=d.get("price_stage1"),
                    price_stage2=d.get("price_stage2"),
                )
            )
        edges = [EdgeSpec(str(d["from"]), str(d["to"]), d["capacity"], d.get("reliability", 1.0)) for d in doc["edges"]]
    except (KeyError, TypeError, AttributeError) as exc:
        raise NetworkFormatError(f"malformed network document: {exc!r}") from exc
    return NetworkSpec(tuple(nodes), tuple(edges))


def dumps_network(net: NetworkSpec) -> str:
    return json.dumps(network_to_dict(net), indent=2) + "\n"


def save_network(net: NetworkSpec, path: str | Path) -> None:
    Path(path).write_text(dumps_network(net), encoding="utf-8")


def load_network(path: str | Path) -> NetworkSpec:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise NetworkFormatError(f"{path}: top level must be an object")
    return network_from_dict(doc)


def scenarios_to_dict(scen: ScenarioSet) -> dict:
    return {
        "k": scen.k,
        "scenarios": [{"bits": bits_to_str(row), "probability": float(p)} for row, p in zip(scen.bits, scen.probabilities)],
    }


def scenarios_from_dict(doc) -> ScenarioSet:
    try:
        k = int(doc["k"])
        rows = [(str_to_bits(s["bits"]), float(s["probability"])) for s in doc["scenarios"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkFormatError(f"malformed scenario document: {exc!r}") from exc
    if any(len(b) != k for b, _ in rows):
        raise NetworkFormatError("scenario bit-strings disagree with k")
    return ScenarioSet.explicit([FailureScenario(b, p) for b, p in rows]) if rows else ScenarioSet.bernoulli(k)


def save_scenarios(scen: ScenarioSet, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenarios_to_dict(scen), indent=2) + "\n", encoding="utf-8")


def load_scenarios(path: str | Path) -> ScenarioSet:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"{path}: {exc}") from exc
    return scenarios_from_dict(doc)
