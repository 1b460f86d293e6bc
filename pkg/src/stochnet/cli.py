"""``stochnet`` command line: validate, generate, solve, evaluate, experiment, bounds.

Exit codes: 0 success, 1 domain violation (invalid network, allocation or
bound query, enumeration cap, oversized LP), 2 I/O or parse error,
3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import warnings

from .bounds import BoundQuery, theorem1_bound, theorem2_bound, theorem3_bound
from .experiment import load_plan, run_experiment
from .lp import LPError, NumericalFailure
from .network import (
    GeneratorParams,
    NetworkError,
    NetworkFormatError,
    generate_random_network,
    load_network,
    require_valid,
    save_network,
    validate_network,
)
from .saa import deterministic_plan, derive_seed, mean_plan, saa_optimize, subselect_optimize
from .twostage import (
    exact_evaluate,
    exact_optimize,
    load_allocation,
    mc_evaluate,
    recourse_range,
    recourse_range_bound,
    save_allocation,
)

EXIT_OK, EXIT_DOMAIN, EXIT_IO, EXIT_SOLVER = 0, 1, 2, 3


def _load_valid(path):
    net = load_network(path)
    require_valid(net)
    return net


def _ms(t0: float) -> float:
    return (time.perf_counter() - t0) * 1e3


def cmd_validate(args) -> int:
    rep = validate_network(load_network(args.network))
    for w in rep.warnings:
        print(f"warning: {w}")
    if rep.ok:
        print(f"ok: {args.network}")
        return EXIT_OK
    for v in rep.violations:
        print(f"violation: {v}")
    return EXIT_DOMAIN


def cmd_generate(args) -> int:
    params = GeneratorParams(
        n_producers=args.producers,
        n_consumers=args.consumers,
        n_regular=args.regular,
        n_edges=args.edges,
        n_unreliable=args.unreliable,
        capacity_range=tuple(args.capacity),
        node_capacity_range=tuple(args.node_capacity),
        reliability_range=tuple(args.reliability),
        regular_capacity_range=tuple(args.regular_capacity) if args.regular_capacity else None,
    )
    net = generate_random_network(params, args.seed)
    save_network(net, args.output)
    print(f"seed={args.seed} k={net.k} scenario_space={2**net.k}")
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_solve(args) -> int:
    net = _load_valid(args.network)
    t0 = time.perf_counter()
    info = f"method={args.method}"
    if args.method == "exact":
        x, obj = exact_optimize(net, cap=args.cap)
    elif args.method == "deterministic":
        x, obj = deterministic_plan(net)
    elif args.method == "mean":
        x, obj = mean_plan(net)
    elif args.method == "saa":
        res = saa_optimize(net, args.n, args.seed)
        x, obj = res.allocation, res.saa_objective
        info += f" n={args.n} seed={args.seed} n_distinct={res.n_distinct}"
    else:
        n2 = 2 * args.n1 if args.n2 is None else args.n2
        sub = subselect_optimize(net, args.k, args.n1, n2, args.seed)
        x, obj = sub.allocation, sub.saa_objective
        info += (
            f" k={args.k} n1={args.n1} n2={n2} seed={args.seed}"
            f" chosen={sub.chosen} chosen_seed={derive_seed(args.seed, sub.chosen)}"
        )
    elapsed = _ms(t0)
    print(info)
    print(f"objective={obj!r}")
    print(f"wall_time_ms={elapsed:.3f}")
    if args.output:
        save_allocation(x, args.output)
        print(f"wrote {args.output}")
    else:
        print(json.dumps(x.to_dict(), indent=2))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    net = _load_valid(args.network)
    x = load_allocation(args.allocation)
    t0 = time.perf_counter()
    if args.mc is None:
        res = exact_evaluate(net, x, cap=args.cap)
    else:
        res = mc_evaluate(net, x, args.mc, args.seed)
    elapsed = _ms(t0)
    print("estimate,std_error,n_samples,wall_time_ms")
    print(f"{res.estimate!r},{res.std_error!r},{res.n_samples},{elapsed:.3f}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    plan = load_plan(args.plan)
    rows, agg = run_experiment(plan)
    print(f"wrote {len(rows)} rows to {plan.output_path}")
    if agg:
        print(f"wrote {len(agg)} aggregate rows to {plan.aggregate_path}")
    return EXIT_OK


def cmd_bounds(args) -> int:
    q_d = args.q_d
    if q_d is None:
        if args.network is None:
            raise NetworkError("give --q-d or --network")
        net = _load_valid(args.network)
        if args.allocation:
            q_d = recourse_range(net, load_allocation(args.allocation), cap=args.cap)
        else:
            q_d = recourse_range_bound(net)
    q = BoundQuery(q_d, args.epsilon, args.delta, args.x_space_size, args.n_dim, args.d_box, args.lipschitz)
    echo = f"q_d={q.q_d!r} epsilon={q.epsilon!r} delta={q.delta!r}"
    print(f"theorem1 {echo} N={theorem1_bound(q)}")
    if q.x_space_size is not None:
        print(f"theorem2 {echo} x_space_size={q.x_space_size} N={theorem2_bound(q)}")
    if None not in (q.n_dim, q.d_box, q.lipschitz_K):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            n3 = theorem3_bound(q)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        print(f"theorem3 {echo} n_dim={q.n_dim!r} d_box={q.d_box!r} lipschitz_K={q.lipschitz_K!r} N={n3}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stochnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a network file")
    v.add_argument("network")
    v.set_defaults(func=cmd_validate)

    g = sub.add_parser("generate", help="write a random network")
    g.add_argument("--producers", type=int, default=5)
    g.add_argument("--consumers", type=int, default=5)
    g.add_argument("--regular", type=int, default=6)
    g.add_argument("--edges", type=int, default=30)
    g.add_argument("--unreliable", type=int, default=22)
    g.add_argument("--capacity", type=float, nargs=2, default=(5.0, 20.0), metavar=("LO", "HI"))
    g.add_argument("--node-capacity", type=float, nargs=2, default=(10.0, 30.0), metavar=("LO", "HI"))
    g.add_argument("--reliability", type=float, nargs=2, default=(0.6, 0.95), metavar=("LO", "HI"))
    g.add_argument("--regular-capacity", type=float, nargs=2, metavar=("LO", "HI"))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="compute an allocation")
    s.add_argument("network")
    s.add_argument("--method", choices=("exact", "saa", "subselect", "deterministic", "mean"), default="saa")
    s.add_argument("--n", type=int, default=100, help="sample size for saa")
    s.add_argument("--k", type=int, default=5, help="candidates for subselect")
    s.add_argument("--n1", type=int, default=20)
    s.add_argument("--n2", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--cap", type=int, default=20, help="enumeration cap for exact")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("evaluate", help="value a fixed allocation")
    e.add_argument("network")
    e.add_argument("allocation")
    mode = e.add_mutually_exclusive_group(required=True)
    mode.add_argument("--exact", action="store_true")
    mode.add_argument("--mc", type=int, metavar="N")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--cap", type=int, default=20)
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("experiment", help="run a JSON experiment plan")
    x.add_argument("plan")
    x.set_defaults(func=cmd_experiment)

    b = sub.add_parser("bounds", help="Hoeffding sample sizes")
    b.add_argument("--q-d", type=float)
    b.add_argument("--network", help="derive q_d from a network instead")
    b.add_argument("--allocation", help="with --network: exact range for this allocation")
    b.add_argument("--cap", type=int, default=20)
    b.add_argument("--epsilon", type=float, required=True)
    b.add_argument("--delta", type=float, required=True)
    b.add_argument("--x-space-size", type=int)
    b.add_argument("--n-dim", type=float)
    b.add_argument("--d-box", type=float)
    b.add_argument("--lipschitz", type=float)
    b.set_defaults(func=cmd_bounds)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NetworkFormatError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalFailure, LPError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (NetworkError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
