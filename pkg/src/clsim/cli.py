"""Command-line entry points: run, sweep, oracle-check, selftest.

Exit codes: 0 success, 1 oracle/selftest failure, 2 bad configuration or
usage, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import random
import sys
from pathlib import Path

from . import report
from .engine import CL_MAX, CL_MIN, CLPolicy, ThresholdMap
from .netmodel import (
    FlowRequest,
    NetworkView,
    build_grid,
    constrained_dijkstra,
)
from .sim import ADAPTIVE, ConfigError, SimConfig, cell_name, run, sweep

log = logging.getLogger("clsim")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_IO = 3


def _parse_traffic(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split(":")
        return (int(lo), int(hi))
    except ValueError as exc:
        raise ConfigError(f"traffic must look like 'lo:hi', got {text!r}") from exc


def _parse_cl(text: str) -> int | str:
    if text == ADAPTIVE:
        return ADAPTIVE
    try:
        return int(text)
    except ValueError as exc:
        raise ConfigError(f"cl must be an integer or '{ADAPTIVE}', got {text!r}") from exc


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    file = Path(path)
    if not file.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(file.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def _policy_from_config(data: dict) -> CLPolicy | None:
    credits = data.get("credits_by_level")
    periods = data.get("sync_periods_ms")
    resource = data.get("resource_credits_by_level")
    if credits is None and periods is None and resource is None:
        return None
    base = CLPolicy.default()
    return CLPolicy(
        credits_by_level={int(k): v for k, v in (credits or base.credits_by_level).items()},
        sync_period_by_level={
            int(k): v for k, v in (periods or base.sync_period_by_level).items()
        },
        resource_credits_by_level=(
            {int(k): v for k, v in resource.items()} if resource else None
        ),
    )


def _thresholds_from_config(data: dict) -> ThresholdMap | None:
    thresholds = data.get("thresholds")
    if thresholds is None:
        return None
    return ThresholdMap(
        min_cost={int(k): v for k, v in thresholds["min_cost"].items()},
        max_cost={int(k): v for k, v in thresholds["max_cost"].items()},
    )


def _build_sim_config(args, file_cfg: dict) -> SimConfig:
    merged = dict(file_cfg)
    overrides = {
        "n_controllers": args.controllers,
        "grid_size": args.grid,
        "traffic_range": _parse_traffic(args.traffic) if args.traffic else None,
        "cl": _parse_cl(args.cl) if args.cl is not None else None,
        "total_requests": args.requests,
        "seed": args.seed,
        "mode": args.mode,
    }
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    if "traffic_range" in merged:
        merged["traffic_range"] = tuple(merged["traffic_range"])
    policy = _policy_from_config(merged)
    thresholds = _thresholds_from_config(merged)
    known = {
        "n_controllers",
        "grid_size",
        "traffic_range",
        "cl",
        "total_requests",
        "seed",
        "mode",
        "observation_window",
        "conflict_weight",
        "subopt_weight",
        "resolution_strategy",
        "initial_level",
        "sync_on_first_exhaustion",
        "lease_execution_credits",
        "arrival_spacing_us",
        "propagation_delay_us",
        "neighborhood",
        "debug_checks",
    }
    unknown = set(merged) - known - {"credits_by_level", "sync_periods_ms", "resource_credits_by_level", "thresholds"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    fields = {k: v for k, v in merged.items() if k in known}
    return SimConfig(policy=policy, thresholds=thresholds, **fields)


# -- subcommands ---------------------------------------------------------------


def cmd_run(args) -> int:
    config = _build_sim_config(args, _load_config_file(args.config))
    out = Path(args.out)
    result = run(config)
    try:
        out.mkdir(parents=True, exist_ok=True)
        report.write_records_csv(out / "records.csv", result.records)
        report.write_summary_json(out / "summary.json", result.summary.to_dict())
    except OSError as exc:
        print(f"error: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_IO
    s = result.summary
    print(
        f"run complete: {s.records_total} records, mean suboptimality "
        f"{s.mean_subopt * 100:.3f}%, p99 {s.p99_subopt * 100:.3f}%, "
        f"{s.sync_rounds} sync rounds -> {out}"
    )
    return EXIT_OK


def _sweep_cells(args, file_cfg: dict) -> list[SimConfig]:
    axes = file_cfg.get("axes", {})
    grids = args.grids or axes.get("grids") or [25]
    cls_axis = args.cls or axes.get("cls") or [11]
    traffics = args.traffics or axes.get("traffics") or [[1, 10]]
    controllers = args.controller_axis or axes.get("controllers") or [3]
    if not (grids and cls_axis and traffics and controllers):
        raise ConfigError("sweep axes must be non-empty")
    base = {
        k: v
        for k, v in file_cfg.items()
        if k not in ("axes", "requests_per_cell")
    }
    requests = args.requests or file_cfg.get("requests_per_cell") or 5000
    cells = []
    for n, grid, cl, traffic in itertools.product(controllers, grids, cls_axis, traffics):
        merged = dict(base)
        merged.update(
            n_controllers=int(n),
            grid_size=int(grid),
            cl=cl if cl == ADAPTIVE else int(cl),
            traffic_range=tuple(traffic),
            total_requests=int(requests),
            seed=int(args.seed if args.seed is not None else base.get("seed", 0)),
        )
        cells.append(SimConfig(**merged))
    return cells


def cmd_sweep(args) -> int:
    file_cfg = _load_config_file(args.config)
    cells = _sweep_cells(args, file_cfg)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create sweep dir: {exc}", file=sys.stderr)
        return EXIT_IO
    results = sweep(cells, out_dir=str(out), parallel=args.parallel)
    try:
        report.write_summary_json(out / "index.json", {"cells": results})
        report.write_fig3_csv(out / "fig3.csv", results)
        report.write_fig4_csv(out / "fig4.csv", results)
        report.write_fig5_csv(out / "fig5.csv", results)
        report.write_fig6_csv(out / "fig6.csv", results)
    except OSError as exc:
        print(f"error: cannot write sweep outputs: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"sweep complete: {len(results)} cells -> {out}")
    return EXIT_OK


# -- oracle suites -------------------------------------------------------------


def _enumerate_best_path(view: NetworkView, request: FlowRequest):
    topo = view.topo
    cap = topo.capacity
    bw = request.bandwidth
    best = None
    stack = [(request.src, (request.src,), 0, frozenset([request.src]))]
    while stack:
        v, path, cost, seen = stack.pop()
        if v == request.dst:
            key = (cost, len(path) - 1, path)
            if best is None or key < best:
                best = key
            continue
        for w, eid in topo.out_adj[v]:
            if w in seen or view.reserved[eid] + bw > cap:
                continue
            stack.append((w, path + (w,), cost + view.count[eid], seen | {w}))
    return None if best is None else best[2]


def _oracle_dijkstra_enum(trials: int, seed: int, inject_fault: bool) -> tuple[int, str]:
    rng = random.Random(seed)
    for trial in range(trials):
        rows, cols = rng.randint(2, 4), rng.randint(2, 4)
        topo = build_grid(rows, cols)
        view = NetworkView(topo)
        for eid in range(topo.n_edges):
            for f in range(rng.randint(0, 3)):
                view.add_flow_on_edge(eid, trial * 100000 + eid * 10 + f, rng.randint(1, 300))
        src = rng.randrange(topo.n_vertices)
        dst = rng.randrange(topo.n_vertices - 1)
        if dst >= src:
            dst += 1
        request = FlowRequest(trial, src, dst, rng.randint(1, 30))
        fast = constrained_dijkstra(view, request)
        slow = _enumerate_best_path(view, request)
        if inject_fault and slow is not None and len(slow) > 2:
            slow = slow[:1] + slow[2:]  # deliberately corrupt the oracle answer
        if fast != slow:
            return trial, (
                f"counterexample at trial {trial}: seed={seed} grid={rows}x{cols} "
                f"src={src} dst={dst} bw={request.bandwidth} fast={fast} slow={slow}"
            )
    return trials, ""


def _oracle_replay_identity(seed: int) -> tuple[int, str]:
    checked = 0
    for grid, requests in ((5, 800), (8, 600)):
        config = SimConfig(
            n_controllers=1, grid_size=grid, total_requests=requests, seed=seed, cl=11
        )
        result = run(config)
        for record in result.records:
            if record.rejected:
                continue
            checked += 1
            live_cost = result.live_admission_costs[record.flow_id]
            if record.divergent or record.d_subopt != 1.0 or record.o_optimal != live_cost:
                return checked, (
                    f"counterexample: seed={seed} grid={grid} flow={record.flow_id} "
                    f"d={record.d_subopt} oracle={record.o_optimal} live={live_cost}"
                )
    return checked, ""


def cmd_oracle_check(args) -> int:
    failures = []
    trials, err = _oracle_dijkstra_enum(args.trials, args.seed or 1, args.inject_fault)
    print(f"dijkstra-enum: {trials}/{args.trials} ok" + (" (FAILED)" if err else ""))
    if err:
        failures.append(err)
    checked, err = _oracle_replay_identity(args.seed or 1)
    print(f"serialized-replay: {checked} flows identical" + (" (FAILED)" if err else ""))
    if err:
        failures.append(err)
    count, err = _credit_conservation_suite(args.ops, args.seed or 1)
    print(f"credit-conservation: {count} ops conserved" + (" (FAILED)" if err else ""))
    if err:
        failures.append(err)
    if failures:
        print(failures[0], file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def _credit_conservation_suite(n_ops: int, seed: int) -> tuple[int, str]:
    from .credits import (
        ExecutionCreditAccount,
        ResourceCreditAccount,
        lease_tokens,
        refresh_execution,
    )
    from .engine import DEFAULT_CREDITS_BY_LEVEL

    # Random frees trip the designed clamp warning constantly; keep it quiet.
    logging.getLogger("clsim.credits").setLevel(logging.ERROR)
    rng = random.Random(seed)
    n = rng.randint(3, 15)
    share = rng.randint(10, 200)
    resource = [ResourceCreditAccount("bw", sup=share) for _ in range(n)]
    execution = [ExecutionCreditAccount("add-flow", allotted=share) for _ in range(n)]
    sup_total = share * n
    allot_total = share * n
    for i in range(n_ops):
        op = rng.randrange(5)
        idx = rng.randrange(n)
        if op == 0:
            resource[idx].decr(rng.randint(1, share))
        elif op == 1:
            resource[idx].incr(rng.randint(1, share))
        elif op == 2:
            execution[idx].consume()
        elif op == 3:
            donors = [(j, resource[j]) for j in range(n) if j != idx]
            lease_tokens((idx, resource[idx]), donors, rng.randint(1, share))
        else:
            level = rng.randint(CL_MIN, CL_MAX)
            refresh_execution(execution, DEFAULT_CREDITS_BY_LEVEL, level)
            allot_total = DEFAULT_CREDITS_BY_LEVEL[level] * n
        if sum(a.sup for a in resource) != sup_total:
            return i, f"counterexample: resource sup total drifted at op {i}, seed={seed}"
        if sum(a.allotted for a in execution) != allot_total:
            return i, f"counterexample: execution total drifted at op {i}, seed={seed}"
        for acct in resource:
            if not acct.inf <= acct.reserved <= acct.sup:
                return i, f"counterexample: bounds violated at op {i}, seed={seed}"
    return n_ops, ""


def cmd_selftest(args) -> int:
    from .engine import ThresholdMap as TM
    from .engine import adapt_cl

    thresholds = TM(
        min_cost={cl: 1.0 for cl in range(CL_MIN, CL_MAX + 1)},
        max_cost={cl: 10.0 for cl in range(CL_MIN, CL_MAX + 1)},
    )
    for level in range(CL_MIN, CL_MAX + 1):
        assert adapt_cl(100.0, level, thresholds) == max(CL_MIN, level - 1)
        assert adapt_cl(0.0, level, thresholds) == min(CL_MAX, level + 1)
        assert adapt_cl(5.0, level, thresholds) == level
    config = SimConfig(n_controllers=2, grid_size=5, total_requests=300, seed=1)
    first = run(config)
    second = run(config)
    if [r.d_subopt for r in first.records] != [r.d_subopt for r in second.records]:
        print("selftest: determinism violated", file=sys.stderr)
        return EXIT_FAIL
    trials, err = _oracle_dijkstra_enum(60, seed=5, inject_fault=False)
    if err:
        print(f"selftest: {err}", file=sys.stderr)
        return EXIT_FAIL
    print("selftest: ok")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part]


def _traffic_list(text: str) -> list[list[int]]:
    return [list(_parse_traffic(part)) for part in text.split(",") if part]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clsim",
        description="Simulate an SDN controller cluster under adaptive eventual consistency.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser(
        "run", help="run one simulation", formatter_class=argparse.ArgumentDefaultsHelpFormatter
    )
    p_run.add_argument("--config", help="JSON config file")
    p_run.add_argument("--grid", type=int, help="grid side length (rows = cols)")
    p_run.add_argument("--controllers", type=int, help="number of controller replicas")
    p_run.add_argument("--cl", help=f"consistency level {CL_MIN}..{CL_MAX} or '{ADAPTIVE}'")
    p_run.add_argument("--traffic", help="uniform bandwidth range, e.g. 1:10 (Mbps)")
    p_run.add_argument("--requests", type=int, help="total flow requests")
    p_run.add_argument("--seed", type=int, help="PRNG seed")
    p_run.add_argument("--mode", choices=["execution", "resource"], help="credit mode")
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser(
        "sweep",
        help="run a config grid and emit figure-ready aggregates",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p_sweep.add_argument("--config", help="JSON sweep spec with an 'axes' object")
    p_sweep.add_argument("--grids", type=_int_list, help="comma list of grid sizes")
    p_sweep.add_argument("--cls", type=_int_list, dest="cls", help="comma list of consistency levels")
    p_sweep.add_argument(
        "--traffics", type=_traffic_list, help="comma list of lo:hi traffic ranges"
    )
    p_sweep.add_argument(
        "--controllers", type=_int_list, dest="controller_axis", help="comma list of cluster sizes"
    )
    p_sweep.add_argument("--requests", type=int, help="requests per cell")
    p_sweep.add_argument("--seed", type=int, help="PRNG seed for every cell")
    p_sweep.add_argument("--parallel", type=int, default=1, help="worker processes")
    p_sweep.add_argument("--out", default="sweep", help="output directory")
    p_sweep.set_defaults(func=cmd_sweep)

    p_oracle = sub.add_parser(
        "oracle-check",
        help="run the independent verification oracles",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p_oracle.add_argument("--trials", type=int, default=1000, help="routing oracle trials")
    p_oracle.add_argument("--ops", type=int, default=20000, help="credit fuzz operations")
    p_oracle.add_argument("--seed", type=int, default=1)
    p_oracle.add_argument(
        "--inject-fault",
        action="store_true",
        help="deliberately corrupt one oracle to prove the harness detects it",
    )
    p_oracle.set_defaults(func=cmd_oracle_check)

    p_self = sub.add_parser("selftest", help="fast smoke checks")
    p_self.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
