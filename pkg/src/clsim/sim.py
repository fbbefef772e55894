"""Deterministic discrete-event simulation of an SDN controller cluster.

N controller replicas admit a shared stream of flow requests on isolated
network views while spending synchronisation credits. Credit exhaustion,
timer expiry or adaptive consistency events trigger cluster-wide
synchronisation rounds: views merge, the closed period is scored against a
serialized replay oracle, credits refresh, and the consistency level may
adapt. Two runs with the same config produce bit-identical outputs.
"""

from __future__ import annotations

import enum
import heapq
import random
from collections import deque
from dataclasses import asdict, dataclass, field
from functools import reduce
from pathlib import Path
from typing import Optional, Sequence

from . import report
from .credits import ExecutionCreditAccount, ResourceCreditAccount, lease_tokens
from .engine import (
    CL_MAX,
    CL_MIN,
    CLPolicy,
    ClusterEvent,
    ReplicaEngine,
    ThresholdMap,
)
from .netmodel import (
    FlowRequest,
    NetworkView,
    OracleEntry,
    STREAM_WORKLOAD,
    SuboptimalityRecord,
    Topology,
    build_grid,
    constrained_dijkstra,
    mix64,
    place_flow,
    serialized_oracle,
)
from .state import (
    NetDelta,
    ResolutionStrategy,
    StateFragment,
    VersionVector,
    fold_deltas,
    vv_merge,
)

STATE_ID = "network-view"

ADAPTIVE = "adaptive"


class ConfigError(ValueError):
    """Simulation configuration that violates a documented invariant."""


class EventKind(enum.IntEnum):
    # Numeric value doubles as the within-instant processing priority.
    CLUSTER_SYNC = 0
    CL_MOD = 1
    TOKEN_LEASE = 2
    TIMER_EXPIRY = 3
    FLOW_ARRIVAL = 4


@dataclass(frozen=True)
class SimEvent:
    time: int  # microseconds
    kind: EventKind
    controller: int
    seq: int

    def key(self) -> tuple[int, int, int, int]:
        return (self.time, int(self.kind), self.controller, self.seq)


@dataclass(frozen=True)
class SimConfig:
    n_controllers: int = 3
    grid_size: int = 25
    traffic_range: tuple[int, int] = (1, 10)
    cl: int | str = 11  # 1..11 or "adaptive"
    total_requests: int = 1000
    seed: int = 0
    mode: str = "execution"  # "execution" | "resource"
    observation_window: int = 32
    conflict_weight: float = 1.0
    subopt_weight: float = 1.0
    resolution_strategy: str = "lww"  # "lww" | "priority" | "invalidate"
    initial_level: int = 8  # starting level in adaptive mode
    sync_on_first_exhaustion: bool = False
    lease_execution_credits: bool = False
    arrival_spacing_us: int = 1
    propagation_delay_us: int = 0
    neighborhood: str = "von_neumann"
    eviction_scope: str = "flow"  # "flow": tear down whole flow; "edge": free hot edge only
    debug_checks: bool = False
    policy: Optional[CLPolicy] = None
    thresholds: Optional[ThresholdMap] = None

    def __post_init__(self) -> None:
        if not 1 <= self.n_controllers <= 15:
            raise ConfigError("n_controllers must be in [1, 15]")
        if not 5 <= self.grid_size <= 25:
            raise ConfigError("grid_size must be in [5, 25]")
        lo, hi = self.traffic_range
        if not (1 <= lo <= hi <= 30):
            raise ConfigError("traffic_range must satisfy 1 <= lo <= hi <= 30")
        if self.total_requests < 1:
            raise ConfigError("total_requests must be at least 1")
        if self.cl != ADAPTIVE and not (
            isinstance(self.cl, int) and CL_MIN <= self.cl <= CL_MAX
        ):
            raise ConfigError(f"cl must be {CL_MIN}..{CL_MAX} or '{ADAPTIVE}'")
        if self.mode not in ("execution", "resource"):
            raise ConfigError("mode must be 'execution' or 'resource'")
        if self.observation_window < 1:
            raise ConfigError("observation_window must be positive")
        if not CL_MIN <= self.initial_level <= CL_MAX:
            raise ConfigError("initial_level outside the level range")
        if self.arrival_spacing_us < 0 or self.propagation_delay_us < 0:
            raise ConfigError("time deltas must be non-negative")
        if self.eviction_scope not in ("flow", "edge"):
            raise ConfigError("eviction_scope must be 'flow' or 'edge'")
        try:
            ResolutionStrategy(self.resolution_strategy)
        except ValueError as exc:
            raise ConfigError(f"unknown resolution_strategy {self.resolution_strategy!r}") from exc

    def start_level(self) -> int:
        return self.initial_level if self.cl == ADAPTIVE else int(self.cl)

    def resolved_policy(self) -> CLPolicy:
        return self.policy or CLPolicy.default()

    def resolved_thresholds(self) -> ThresholdMap:
        if self.thresholds is not None:
            return self.thresholds
        if self.cl == ADAPTIVE:
            return ThresholdMap.default(self.resolved_policy(), self.subopt_weight)
        # Fixed-CL experiment mode: thresholds that can never fire.
        return ThresholdMap.disabled()

    def identity(self) -> dict:
        return {
            "n_controllers": self.n_controllers,
            "grid_size": self.grid_size,
            "traffic_range": list(self.traffic_range),
            "cl": self.cl,
            "total_requests": self.total_requests,
            "seed": self.seed,
            "mode": self.mode,
            "resolution_strategy": self.resolution_strategy,
        }


@dataclass
class RunSummary:
    config: dict
    records_total: int
    records_scored: int
    admitted: int
    rejected: int
    divergent: int
    requeued: int
    mean_subopt: float
    p50_subopt: float
    p95_subopt: float
    p99_subopt: float
    fraction_suboptimal: float
    sync_rounds: int
    conflict_pairs: int
    conflict_edges: int
    messages_sent: int
    cl_mod_events: int
    lease_grants: int
    final_levels: list[int]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunResult:
    config: SimConfig
    summary: RunSummary
    records: list[SuboptimalityRecord]
    live_paths: dict[int, tuple[int, ...]] = field(default_factory=dict)
    live_admission_costs: dict[int, int] = field(default_factory=dict)
    final_views: list[NetworkView] = field(default_factory=list)


def generate_workload(config: SimConfig, topo: Topology) -> list[FlowRequest]:
    """Uniform src/dst pairs and uniform bandwidth from the traffic range."""
    rng = random.Random(mix64(config.seed, STREAM_WORKLOAD))
    lo, hi = config.traffic_range
    requests = []
    for i in range(config.total_requests):
        src = rng.randrange(topo.n_vertices)
        dst = rng.randrange(topo.n_vertices - 1)
        if dst >= src:
            dst += 1
        requests.append(FlowRequest(i, src, dst, rng.randint(lo, hi)))
    return requests


class _Controller:
    """Mutable per-replica state owned by the event loop."""

    __slots__ = (
        "id",
        "view",
        "engine",
        "exec_account",
        "edge_accounts",
        "pending_ops",
        "version",
        "stalled",
        "buffer",
        "timer_epoch",
        "last_update_us",
        "admitted_flows",
    )

    def __init__(self, cid: int, topo: Topology, config: SimConfig, level: int):
        self.id = cid
        self.view = NetworkView(topo, owner=cid)
        policy = config.resolved_policy()
        self.engine = ReplicaEngine(
            replica_id=cid,
            state_id=STATE_ID,
            policy=policy,
            thresholds=config.resolved_thresholds(),
            strategy=ResolutionStrategy(config.resolution_strategy),
            level=level,
            observation_window=config.observation_window,
            conflict_weight=config.conflict_weight,
            subopt_weight=config.subopt_weight,
        )
        self.exec_account = ExecutionCreditAccount(
            "add-flow", allotted=policy.credits_by_level[level]
        )
        self.edge_accounts: dict[int, ResourceCreditAccount] = {}
        if config.mode == "resource":
            share = _resource_share(config, policy, level, topo.capacity, cid)
            self.edge_accounts = {
                eid: ResourceCreditAccount(f"bw:{eid}", sup=share)
                for eid in range(topo.n_edges)
            }
        self.pending_ops: list = []
        self.version = VersionVector()
        self.stalled = False
        self.buffer: deque[tuple[int, FlowRequest]] = deque()
        self.timer_epoch = 0
        self.last_update_us = 0
        self.admitted_flows: list[int] = []

    def fragment(self) -> StateFragment:
        return StateFragment(
            state_id=STATE_ID,
            payload=NetDelta(tuple(self.pending_ops)),
            version=self.version,
            origin=self.id,
            stamp=self.last_update_us,
        )

    def dirty(self) -> bool:
        return bool(self.pending_ops)


def _resource_share(
    config: SimConfig, policy: CLPolicy, level: int, capacity: int, cid: int
) -> int:
    """Per-controller escrow share of one edge's capacity."""
    if policy.resource_credits_by_level is not None:
        return policy.resource_credits_by_level[level]
    n = config.n_controllers
    base, remainder = divmod(capacity, n)
    return base + (1 if cid < remainder else 0)


class _Simulation:
    def __init__(self, config: SimConfig):
        self.config = config
        self.topo = build_grid(
            config.grid_size, config.grid_size, neighborhood=config.neighborhood
        )
        self.policy = config.resolved_policy()
        level = config.start_level()
        self.controllers = [
            _Controller(cid, self.topo, config, level)
            for cid in range(config.n_controllers)
        ]
        for c in self.controllers:
            c.engine.set_emitter(self._collect_engine_event)
        self.workload = generate_workload(config, self.topo)
        self.shared_base = NetworkView(self.topo, owner=-1)
        self.heap: list[tuple[tuple[int, int, int, int], object]] = []
        self.seq = 0
        self.period = 0
        self.period_start_us = 0
        self.period_start_levels = [level] * config.n_controllers
        self.period_log: list[OracleEntry] = []
        self.records: list[SuboptimalityRecord] = []
        self.live_paths: dict[int, tuple[int, ...]] = {}
        self.live_admission_costs: dict[int, int] = {}
        self.outstanding = config.total_requests
        self.sync_scheduled = False
        self.sync_trigger_origin = 0
        self.now = 0
        # counters
        self.sync_rounds = 0
        self.messages = 0
        self.conflict_pairs = 0
        self.conflict_edges = 0
        self.cl_mod_events = 0
        self.lease_grants = 0
        self.requeued = 0
        self.rejected = 0
        self.admitted = 0
        self._round_events: list[ClusterEvent] = []
        self._requeued_once: set[int] = set()

    # -- event plumbing ------------------------------------------------------

    def _push(self, time: int, kind: EventKind, controller: int, payload) -> None:
        heapq.heappush(self.heap, ((time, int(kind), controller, self.seq), payload))
        self.seq += 1

    def _collect_engine_event(self, event: ClusterEvent) -> None:
        self._round_events.append(event)

    def broadcast(self, origin: int, deliveries: int | None = None) -> int:
        """Count one broadcast from ``origin`` to its peers; returns deliveries."""
        n = deliveries if deliveries is not None else self.config.n_controllers - 1
        self.messages += n
        return n

    # -- main loop ------------------------------------------------------------

    def execute(self) -> RunResult:
        cfg = self.config
        for i, request in enumerate(self.workload):
            self._push(
                i * cfg.arrival_spacing_us,
                EventKind.FLOW_ARRIVAL,
                i % cfg.n_controllers,
                request,
            )
        for c in self.controllers:
            self._schedule_timer(c, 0)
        while True:
            while self.heap and self.outstanding > 0:
                (time, kind, cid, _seq), payload = heapq.heappop(self.heap)
                self.now = time
                if kind == int(EventKind.FLOW_ARRIVAL):
                    self._on_arrival(cid, payload)
                elif kind == int(EventKind.CLUSTER_SYNC):
                    self._sync_round()
                elif kind == int(EventKind.TIMER_EXPIRY):
                    self._on_timer(cid, payload)
            # Score whatever is left in the open period; invalidation may
            # re-queue flows, in which case the loop resumes.
            if self.period_log:
                self._sync_round()
            if self.outstanding <= 0 or not self.heap:
                break
        return self._finish()

    def _schedule_timer(self, c: _Controller, now: int) -> None:
        period_us = c.engine.sync_period_us()
        c.engine.timer.reset(now, period_us)
        self._push(now + period_us, EventKind.TIMER_EXPIRY, c.id, c.timer_epoch)

    def _on_timer(self, cid: int, epoch: int) -> None:
        c = self.controllers[cid]
        if epoch != c.timer_epoch:
            return  # stale timer from before the last sync
        event = c.engine.on_timer_elapsed(self.now, c.dirty())
        if event is not None:
            self._schedule_sync(cid)
        c.timer_epoch += 1
        if self.outstanding > 0:
            self._schedule_timer(c, self.now)

    def _schedule_sync(self, origin: int) -> None:
        if self.sync_scheduled:
            return
        self.sync_scheduled = True
        self.sync_trigger_origin = origin
        self._push(self.now, EventKind.CLUSTER_SYNC, origin, None)

    # -- request handling ------------------------------------------------------

    def _on_arrival(self, cid: int, request: FlowRequest) -> None:
        c = self.controllers[cid]
        if c.stalled:
            c.buffer.append((request.flow_id, request))
            return
        if self.config.mode == "execution":
            self._admit_execution(c, request)
        else:
            self._admit_resource(c, request)

    def _admit_execution(self, c: _Controller, request: FlowRequest) -> None:
        if not c.exec_account.consume():
            if self.config.lease_execution_credits and self._lease_execution(c):
                c.exec_account.consume()
            else:
                c.buffer.append((request.flow_id, request))  # retry once post-sync
                c.stalled = True
                c.engine.on_credit_trigger()
                if self.config.sync_on_first_exhaustion or all(
                    x.stalled for x in self.controllers
                ):
                    self._schedule_sync(c.id)
                return
        self._route_and_place(c, request)

    def _lease_execution(self, c: _Controller) -> bool:
        donors = [
            (x.id, x.exec_account) for x in self.controllers if x.id != c.id
        ]
        if not donors:
            return False
        self.messages += 2 * len(donors)
        granted = lease_tokens((c.id, c.exec_account), donors, 1)
        if granted:
            self.lease_grants += granted
            return True
        return False

    def _admit_resource(self, c: _Controller, request: FlowRequest) -> None:
        # Routing prunes by link capacity only; the escrow bounds are checked
        # at reservation time, where depletion can still be cured by leasing
        # headroom from peer controllers.
        path = constrained_dijkstra(c.view, request)
        if path is None:
            self._reject(c, request)
            return
        edges = self.topo.path_edges(path)
        reserved_so_far: list[int] = []
        for eid in edges:
            acct = c.edge_accounts[eid]
            if not acct.decr(request.bandwidth):
                shortfall = acct.reserved + request.bandwidth - acct.sup
                donors = [
                    (x.id, x.edge_accounts[eid])
                    for x in self.controllers
                    if x.id != c.id
                ]
                granted = 0
                if donors:
                    self.messages += 2 * len(donors)
                    granted = lease_tokens((c.id, acct), donors, shortfall)
                    self.lease_grants += granted
                if granted < shortfall or not acct.decr(request.bandwidth):
                    for undo in reserved_so_far:
                        c.edge_accounts[undo].incr(request.bandwidth)
                    self._reject(c, request)
                    c.engine.on_credit_trigger()
                    self._schedule_sync(c.id)
                    return
            reserved_so_far.append(eid)
        self._place(c, request, path)

    def _route_and_place(self, c: _Controller, request: FlowRequest) -> None:
        path = constrained_dijkstra(c.view, request)
        if path is None:
            self._reject(c, request)
            return
        self._place(c, request, path)

    def _place(self, c: _Controller, request: FlowRequest, path: tuple[int, ...]) -> None:
        admit_cost = c.view.path_cost(path)
        ops = place_flow(c.view, request, path, self.config.seed, self.config.eviction_scope)
        if c.edge_accounts:
            # Evictions hand their bandwidth back to the evicting controller's
            # escrow; capped at its own reservation so accounting stays exact
            # (the cluster-wide rebase at the next sync squares the rest).
            for op in ops:
                if not op.add:
                    acct = c.edge_accounts[op.edge]
                    refund = min(op.bandwidth, acct.reserved)
                    if refund > 0:
                        acct.incr(refund)
        c.pending_ops.extend(ops)
        c.version = c.version.bump(c.id)
        c.last_update_us = self.now
        c.admitted_flows.append(request.flow_id)
        self.period_log.append(OracleEntry(request, c.id, True, path))
        self.live_paths[request.flow_id] = path
        self.live_admission_costs[request.flow_id] = admit_cost
        self.admitted += 1
        self.outstanding -= 1

    def _reject(self, c: _Controller, request: FlowRequest) -> None:
        self.period_log.append(OracleEntry(request, c.id, False))
        self.rejected += 1
        self.outstanding -= 1

    # -- synchronisation round --------------------------------------------------

    def _sync_round(self) -> None:
        cfg = self.config
        self.sync_scheduled = False
        self.sync_rounds += 1
        completion = self.now + cfg.propagation_delay_us
        fragments = [c.fragment() for c in self.controllers]
        # Score the closed period against the strictly serialized replay.
        scores, _oracle_view = serialized_oracle(
            self.shared_base, self.period_log, cfg.seed, cfg.eviction_scope
        )
        period_records, subopt_by_origin = self._assemble_records(scores)
        # Cross-replica conflict metric: concurrent fragments sharing edges.
        edge_sets = [f.payload.edges() for f in fragments]
        for i in range(len(fragments)):
            for j in range(i + 1, len(fragments)):
                shared = edge_sets[i] & edge_sets[j]
                if shared:
                    self.conflict_pairs += 1
                    self.conflict_edges += len(shared)
        # Merge every replica onto the same view: commutative union of deltas.
        merged = self.shared_base.copy(owner=-1)
        merged.apply_ops(fold_deltas(fragments).ops)
        joined = reduce(vv_merge, (f.version for f in fragments), VersionVector())
        # Run the per-replica engine over remote updates (conflict costs,
        # window accumulation, adaptation). CL_MOD events collect per round.
        self._round_events.clear()
        invalidated: set[int] = set()
        for c in self.controllers:
            c.engine.local_fragment = fragments[c.id]
            c.engine.subopt_cost_fn = lambda frag, m=subopt_by_origin: m.get(frag.origin, 0.0)
            for frag in fragments:
                if frag.origin == c.id:
                    continue
                c.engine.on_remote_update(frag)
            if c.engine.requeue_flows:
                invalidated.update(c.engine.requeue_flows)
                c.engine.requeue_flows.clear()
        self.broadcast(self.sync_trigger_origin)  # state fragments out
        self.broadcast(self.sync_trigger_origin)  # acks back
        for event in self._round_events:
            if event.kind == "CL_MOD":
                self.cl_mod_events += 1
                self.broadcast(event.origin)
        # Deterministic adoption of announced level changes: apply in origin
        # order; the highest-origin announcement made last wins everywhere.
        announced = [e for e in self._round_events if e.kind == "CL_MOD"]
        for event in sorted(announced, key=lambda e: e.origin):
            for c in self.controllers:
                c.engine.set_level(event.level)
        if invalidated:
            period_records = self._apply_invalidation(invalidated, merged, period_records)
        self.records.extend(period_records)
        # Everyone adopts the merged view and joined version vector.
        for c in self.controllers:
            c.view = merged.copy(owner=c.id)
            c.version = joined
            c.pending_ops.clear()
            c.admitted_flows.clear()
            c.stalled = False
        if cfg.debug_checks:
            self._debug_checks(fragments, merged, joined)
        self._refresh_credits(merged)
        self.shared_base = merged
        self.period += 1
        self.period_log = []
        self.period_start_us = completion
        self.period_start_levels = [c.engine.level for c in self.controllers]
        for c in self.controllers:
            c.timer_epoch += 1
            if self.outstanding > 0:
                self._schedule_timer(c, completion)
            for seq, request in c.buffer:
                self._push(completion, EventKind.FLOW_ARRIVAL, c.id, request)
            c.buffer.clear()

    def _assemble_records(self, scores) -> tuple[list[SuboptimalityRecord], dict[int, float]]:
        """Build period records in event order; also split the period's
        suboptimality cost by originating controller for CL accounting."""
        records: list[SuboptimalityRecord] = []
        subopt_by_origin: dict[int, float] = {}
        weight = self.config.subopt_weight
        score_iter = iter(scores)
        for entry in self.period_log:
            if not entry.admitted:
                records.append(
                    SuboptimalityRecord(
                        flow_id=entry.request.flow_id,
                        controller=entry.controller,
                        period_index=self.period,
                        o_measured=0,
                        o_optimal=0,
                        d_subopt=1.0,
                        path_len=0,
                        rejected=True,
                    )
                )
                continue
            score = next(score_iter)
            assert score.flow_id == entry.request.flow_id
            records.append(
                SuboptimalityRecord(
                    flow_id=score.flow_id,
                    controller=entry.controller,
                    period_index=self.period,
                    o_measured=score.o_measured,
                    o_optimal=score.o_optimal,
                    d_subopt=score.d_subopt,
                    path_len=len(entry.live_path) - 1,
                    divergent=score.divergent,
                )
            )
            if not score.divergent:
                subopt_by_origin[entry.controller] = subopt_by_origin.get(
                    entry.controller, 0.0
                ) + weight * (1.0 - score.d_subopt)
        return records, subopt_by_origin

    def _apply_invalidation(
        self,
        invalidated: set[int],
        merged: NetworkView,
        period_records: list[SuboptimalityRecord],
    ) -> list[SuboptimalityRecord]:
        """Roll contested flows out of the merged view and re-queue them.

        A flow is re-queued at most once; a second invalidation tears it
        down for good, otherwise two requests contesting the same corridor
        could ping-pong forever.
        """
        by_flow = {e.request.flow_id: e for e in self.period_log if e.admitted}
        torn_down = sorted(f for f in invalidated if f in by_flow)
        for flow_id in torn_down:
            for eid in range(self.topo.n_edges):
                merged.remove_flow_on_edge(eid, flow_id)
            self.admitted -= 1
            self.live_paths.pop(flow_id, None)
            self.live_admission_costs.pop(flow_id, None)
            if flow_id in self._requeued_once:
                continue
            self._requeued_once.add(flow_id)
            entry = by_flow[flow_id]
            self._push(self.now, EventKind.FLOW_ARRIVAL, entry.controller, entry.request)
            self.outstanding += 1
            self.requeued += 1
        dropped = set(torn_down)
        return [r for r in period_records if r.flow_id not in dropped]

    def _refresh_credits(self, merged: NetworkView) -> None:
        cfg = self.config
        for c in self.controllers:
            level = c.engine.level
            c.exec_account.allotted = self.policy.credits_by_level[level]
            c.exec_account.used = 0
            if cfg.mode == "resource":
                for eid, acct in c.edge_accounts.items():
                    available = max(0, self.topo.capacity - merged.reserved[eid])
                    n = cfg.n_controllers
                    base, remainder = divmod(available, n)
                    acct.sup = base + (1 if c.id < remainder else 0)
                    acct.reserved = 0

    def _debug_checks(self, fragments, merged: NetworkView, joined: VersionVector) -> None:
        canon = merged.canonical()
        for c in self.controllers:
            assert c.view.canonical() == canon, "replica views diverged after sync"
            for eid in range(self.topo.n_edges):
                assert c.view.count[eid] == len(c.view.flows[eid])
                assert c.view.reserved[eid] == sum(c.view.flows[eid].values())
            assert abs(c.engine.ledger.accum - sum(c.engine.ledger.window)) < 1e-12
        for fragment in fragments:
            assert joined.dominates(fragment.version), "joined vector must dominate"
        elapsed = self.now - self.period_start_us
        for cid, level in enumerate(self.period_start_levels):
            limit = int(self.policy.sync_period_by_level[level] * 1000)
            assert elapsed <= limit, (
                f"period ran {elapsed}us, above CL_{level} limit {limit}us"
            )

    # -- summary -----------------------------------------------------------------

    def _finish(self) -> RunResult:
        stats = report.suboptimality_stats(self.records)
        divergent = sum(1 for r in self.records if r.divergent)
        summary = RunSummary(
            config=self.config.identity(),
            records_total=len(self.records),
            records_scored=stats["records_scored"],
            admitted=self.admitted,
            rejected=self.rejected,
            divergent=divergent,
            requeued=self.requeued,
            mean_subopt=stats["mean_subopt"],
            p50_subopt=stats["p50_subopt"],
            p95_subopt=stats["p95_subopt"],
            p99_subopt=stats["p99_subopt"],
            fraction_suboptimal=stats["fraction_suboptimal"],
            sync_rounds=self.sync_rounds,
            conflict_pairs=self.conflict_pairs,
            conflict_edges=self.conflict_edges,
            messages_sent=self.messages,
            cl_mod_events=self.cl_mod_events,
            lease_grants=self.lease_grants,
            final_levels=[c.engine.level for c in self.controllers],
        )
        return RunResult(
            config=self.config,
            summary=summary,
            records=self.records,
            live_paths=self.live_paths,
            live_admission_costs=self.live_admission_costs,
            final_views=[c.view for c in self.controllers],
        )


def run(config: SimConfig) -> RunResult:
    """Run one simulation to completion."""
    return _Simulation(config).execute()


def _sweep_cell(args: tuple[int, SimConfig, Optional[str]]) -> tuple[int, dict]:
    index, config, out_dir = args
    result = run(config)
    cell = {"config": config.identity(), "summary": result.summary.to_dict()}
    if out_dir is not None:
        from pathlib import Path

        cell_dir = Path(out_dir) / cell_name(index, config)
        cell_dir.mkdir(parents=True, exist_ok=True)
        report.write_records_csv(cell_dir / "records.csv", result.records)
        report.write_summary_json(cell_dir / "summary.json", result.summary.to_dict())
        cell["path"] = cell_dir.name
    return index, cell


def cell_name(index: int, config: SimConfig) -> str:
    lo, hi = config.traffic_range
    return (
        f"cell{index:03d}_g{config.grid_size}_n{config.n_controllers}"
        f"_cl{config.cl}_p{lo}-{hi}"
    )


def sweep(
    configs: Sequence[SimConfig],
    out_dir: Optional[str] = None,
    parallel: int = 1,
) -> list[dict]:
    """Run every cell of a config grid; returns per-cell config+summary dicts.

    Cells are independent; with ``parallel`` > 1 they execute in worker
    processes. Results are ordered by cell index either way.
    """
    jobs = [(i, cfg, out_dir) for i, cfg in enumerate(configs)]
    cells: list[Optional[dict]] = [None] * len(jobs)
    if parallel > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=parallel) as pool:
            for index, cell in pool.map(_sweep_cell, jobs):
                cells[index] = cell
    else:
        for job in jobs:
            index, cell = _sweep_cell(job)
            cells[index] = cell
    return [c for c in cells if c is not None]
