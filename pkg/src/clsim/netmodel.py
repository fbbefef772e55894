"""Grid network model, constrained shortest-path routing and the replay oracle.

Edge cost is the number of flows currently placed on the edge; admission
prunes edges whose capacity would be exceeded. The path order is total and
deterministic: least cost, then fewest hops, then lexicographically smallest
vertex sequence. Determinism matters because the serialized replay oracle
must reproduce routing decisions bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from heapq import heappop, heappush
from typing import Iterable, Optional, Sequence

from .state import EdgeOp, NetDelta

CAPACITY_MBPS = 1000
EVICTION_UTILIZATION = 0.8

# Packs (cost, hops) into one integer label: label = cost * HOP_BASE + hops.
# Valid while every simple path has fewer than HOP_BASE hops.
HOP_BASE = 4096

_MASK64 = (1 << 64) - 1

# Named PRNG stream tags, all derived from the one run seed.
STREAM_WORKLOAD = 1
STREAM_EVICTION = 2


def mix64(*values: int) -> int:
    """Stable 64-bit mixer (splitmix64 finalizer chain).

    Used instead of hash() so derived randomness is identical across
    processes and Python invocations.
    """
    acc = 0x9E3779B97F4A7C15
    for value in values:
        acc = (acc ^ (value & _MASK64)) & _MASK64
        acc = (acc * 0xBF58476D1CE4E5B9) & _MASK64
        acc ^= acc >> 27
        acc = (acc * 0x94D049BB133111EB) & _MASK64
        acc ^= acc >> 31
    return acc


@dataclass(frozen=True)
class Topology:
    """Directed grid with per-edge capacity and flat adjacency tables."""

    rows: int
    cols: int
    capacity: int
    neighborhood: str
    n_vertices: int
    n_edges: int
    edge_src: tuple[int, ...]
    edge_dst: tuple[int, ...]
    out_adj: tuple[tuple[tuple[int, int], ...], ...]  # vertex -> ((nbr, edge_id), ...)
    in_adj: tuple[tuple[tuple[int, int], ...], ...]  # vertex -> ((pred, edge_id), ...)
    edge_index: dict[tuple[int, int], int] = field(repr=False, default_factory=dict)

    def vertex_id(self, row: int, col: int) -> int:
        return row * self.cols + col

    def vertex_rc(self, vertex: int) -> tuple[int, int]:
        return divmod(vertex, self.cols)

    def edge_id(self, src: int, dst: int) -> int:
        return self.edge_index[(src, dst)]

    def path_edges(self, path: Sequence[int]) -> list[int]:
        index = self.edge_index
        return [index[(path[i], path[i + 1])] for i in range(len(path) - 1)]


_NEIGHBOR_STEPS = {
    "von_neumann": ((-1, 0), (0, -1), (0, 1), (1, 0)),
    "moore": ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)),
}


def build_grid(
    rows: int,
    cols: int,
    capacity: int = CAPACITY_MBPS,
    neighborhood: str = "von_neumann",
) -> Topology:
    """Build a directed grid: both directions of every adjacency, fixed capacity."""
    if rows < 2 or cols < 2:
        raise ValueError("grid needs at least 2x2 vertices")
    if neighborhood not in _NEIGHBOR_STEPS:
        raise ValueError(f"unknown neighborhood {neighborhood!r}")
    steps = _NEIGHBOR_STEPS[neighborhood]
    n_vertices = rows * cols
    edge_src: list[int] = []
    edge_dst: list[int] = []
    edge_index: dict[tuple[int, int], int] = {}
    out_adj: list[list[tuple[int, int]]] = [[] for _ in range(n_vertices)]
    in_adj: list[list[tuple[int, int]]] = [[] for _ in range(n_vertices)]
    for row in range(rows):
        for col in range(cols):
            src = row * cols + col
            neighbors = sorted(
                (row + dr) * cols + (col + dc)
                for dr, dc in steps
                if 0 <= row + dr < rows and 0 <= col + dc < cols
            )
            for dst in neighbors:
                eid = len(edge_src)
                edge_src.append(src)
                edge_dst.append(dst)
                edge_index[(src, dst)] = eid
                out_adj[src].append((dst, eid))
    for (src, dst), eid in edge_index.items():
        in_adj[dst].append((src, eid))
    return Topology(
        rows=rows,
        cols=cols,
        capacity=capacity,
        neighborhood=neighborhood,
        n_vertices=n_vertices,
        n_edges=len(edge_src),
        edge_src=tuple(edge_src),
        edge_dst=tuple(edge_dst),
        out_adj=tuple(tuple(pairs) for pairs in out_adj),
        in_adj=tuple(tuple(sorted(pairs)) for pairs in in_adj),
        edge_index=edge_index,
    )


@dataclass(frozen=True)
class EdgeState:
    """Read-only snapshot of one edge's bookkeeping."""

    flows: dict[int, int]
    reserved_bw: int
    cost: int


@dataclass(frozen=True)
class FlowRequest:
    flow_id: int
    src: int
    dst: int
    bandwidth: int

    def __post_init__(self) -> None:
        if self.src == self.dst:
            raise ValueError("flow endpoints must differ")
        if self.bandwidth < 1:
            raise ValueError("flow bandwidth must be at least 1 Mbps")


@dataclass(frozen=True)
class SuboptimalityRecord:
    """Per-flow routing efficiency sample scored at a synchronisation point."""

    flow_id: int
    controller: int
    period_index: int
    o_measured: int
    o_optimal: int
    d_subopt: float
    path_len: int
    rejected: bool = False
    divergent: bool = False


class NetworkView:
    """One controller's isolated bookkeeping of per-edge flow placements."""

    __slots__ = ("topo", "owner", "count", "reserved", "flows", "flow_edges")

    def __init__(self, topo: Topology, owner: int = -1) -> None:
        self.topo = topo
        self.owner = owner
        self.count = [0] * topo.n_edges
        self.reserved = [0] * topo.n_edges
        self.flows: list[dict[int, int]] = [{} for _ in range(topo.n_edges)]
        # Reverse index flow -> edges it currently occupies in this view.
        self.flow_edges: dict[int, set[int]] = {}

    def copy(self, owner: Optional[int] = None) -> "NetworkView":
        dup = NetworkView.__new__(NetworkView)
        dup.topo = self.topo
        dup.owner = self.owner if owner is None else owner
        dup.count = self.count[:]
        dup.reserved = self.reserved[:]
        dup.flows = [dict(f) for f in self.flows]
        dup.flow_edges = {flow: set(edges) for flow, edges in self.flow_edges.items()}
        return dup

    def edge_state(self, eid: int) -> EdgeState:
        return EdgeState(
            flows=dict(self.flows[eid]),
            reserved_bw=self.reserved[eid],
            cost=self.count[eid],
        )

    def utilization(self, eid: int) -> float:
        return self.reserved[eid] / self.topo.capacity

    def add_flow_on_edge(self, eid: int, flow: int, bandwidth: int) -> None:
        edge_flows = self.flows[eid]
        if flow not in edge_flows:
            edge_flows[flow] = bandwidth
            self.count[eid] += 1
            self.reserved[eid] += bandwidth
            self.flow_edges.setdefault(flow, set()).add(eid)

    def remove_flow_on_edge(self, eid: int, flow: int) -> None:
        bandwidth = self.flows[eid].pop(flow, None)
        if bandwidth is not None:
            self.count[eid] -= 1
            self.reserved[eid] -= bandwidth
            edges = self.flow_edges.get(flow)
            if edges is not None:
                edges.discard(eid)
                if not edges:
                    del self.flow_edges[flow]

    def remove_flow_everywhere(self, flow: int) -> list[tuple[int, int]]:
        """Tear a flow out of every edge; returns (edge, released Mbps) pairs."""
        released = []
        for eid in sorted(self.flow_edges.get(flow, ())):
            released.append((eid, self.flows[eid][flow]))
            self.remove_flow_on_edge(eid, flow)
        return released

    def apply_ops(self, ops: Iterable[EdgeOp]) -> None:
        for op in ops:
            if op.add:
                self.add_flow_on_edge(op.edge, op.flow, op.bandwidth)
            else:
                self.remove_flow_on_edge(op.edge, op.flow)

    def path_cost(self, path: Sequence[int]) -> int:
        count = self.count
        index = self.topo.edge_index
        return sum(count[index[(path[i], path[i + 1])]] for i in range(len(path) - 1))

    def canonical(self) -> tuple:
        """Order-independent snapshot for equality checks across replicas."""
        return tuple(
            (eid, self.reserved[eid], tuple(sorted(self.flows[eid].items())))
            for eid in range(self.topo.n_edges)
            if self.flows[eid]
        )


def constrained_dijkstra(view: NetworkView, request: FlowRequest) -> Optional[tuple[int, ...]]:
    """Cheapest feasible path under (cost, hops, lexicographic) order.

    Edges whose remaining capacity cannot fit the request are pruned before
    the search. Runs one backward Dijkstra from the destination with packed
    (cost, hops) labels, then walks forward from the source always taking the
    smallest neighbor that stays on an optimal continuation; the walk yields
    the lexicographically smallest vertex sequence among all optimal paths.
    Returns None when pruning disconnects src from dst.
    """
    topo = view.topo
    src, dst = request.src, request.dst
    bw = request.bandwidth
    cap = topo.capacity
    reserved = view.reserved
    count = view.count
    in_adj = topo.in_adj
    unreached = 1 << 62
    dist = [unreached] * topo.n_vertices
    dist[dst] = 0
    heap: list[tuple[int, int]] = [(0, dst)]
    while heap:
        label, v = heappop(heap)
        if label != dist[v]:
            continue
        if v == src:
            break
        for u, eid in in_adj[v]:
            if reserved[eid] + bw > cap:
                continue
            candidate = label + count[eid] * HOP_BASE + 1
            if candidate < dist[u]:
                dist[u] = candidate
                heappush(heap, (candidate, u))
    if dist[src] == unreached:
        return None
    # Forward greedy walk: the first (smallest) neighbor satisfying the exact
    # label equation lies on an optimal path; labels strictly decrease, so the
    # walk terminates at dst with a simple path.
    path = [src]
    v = src
    label = dist[src]
    out_adj = topo.out_adj
    while v != dst:
        for w, eid in out_adj[v]:
            if reserved[eid] + bw > cap:
                continue
            if count[eid] * HOP_BASE + 1 + dist[w] == label:
                path.append(w)
                label = dist[w]
                v = w
                break
        else:  # pragma: no cover - would indicate a label invariant violation
            raise RuntimeError("path reconstruction lost the optimal continuation")
    return tuple(path)


def path_metrics(view: NetworkView, path: Sequence[int]) -> tuple[int, int]:
    """(total cost, hop count) of a path on this view."""
    return view.path_cost(path), len(path) - 1


def evict_if_hot(
    view: NetworkView, eid: int, trigger_flow: int, seed: int
) -> Optional[tuple[int, int]]:
    """Evict one uniformly chosen flow if the edge runs above 80% utilization.

    Returns (evicted flow, released Mbps) or None. The victim draw is a pure
    function of (seed, trigger flow, edge), so the serialized replay makes
    identical choices whenever it sees identical candidate sets.
    """
    victim = pick_eviction_victim(view, eid, trigger_flow, seed)
    if victim is None:
        return None
    released = view.flows[eid][victim]
    view.remove_flow_on_edge(eid, victim)
    return victim, released


def pick_eviction_victim(view: NetworkView, eid: int, trigger_flow: int, seed: int) -> Optional[int]:
    """Uniform victim draw on a hot edge, or None below the 80% threshold."""
    if view.reserved[eid] <= EVICTION_UTILIZATION * view.topo.capacity:
        return None
    candidates = sorted(view.flows[eid])
    if not candidates:
        return None
    return candidates[mix64(seed, STREAM_EVICTION, trigger_flow, eid) % len(candidates)]


def place_flow(
    view: NetworkView,
    request: FlowRequest,
    path: Sequence[int],
    seed: int,
    eviction_scope: str = "flow",
) -> list[EdgeOp]:
    """Reserve the flow on every path edge, then run hot-edge eviction.

    With ``eviction_scope="flow"`` (default) an evicted flow is torn out of
    the whole view so total load plateaus once edges start running hot; with
    ``"edge"`` eviction only frees the hot edge itself. Returns the delta
    operations (adds plus evictions) in application order, suitable for
    replication to peers.
    """
    ops: list[EdgeOp] = []
    edges = view.topo.path_edges(path)
    for eid in edges:
        view.add_flow_on_edge(eid, request.flow_id, request.bandwidth)
        ops.append(EdgeOp(eid, request.flow_id, request.bandwidth, True))
    for eid in edges:
        if eviction_scope == "edge":
            evicted = evict_if_hot(view, eid, request.flow_id, seed)
            if evicted is not None:
                victim, released = evicted
                ops.append(EdgeOp(eid, victim, released, False))
        else:
            victim = pick_eviction_victim(view, eid, request.flow_id, seed)
            if victim is not None:
                for torn_eid, released in view.remove_flow_everywhere(victim):
                    ops.append(EdgeOp(torn_eid, victim, released, False))
    return ops


@dataclass(frozen=True)
class OracleEntry:
    """One request as the live system handled it, for serialized replay."""

    request: FlowRequest
    controller: int
    admitted: bool
    live_path: Optional[tuple[int, ...]] = None


@dataclass(frozen=True)
class OracleScore:
    flow_id: int
    o_optimal: int
    o_measured: int
    d_subopt: float
    divergent: bool


def score_ratio(o_optimal: int, o_measured: int) -> float:
    """Eq-style efficiency ratio, defined as 1.0 on equal (incl. zero) costs.

    Clamped at 1.0: a stale path can only be infeasible-but-cheaper than the
    serialized optimum, never better in a way that earns credit.
    """
    if o_measured == o_optimal:
        return 1.0
    if o_measured == 0:
        return 1.0
    return min(1.0, o_optimal / o_measured)


def serialized_oracle(
    base_view: NetworkView,
    entries: Sequence[OracleEntry],
    seed: int,
    eviction_scope: str = "flow",
) -> tuple[list[OracleScore], NetworkView]:
    """Replay one period's requests as if strictly serialized.

    The oracle owns an authoritative copy of the period's starting view and
    admits every request in global event order with the same routing,
    pruning and eviction rules (and the same seed-derived eviction draws) as
    the live run. For each live-admitted flow it reports the serialized
    optimal cost and the serialized cost of the path the live run actually
    chose. A flow the oracle cannot route at its turn is flagged divergent.
    """
    view = base_view.copy(owner=-1)
    scores: list[OracleScore] = []
    for entry in entries:
        request = entry.request
        oracle_path = constrained_dijkstra(view, request)
        if entry.admitted:
            if oracle_path is None:
                scores.append(
                    OracleScore(
                        flow_id=request.flow_id,
                        o_optimal=0,
                        o_measured=0,
                        d_subopt=1.0,
                        divergent=True,
                    )
                )
            else:
                o_optimal = view.path_cost(oracle_path)
                o_measured = view.path_cost(entry.live_path)
                scores.append(
                    OracleScore(
                        flow_id=request.flow_id,
                        o_optimal=o_optimal,
                        o_measured=o_measured,
                        d_subopt=score_ratio(o_optimal, o_measured),
                        divergent=False,
                    )
                )
        if oracle_path is not None:
            place_flow(view, request, oracle_path, seed, eviction_scope)
    return scores, view
