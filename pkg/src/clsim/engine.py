"""Consistency-level adaptation and per-replica state synchronisation.

Each replica runs one :class:`ReplicaEngine` per shared state. Remote
updates stream through an update queue; every processed update is charged a
conflict-resolution cost and a routing-suboptimality cost, both accumulated
over a sliding observation window. The accumulated cost drives a
threshold-based adaptation of the active consistency level: one step
stricter when the window cost exceeds the level's upper threshold, one step
more relaxed when it falls below the lower threshold.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional

from .state import (
    ControllerId,
    NetDelta,
    ReconciliationError,
    ResolutionStrategy,
    StateFragment,
    UpdateQueue,
    VersionVector,
    contested_edges,
    detect_conflict,
    merge_fragment,
    resolve_payload,
    vv_merge,
)

CL_MIN = 1
CL_MAX = 11

# Static mapping of consistency level to isolated add-flow execution credits.
DEFAULT_CREDITS_BY_LEVEL: dict[int, int] = {
    1: 2,
    2: 3,
    3: 5,
    4: 9,
    5: 17,
    6: 25,
    7: 33,
    8: 41,
    9: 49,
    10: 57,
    11: 65,
}


def default_sync_periods(step_ms: float = 50.0) -> dict[int, float]:
    """Maximum non-synchronisation period per level, in simulated ms."""
    return {cl: step_ms * cl for cl in range(CL_MIN, CL_MAX + 1)}


@dataclass(frozen=True)
class CLPolicy:
    """Static per-level mapping of credit sizes and sync periods."""

    credits_by_level: Mapping[int, int]
    sync_period_by_level: Mapping[int, float]
    resource_credits_by_level: Optional[Mapping[int, int]] = None

    def __post_init__(self) -> None:
        levels = sorted(self.credits_by_level)
        if levels != list(range(CL_MIN, CL_MAX + 1)):
            raise ValueError(f"credit map must cover levels {CL_MIN}..{CL_MAX}")
        credits = [self.credits_by_level[cl] for cl in levels]
        if any(b <= a for a, b in zip(credits, credits[1:])):
            raise ValueError("credits must be strictly increasing in level")
        periods = [self.sync_period_by_level[cl] for cl in levels]
        if any(b < a for a, b in zip(periods, periods[1:])):
            raise ValueError("sync periods must be non-decreasing in level")

    @classmethod
    def default(cls) -> "CLPolicy":
        return cls(
            credits_by_level=dict(DEFAULT_CREDITS_BY_LEVEL),
            sync_period_by_level=default_sync_periods(),
        )


@dataclass(frozen=True)
class ThresholdMap:
    """Lower/upper window-cost thresholds per consistency level."""

    min_cost: Mapping[int, float]
    max_cost: Mapping[int, float]

    def __post_init__(self) -> None:
        for cl in range(CL_MIN, CL_MAX + 1):
            if not self.min_cost[cl] < self.max_cost[cl]:
                raise ValueError(f"min_cost must stay below max_cost at CL_{cl}")

    @classmethod
    def default(cls, policy: CLPolicy, subopt_weight: float = 1.0) -> "ThresholdMap":
        # Target roughly 5% mean per-flow inefficiency over a window's worth
        # of isolated executions; the lower threshold sits at 20% of that.
        max_cost = {
            cl: 0.05 * policy.credits_by_level[cl] * subopt_weight
            for cl in range(CL_MIN, CL_MAX + 1)
        }
        min_cost = {cl: 0.2 * max_cost[cl] for cl in max_cost}
        return cls(min_cost=min_cost, max_cost=max_cost)

    @classmethod
    def disabled(cls) -> "ThresholdMap":
        """Thresholds that never trigger adaptation (fixed-CL experiment mode)."""
        inf = math.inf
        return cls(
            min_cost={cl: -inf for cl in range(CL_MIN, CL_MAX + 1)},
            max_cost={cl: inf for cl in range(CL_MIN, CL_MAX + 1)},
        )


def adapt_cl(measured_cost: float, current: int, thresholds: ThresholdMap) -> int:
    """One-step threshold adaptation of the consistency level.

    Cost above the level's upper threshold tightens (index-1); cost below
    the lower threshold relaxes (index+1); both clamp to [CL_MIN, CL_MAX].
    """
    if not CL_MIN <= current <= CL_MAX:
        raise ValueError(f"consistency level {current} outside [{CL_MIN}, {CL_MAX}]")
    if measured_cost > thresholds.max_cost[current]:
        return max(CL_MIN, current - 1)
    if measured_cost < thresholds.min_cost[current]:
        return min(CL_MAX, current + 1)
    return current


class CostLedger:
    """Ring buffer of per-iteration costs with their running sum."""

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ValueError("observation window must hold at least one entry")
        self.capacity = capacity
        self.window: deque[float] = deque()
        self.accum = 0.0

    def push(self, cost: float) -> float:
        self.window.append(cost)
        if len(self.window) > self.capacity:
            self.window.popleft()
        # Recompute instead of incrementally adjusting: the window is tiny and
        # the accumulator must equal the exact sum of retained entries.
        self.accum = sum(self.window)
        return self.accum

    def __len__(self) -> int:
        return len(self.window)


@dataclass
class SyncTimer:
    """Deadline bookkeeping for the maximum non-synchronisation period."""

    state_id: str
    last_sync: int = 0  # microseconds
    deadline: int = 0

    def reset(self, now: int, period_us: int) -> None:
        self.last_sync = now
        self.deadline = now + period_us

    def elapsed(self, now: int) -> bool:
        return now >= self.deadline


@dataclass(frozen=True)
class ResolvedConflict:
    payload: NetDelta
    cost: float
    requeue_flows: frozenset[int]


def resolve_conflict(
    local: StateFragment,
    remote: StateFragment,
    strategy: ResolutionStrategy,
    conflict_weight: float = 1.0,
) -> ResolvedConflict:
    """Reconcile two conflicting fragments and price the repair.

    The cost is ``conflict_weight`` per contested edge. UPDATE_INVALIDATION
    additionally reports the flows whose writes were rolled back so their
    requests can be re-queued.
    """
    contested = contested_edges(local, remote)
    payload, requeue = resolve_payload(local, remote, strategy)
    return ResolvedConflict(
        payload=payload,
        cost=conflict_weight * len(contested),
        requeue_flows=requeue,
    )


def compute_suboptimality_cost(
    d_subopt_values: Iterable[float], weight: float = 1.0
) -> float:
    """Weighted sum of per-flow inefficiency over the sampled records."""
    return weight * sum(1.0 - d for d in d_subopt_values)


@dataclass
class ClusterEvent:
    """Event a replica asks the cluster transport to broadcast."""

    kind: str  # "SYNC" or "CL_MOD"
    origin: ControllerId
    level: Optional[int] = None
    fragment: Optional[StateFragment] = None


class ReplicaEngine:
    """Per-replica driver for state synchronisation and CL adaptation."""

    def __init__(
        self,
        replica_id: ControllerId,
        state_id: str,
        policy: CLPolicy,
        thresholds: ThresholdMap,
        strategy: ResolutionStrategy,
        level: int,
        observation_window: int = 32,
        conflict_weight: float = 1.0,
        subopt_weight: float = 1.0,
        commit: Optional[Callable[[StateFragment], None]] = None,
        emit_event: Optional[Callable[[ClusterEvent], None]] = None,
        resolver: Optional[
            Callable[[StateFragment, StateFragment, ResolutionStrategy, float], ResolvedConflict]
        ] = None,
    ) -> None:
        if not CL_MIN <= level <= CL_MAX:
            raise ValueError(f"initial level {level} outside [{CL_MIN}, {CL_MAX}]")
        self.replica_id = replica_id
        self.state_id = state_id
        self.policy = policy
        self.thresholds = thresholds
        self.strategy = strategy
        self.level = level
        self.queue = UpdateQueue()
        self.ledger = CostLedger(observation_window)
        self.conflict_weight = conflict_weight
        self.subopt_weight = subopt_weight
        self.timer = SyncTimer(state_id)
        self.local_fragment = StateFragment(
            state_id=state_id,
            payload=NetDelta(),
            version=VersionVector(),
            origin=replica_id,
        )
        self._commit = commit or (lambda fragment: None)
        self._emit = emit_event or (lambda event: None)
        self._resolve = resolver or resolve_conflict
        self.quarantined: list[StateFragment] = []
        self.requeue_flows: list[int] = []
        self.cl_changes = 0
        # The owning application prices routing inefficiency per remote
        # update; replaced by the simulator with the period's scores.
        self.subopt_cost_fn: Callable[[StateFragment], float] = lambda fragment: 0.0

    # -- triggers -----------------------------------------------------------

    def on_remote_update(self, fragment: StateFragment) -> int:
        """Process one remote state update; returns the adapted level.

        Runs the full synchronisation step: merge, conflict cost,
        suboptimality cost, window accumulation, threshold adaptation,
        CL_MOD emission on a level change, then local commit.
        """
        self.queue.push(fragment)
        remote = self.queue.pop()
        conflict_cost = 0.0
        requeue: frozenset[int] = frozenset()
        merged: Optional[StateFragment] = None
        try:
            if detect_conflict(self.local_fragment, remote):
                resolved = self._resolve(
                    self.local_fragment, remote, self.strategy, self.conflict_weight
                )
                conflict_cost = resolved.cost
                requeue = resolved.requeue_flows
                merged = StateFragment(
                    state_id=self.state_id,
                    payload=resolved.payload,
                    version=vv_merge(self.local_fragment.version, remote.version),
                    origin=self.replica_id,
                    stamp=max(self.local_fragment.stamp, remote.stamp),
                )
            else:
                merged = merge_fragment(self.local_fragment, remote)
        except ReconciliationError:
            # Quarantine the fragment and charge the full upper threshold so
            # repeated failures push the level stricter.
            self.quarantined.append(remote)
            conflict_cost = self.thresholds.max_cost[self.level]
            merged = None
        subopt_cost = self.subopt_cost_fn(remote)
        accum = self.ledger.push(conflict_cost + subopt_cost)
        new_level = adapt_cl(accum, self.level, self.thresholds)
        if new_level != self.level:
            self.level = new_level
            self.cl_changes += 1
            self._emit(
                ClusterEvent(
                    kind="CL_MOD",
                    origin=self.replica_id,
                    level=new_level,
                    fragment=self.local_fragment if self.local_fragment.payload.ops else None,
                )
            )
        if requeue:
            self.requeue_flows.extend(sorted(requeue))
        if merged is not None:
            self._commit(merged)
        return self.level

    def on_timer_elapsed(self, now: int, dirty: bool) -> Optional[ClusterEvent]:
        """Handle expiry of the non-synchronisation timer.

        Broadcasts the pending fragment when local state changed since the
        last sync; always re-arms the timer with the active level's period.
        """
        event = None
        if dirty:
            event = ClusterEvent(
                kind="SYNC", origin=self.replica_id, fragment=self.local_fragment
            )
            self._emit(event)
        self.timer.reset(now, self.sync_period_us())
        return event

    def on_credit_trigger(self) -> ClusterEvent:
        """Credit exhaustion/depletion: broadcast pending deltas for a sync round."""
        event = ClusterEvent(
            kind="SYNC", origin=self.replica_id, fragment=self.local_fragment
        )
        self._emit(event)
        return event

    # -- helpers ------------------------------------------------------------

    def sync_period_us(self) -> int:
        return int(self.policy.sync_period_by_level[self.level] * 1000)

    def set_level(self, level: int) -> None:
        """Adopt a CL_MOD announced by a peer."""
        if not CL_MIN <= level <= CL_MAX:
            raise ValueError(f"level {level} outside [{CL_MIN}, {CL_MAX}]")
        self.level = level

    def set_emitter(self, emit_event: Callable[[ClusterEvent], None]) -> None:
        self._emit = emit_event
