"""Versioned replicated state fragments with version-vector causality tracking.

Every piece of shared controller state travels as a :class:`StateFragment`:
an immutable delta payload stamped with a :class:`VersionVector`. Replicas
compare vectors to classify update causality, merge concurrent-but-disjoint
deltas commutatively, and hand genuinely contested sub-keys to a resolution
strategy.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, NamedTuple, Optional

ControllerId = int


class Ordering(enum.Enum):
    """Causal relation between two version vectors."""

    BEFORE = "before"
    AFTER = "after"
    EQUAL = "equal"
    CONCURRENT = "concurrent"


class ResolutionStrategy(enum.Enum):
    """How contested sub-keys of concurrent deltas are reconciled."""

    LAST_WRITER_WINS = "lww"
    PRIORITY_BY_ID = "priority"
    UPDATE_INVALIDATION = "invalidate"


class ReconciliationError(Exception):
    """Raised when a merge cannot reconcile two fragments."""


@dataclass(frozen=True)
class VersionVector:
    """Map of controller id to update counter; absent entries count as 0."""

    entries: Mapping[ControllerId, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for node, counter in self.entries.items():
            if counter < 0:
                raise ValueError(f"negative counter for controller {node}")
        # Drop zero counters so {A: 0} and {} compare equal.
        object.__setattr__(
            self, "entries", {k: v for k, v in self.entries.items() if v > 0}
        )

    def counter(self, node: ControllerId) -> int:
        return self.entries.get(node, 0)

    def bump(self, node: ControllerId) -> "VersionVector":
        """Return a copy with ``node``'s counter incremented."""
        bumped = dict(self.entries)
        bumped[node] = bumped.get(node, 0) + 1
        return VersionVector(bumped)

    def merge(self, other: "VersionVector") -> "VersionVector":
        joined = dict(self.entries)
        for node, counter in other.entries.items():
            if counter > joined.get(node, 0):
                joined[node] = counter
        return VersionVector(joined)

    def compare(self, other: "VersionVector") -> Ordering:
        self_ahead = other_ahead = False
        for node in self.entries.keys() | other.entries.keys():
            a, b = self.counter(node), other.counter(node)
            if a > b:
                self_ahead = True
            elif b > a:
                other_ahead = True
        if self_ahead and other_ahead:
            return Ordering.CONCURRENT
        if self_ahead:
            return Ordering.AFTER
        if other_ahead:
            return Ordering.BEFORE
        return Ordering.EQUAL

    def dominates(self, other: "VersionVector") -> bool:
        return self.compare(other) in (Ordering.AFTER, Ordering.EQUAL)


def vv_merge(a: VersionVector, b: VersionVector) -> VersionVector:
    """Componentwise maximum of two version vectors."""
    return a.merge(b)


def vv_compare(a: VersionVector, b: VersionVector) -> Ordering:
    """Classify ``a`` relative to ``b``: before, after, equal or concurrent."""
    return a.compare(b)


class EdgeOp(NamedTuple):
    """One per-edge flow mutation inside a delta payload."""

    edge: int
    flow: int
    bandwidth: int
    add: bool


@dataclass(frozen=True)
class NetDelta:
    """Ordered list of per-edge flow add/remove operations.

    Deltas from distinct flows commute: adds target distinct (edge, flow)
    slots and removes are idempotent, so unioning two deltas and applying
    them in either order yields the same view.
    """

    ops: tuple[EdgeOp, ...] = ()

    def edges(self) -> frozenset[int]:
        return frozenset(op.edge for op in self.ops)

    def flows_added(self) -> frozenset[int]:
        return frozenset(op.flow for op in self.ops if op.add)

    def union(self, other: "NetDelta") -> "NetDelta":
        return NetDelta(self.ops + other.ops)

    def without_edges(self, edges: frozenset[int]) -> "NetDelta":
        return NetDelta(tuple(op for op in self.ops if op.edge not in edges))

    def restricted_to(self, edges: frozenset[int]) -> "NetDelta":
        return NetDelta(tuple(op for op in self.ops if op.edge in edges))

    def __len__(self) -> int:
        return len(self.ops)

    def __iter__(self) -> Iterator[EdgeOp]:
        return iter(self.ops)


@dataclass(frozen=True)
class StateFragment:
    """A versioned delta to one replicated state, as shipped between replicas."""

    state_id: str
    payload: NetDelta
    version: VersionVector
    origin: ControllerId
    stamp: int = 0  # simulated event time (microseconds); drives last-writer-wins

    def update_key(self) -> tuple[ControllerId, int]:
        """(origin, origin's counter) uniquely identifies this update."""
        return (self.origin, self.version.counter(self.origin))


class UpdateQueue:
    """FIFO buffer of outstanding remote state updates."""

    def __init__(self) -> None:
        self._pending: deque[StateFragment] = deque()

    def push(self, fragment: StateFragment) -> None:
        self._pending.append(fragment)

    def pop(self) -> StateFragment:
        return self._pending.popleft()

    def __len__(self) -> int:
        return len(self._pending)

    def __bool__(self) -> bool:
        return bool(self._pending)


def _require_same_state(local: StateFragment, remote: StateFragment) -> None:
    if local.state_id != remote.state_id:
        raise ValueError(
            f"fragments target different states: {local.state_id!r} vs {remote.state_id!r}"
        )


def contested_edges(local: StateFragment, remote: StateFragment) -> frozenset[int]:
    """Edges written by both payloads, regardless of causality."""
    return local.payload.edges() & remote.payload.edges()


def detect_conflict(local: StateFragment, remote: StateFragment) -> bool:
    """True iff the fragments are causally concurrent and write a shared edge.

    Concurrency alone is not a conflict: concurrent deltas on disjoint edges
    merge cleanly as a union.
    """
    _require_same_state(local, remote)
    if vv_compare(local.version, remote.version) is not Ordering.CONCURRENT:
        return False
    return bool(contested_edges(local, remote))


def winner_loser(
    local: StateFragment, remote: StateFragment, strategy: ResolutionStrategy
) -> tuple[StateFragment, StateFragment]:
    """Pick the surviving fragment for contested sub-keys under ``strategy``."""
    if strategy is ResolutionStrategy.LAST_WRITER_WINS:
        # Later simulated time wins; origin id breaks exact ties.
        if (remote.stamp, remote.origin) > (local.stamp, local.origin):
            return remote, local
        return local, remote
    if strategy is ResolutionStrategy.PRIORITY_BY_ID:
        if remote.origin < local.origin:
            return remote, local
        return local, remote
    raise ReconciliationError(f"no winner rule for strategy {strategy}")


def resolve_payload(
    local: StateFragment, remote: StateFragment, strategy: ResolutionStrategy
) -> tuple[NetDelta, frozenset[int]]:
    """Reconcile two concurrent payloads; returns (payload, re-queued flows).

    Contested edges keep only the winner's operations, except under
    UPDATE_INVALIDATION where both sides' contested writes are dropped and
    the flows that placed them are reported for re-queueing.
    """
    contested = contested_edges(local, remote)
    if not contested:
        return local.payload.union(remote.payload), frozenset()
    if strategy is ResolutionStrategy.UPDATE_INVALIDATION:
        dropped_local = local.payload.restricted_to(contested)
        dropped_remote = remote.payload.restricted_to(contested)
        requeue = dropped_local.flows_added() | dropped_remote.flows_added()
        payload = local.payload.without_edges(contested).union(
            remote.payload.without_edges(contested)
        )
        return payload, requeue
    winner, loser = winner_loser(local, remote, strategy)
    payload = loser.payload.without_edges(contested).union(winner.payload)
    return payload, frozenset()


def merge_fragment(
    local: StateFragment,
    remote: StateFragment,
    resolver: Optional[ResolutionStrategy] = None,
) -> StateFragment:
    """Merge a remote fragment into the local one.

    Causally ordered updates keep the later payload; concurrent disjoint
    deltas union; concurrent overlapping deltas require ``resolver``.
    The result carries the joined version vector and is only durable once
    the consistency engine commits it.
    """
    _require_same_state(local, remote)
    order = vv_compare(local.version, remote.version)
    version = vv_merge(local.version, remote.version)
    stamp = max(local.stamp, remote.stamp)
    if order is Ordering.EQUAL or order is Ordering.AFTER:
        payload = local.payload
    elif order is Ordering.BEFORE:
        payload = remote.payload
    else:
        if contested_edges(local, remote):
            if resolver is None:
                raise ReconciliationError(
                    "concurrent overlapping deltas need a resolution strategy"
                )
            payload, _ = resolve_payload(local, remote, resolver)
        else:
            payload = local.payload.union(remote.payload)
    return StateFragment(
        state_id=local.state_id,
        payload=payload,
        version=version,
        origin=local.origin,
        stamp=stamp,
    )


def fold_deltas(fragments: Iterable[StateFragment]) -> NetDelta:
    """Union all payloads in deterministic (origin, counter) order."""
    ordered = sorted(fragments, key=lambda f: f.update_key())
    ops: list[EdgeOp] = []
    for fragment in ordered:
        ops.extend(fragment.payload.ops)
    return NetDelta(tuple(ops))
