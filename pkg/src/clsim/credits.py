"""Escrow accounting for bounded resource and execution credit sets.

A cluster-wide credit total is partitioned across controllers. Each
controller mutates shared state only within its local share; depleting the
share either borrows headroom from peers (token lease) or forces a
cluster-wide synchronisation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .state import ControllerId

log = logging.getLogger(__name__)


class AllocationError(ValueError):
    """Credit shares that cannot be distributed as requested."""


@dataclass
class ResourceCreditAccount:
    """Escrowed share of a divisible resource (e.g. Mbps on one edge).

    Invariant: inf <= reserved <= sup after every operation.
    """

    state_id: str
    sup: int
    inf: int = 0
    reserved: int = 0

    def __post_init__(self) -> None:
        if not self.inf <= self.reserved <= self.sup:
            raise ValueError(f"account out of bounds: {self}")

    @property
    def headroom(self) -> int:
        return self.sup - self.reserved

    def decr(self, n: int) -> bool:
        """Consume ``n`` resource tokens; False signals depletion (no mutation)."""
        if n <= 0:
            raise ValueError("token count must be positive")
        if self.reserved + n > self.sup:
            return False
        self.reserved += n
        return True

    def incr(self, n: int) -> None:
        """Produce ``n`` tokens; frees below ``inf`` clamp with a warning."""
        if n <= 0:
            raise ValueError("token count must be positive")
        freed = self.reserved - n
        if freed < self.inf:
            log.warning(
                "incr on %s clamped at inf=%d (reserved=%d, freeing %d)",
                self.state_id,
                self.inf,
                self.reserved,
                n,
            )
            freed = self.inf
        self.reserved = freed


@dataclass
class ExecutionCreditAccount:
    """Count of operation executions allowed before a sync trigger fires."""

    op_id: str
    allotted: int
    used: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.used <= max(self.allotted, 0):
            raise ValueError(f"account out of bounds: {self}")

    @property
    def headroom(self) -> int:
        return self.allotted - self.used

    def consume(self) -> bool:
        """Spend one execution credit; False signals exhaustion (a sync trigger)."""
        if self.used < self.allotted:
            self.used += 1
            return True
        return False


@dataclass(frozen=True)
class CreditAllocation:
    """Cluster-wide credit total split into per-controller shares."""

    subject: str
    total: int
    per_controller: tuple[int, ...]

    def __post_init__(self) -> None:
        if sum(self.per_controller) != self.total:
            raise AllocationError(
                f"shares {self.per_controller} do not sum to total {self.total}"
            )


def allocate(
    total: int,
    n: int,
    shares: Optional[Sequence[int]] = None,
    subject: str = "credits",
) -> CreditAllocation:
    """Split ``total`` credits across ``n`` controllers.

    Default is an equal split with the remainder handed to the lowest
    controller indices; explicit ``shares`` must sum to ``total`` exactly.
    """
    if n < 1:
        raise AllocationError("need at least one controller")
    if shares is not None:
        if len(shares) != n:
            raise AllocationError(f"expected {n} shares, got {len(shares)}")
        return CreditAllocation(subject, total, tuple(int(s) for s in shares))
    if total < n:
        raise AllocationError(f"cannot give each of {n} controllers a share of {total}")
    base, remainder = divmod(total, n)
    split = tuple(base + (1 if i < remainder else 0) for i in range(n))
    return CreditAllocation(subject, total, split)


def _transfer(donor, receiver, amount: int) -> None:
    if isinstance(donor, ResourceCreditAccount):
        donor.sup -= amount
        receiver.sup += amount
    else:
        donor.allotted -= amount
        receiver.allotted += amount


def lease_tokens(
    requester: tuple[ControllerId, ResourceCreditAccount | ExecutionCreditAccount],
    donors: Sequence[tuple[ControllerId, ResourceCreditAccount | ExecutionCreditAccount]],
    amount: int,
) -> int:
    """Borrow up to ``amount`` credits from peer accounts; returns the grant.

    Donors are visited round-robin by controller index. Each donor gives at
    most half of the headroom it held when the lease started per round; the
    rounds repeat until the request is satisfied or a full round transfers
    nothing. Transfers move ``sup`` (resource) or ``allotted`` (execution)
    on both sides, so the cluster total is conserved. A zero grant means the
    reservation fails at the caller.
    """
    if amount <= 0:
        raise ValueError("lease amount must be positive")
    _, receiver = requester
    order = sorted(donors, key=lambda pair: pair[0])
    # Per-round cap pinned at lease start; halving bounds how hard one lease
    # can drain a donor per round while guaranteeing termination.
    caps = {cid: (acct.headroom + 1) // 2 for cid, acct in order}
    need = amount
    granted = 0
    while need > 0:
        moved = 0
        for cid, acct in order:
            if need <= 0:
                break
            take = min(need, caps[cid], acct.headroom)
            if take <= 0:
                continue
            _transfer(acct, receiver, take)
            need -= take
            granted += take
            moved += take
        if moved == 0:
            break
    return granted


def refresh_execution(
    accounts: Sequence[ExecutionCreditAccount],
    credits_by_level: Mapping[int, int],
    level: int,
) -> None:
    """Cluster-wide execution credit refresh at a synchronisation point."""
    allotted = credits_by_level[level]
    for acct in accounts:
        acct.allotted = allotted
        acct.used = 0


def refresh_resource(
    accounts: Sequence[ResourceCreditAccount],
    sup_by_account: Mapping[int, int] | int,
    rebased_reserved: Optional[Mapping[int, int]] = None,
) -> None:
    """Cluster-wide resource credit refresh.

    ``sup_by_account`` is either one share applied to every account or a map
    from account position to share. ``rebased_reserved`` re-bases reservations
    against the merged global view (defaults to 0).
    """
    for idx, acct in enumerate(accounts):
        sup = sup_by_account if isinstance(sup_by_account, int) else sup_by_account[idx]
        reserved = 0 if rebased_reserved is None else rebased_reserved.get(idx, 0)
        acct.sup = sup
        acct.reserved = min(max(reserved, acct.inf), sup)
