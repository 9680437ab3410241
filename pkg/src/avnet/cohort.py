"""Cohorts: ranked single-lane formations with gated admission, splits and dissemination.

Cohorts are immutable values. Every operation returns new cohorts; ranks
are positional (head is rank 1), so renumbering commits in one step.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, NamedTuple

from .cells import RangeConfig, WorldSnapshot
from .errors import ProtocolError
from .kinematics import GapPolicy, required_iv_gap
from .mac import MacFrame, Name, from_ns
from .n2n import (
    BOTH,
    DEFAULT_TIMEOUT_FRAMES,
    HEADWARD,
    TAILWARD,
    AcceptanceState,
    Flag,
    N2NMessage,
    lg_receive,
    lg_send,
)
from .security import JoinVerifier, SignedRequest

DEFAULT_N_MAX = ((10.0, 24), (20.0, 18), (30.0, 12), (float("inf"), 8))


@dataclass(frozen=True)
class CohortPolicy:
    """``n_max_by_velocity`` is a step table of (velocity upper bound, max size)."""

    n_max_by_velocity: tuple[tuple[float, int], ...] = DEFAULT_N_MAX
    sl: int = 0
    hl: int = 5
    homogeneous: bool = False

    def __post_init__(self):
        bounds = [b for b, _ in self.n_max_by_velocity]
        sizes = [n for _, n in self.n_max_by_velocity]
        if bounds != sorted(bounds) or bounds[-1] != float("inf"):
            raise ValueError("n_max table must be sorted and end with an unbounded step")
        if any(b < a for a, b in zip(sizes[1:], sizes)):
            raise ValueError("n_max must be nonincreasing in velocity")
        if not 0 <= self.sl <= self.hl <= 5:
            raise ValueError("need 0 <= SL <= HL <= 5")

    def n_max(self, velocity: float) -> int:
        for bound, n in self.n_max_by_velocity:
            if velocity <= bound:
                return n
        raise AssertionError("unreachable: table ends with inf")

    @property
    def largest_n_max(self) -> int:
        return max(n for _, n in self.n_max_by_velocity)


class CommonKnowledge(NamedTuple):
    n: int
    velocity: float
    sl: int
    hl: int


@dataclass(frozen=True)
class Cohort:
    cid: int
    lane: int
    members: tuple[int, ...]  # head -> tail
    velocity: float = 0.0
    sl: int = 0
    hl: int = 5

    def __post_init__(self):
        if not self.members:
            raise ProtocolError("a cohort has at least one member")
        if len(set(self.members)) != len(self.members):
            raise ProtocolError("duplicate cohort member")
        if not 0 <= self.sl <= self.hl <= 5:
            raise ProtocolError("need 0 <= SL <= HL <= 5")

    @property
    def n(self) -> int:
        return len(self.members)

    @property
    def head(self) -> int:
        return self.members[0]

    @property
    def tail(self) -> int:
        return self.members[-1]

    @property
    def common_knowledge(self) -> CommonKnowledge:
        return CommonKnowledge(self.n, self.velocity, self.sl, self.hl)

    def rank_of(self, vid: int) -> int:
        try:
            return self.members.index(vid) + 1
        except ValueError:
            raise ProtocolError(f"vehicle {vid} is not in cohort {self.cid}") from None

    def member_at(self, rank: int) -> int:
        if not 1 <= rank <= self.n:
            raise ProtocolError(f"rank {rank} outside 1..{self.n}")
        return self.members[rank - 1]

    def name_of(self, vid: int) -> Name:
        return Name(self.rank_of(vid), self.lane)

    def memberships(self) -> list["Membership"]:
        return [Membership(v, i + 1, self.cid, Name(i + 1, self.lane)) for i, v in enumerate(self.members)]


class Membership(NamedTuple):
    vehicle: int
    rank: int
    cohort: int
    name: Name


class Decision(NamedTuple):
    accepted: bool
    reason: str | None = None  # auth | range | level | full | gap | position
    rank: int | None = None


class Candidate(NamedTuple):
    vehicle: int
    aul: int


def new_cohort(cid: int, lane: int, members: Iterable[int], velocity: float, policy: CohortPolicy, aul: int | None = None) -> Cohort:
    sl, hl = policy.sl, policy.hl
    if policy.homogeneous and aul is not None:
        sl = hl = aul
    return Cohort(cid, lane, tuple(members), velocity, sl, hl)


def admission_check(aul: int, cohort: Cohort, policy: CohortPolicy = CohortPolicy()) -> Decision:
    if not 0 <= aul <= 5:
        raise ValueError("automation level must be in 0..5")
    if not cohort.sl <= aul <= cohort.hl:
        return Decision(False, "level")
    if cohort.n >= policy.n_max(cohort.velocity):
        return Decision(False, "full")
    return Decision(True)


def _verify(signed: SignedRequest, verifier: JoinVerifier, now: float, source) -> bool:
    return verifier.verify_join(signed, now=now, source=source).valid


def lg_join(
    cohort: Cohort,
    joiner: Candidate,
    signed: SignedRequest,
    verifier: JoinVerifier,
    snapshot: WorldSnapshot,
    *,
    policy: CohortPolicy = CohortPolicy(),
    ranges: RangeConfig = RangeConfig(),
    now: float = 0.0,
) -> tuple[Decision, Cohort]:
    """A vehicle catching up with the tail asks to become rank n+1."""
    if joiner.vehicle in cohort.members:
        raise ProtocolError(f"vehicle {joiner.vehicle} already in cohort {cohort.cid}")
    if not _verify(signed, verifier, now, joiner.vehicle):
        return Decision(False, "auth"), cohort
    me, tail = snapshot[joiner.vehicle], snapshot[cohort.tail]
    behind = me.lane == cohort.lane and snapshot.road.delta(tail.x, me.x) < 0
    if not behind or snapshot.distance(joiner.vehicle, cohort.tail) > ranges.n2n_range:
        return Decision(False, "range"), cohort
    d = admission_check(joiner.aul, cohort, policy)
    if not d.accepted:
        return d, cohort
    return Decision(True, rank=cohort.n + 1), replace(cohort, members=cohort.members + (joiner.vehicle,))


def lt_join(
    cohort: Cohort,
    joiner: Candidate,
    after_rank: int,
    signed: SignedRequest,
    verifier: JoinVerifier,
    snapshot: WorldSnapshot,
    auls: Mapping[int, int],
    *,
    policy: CohortPolicy = CohortPolicy(),
    gaps: GapPolicy = GapPolicy(),
    ranges: RangeConfig = RangeConfig(),
    now: float = 0.0,
    vehicle_length: float = 0.0,
) -> tuple[Decision, Cohort]:
    """A vehicle in an adjacent lane asks to slot in between ranks k and k+1.

    ``after_rank`` is k; 0 means ahead of the head, n means behind the tail.
    The gap to the member ahead must be the joiner's iv-gap and the gap to
    the member behind must be that member's iv-gap. Gaps are bumper to
    bumper: position deltas less ``vehicle_length``.
    """
    if joiner.vehicle in cohort.members:
        raise ProtocolError(f"vehicle {joiner.vehicle} already in cohort {cohort.cid}")
    k = after_rank
    if not 0 <= k <= cohort.n:
        raise ProtocolError(f"insertion point {k} outside 0..{cohort.n}")
    if not _verify(signed, verifier, now, joiner.vehicle):
        return Decision(False, "auth"), cohort
    road = snapshot.road
    me = snapshot[joiner.vehicle]
    if abs(me.lane - cohort.lane) != 1:
        return Decision(False, "range"), cohort
    ahead = cohort.members[k - 1] if k >= 1 else None
    behind = cohort.members[k] if k < cohort.n else None
    verifiers = [v for v in (ahead, behind) if v is not None]
    if any(snapshot.distance(joiner.vehicle, v) > ranges.n2n_range for v in verifiers):
        return Decision(False, "range"), cohort
    v = cohort.velocity
    if ahead is not None:
        front = road.delta(me.x, snapshot[ahead].x) - vehicle_length
        if front + vehicle_length <= 0:
            return Decision(False, "position"), cohort
        if front < required_iv_gap(v, joiner.aul, gaps):
            return Decision(False, "gap"), cohort
    if behind is not None:
        rear = road.delta(snapshot[behind].x, me.x) - vehicle_length
        if rear + vehicle_length <= 0:
            return Decision(False, "position"), cohort
        if rear < required_iv_gap(v, auls[behind], gaps):
            return Decision(False, "gap"), cohort
    d = admission_check(joiner.aul, cohort, policy)
    if not d.accepted:
        return d, cohort
    members = cohort.members[:k] + (joiner.vehicle,) + cohort.members[k:]
    return Decision(True, rank=k + 1), replace(cohort, members=members)


def split(cohort: Cohort, k: int, new_cid: int) -> tuple[Cohort, Cohort]:
    """Cut the link between ranks k and k+1; the rear part renumbers from 1."""
    if not 1 <= k < cohort.n:
        raise ProtocolError(f"cannot split a cohort of {cohort.n} at link {k}-{k + 1}")
    front = replace(cohort, members=cohort.members[:k])
    rear = replace(cohort, cid=new_cid, members=cohort.members[k:])
    return front, rear


def leave(cohort: Cohort, vid: int, new_cid: int) -> list[Cohort]:
    """Remove one member. Losing a middle member splits the formation in two."""
    r = cohort.rank_of(vid)
    rest = cohort.members[: r - 1] + cohort.members[r:]
    if not rest:
        return []
    if r == 1 or r == cohort.n:
        return [replace(cohort, members=rest)]
    return [replace(cohort, members=cohort.members[: r - 1]), replace(cohort, cid=new_cid, members=cohort.members[r:])]


def cohort_problems(
    cohort: Cohort,
    snapshot: WorldSnapshot | None,
    auls: Mapping[int, int],
    policy: CohortPolicy,
) -> list[str]:
    """Every violated cohort invariant, as readable strings (empty when sound)."""
    out = []
    ms = cohort.memberships()
    ranks = [m.rank for m in ms]
    if ranks != list(range(1, cohort.n + 1)):
        out.append(f"cohort {cohort.cid}: ranks {ranks} not consecutive")
    for m in ms:
        if m.name != Name(m.rank, cohort.lane):
            out.append(f"cohort {cohort.cid}: name {m.name} disagrees with rank {m.rank}")
    if not cohort.sl <= cohort.hl:
        out.append(f"cohort {cohort.cid}: SL > HL")
    for vid in cohort.members:
        if not cohort.sl <= auls[vid] <= cohort.hl:
            out.append(f"cohort {cohort.cid}: member {vid} aul {auls[vid]} outside [{cohort.sl},{cohort.hl}]")
    if cohort.n > policy.n_max(cohort.velocity):
        out.append(f"cohort {cohort.cid}: size {cohort.n} exceeds n_max {policy.n_max(cohort.velocity)}")
    if snapshot is not None:
        for a, b in zip(cohort.members, cohort.members[1:]):
            pa, pb = snapshot[a], snapshot[b]
            if pa.lane != cohort.lane or pb.lane != cohort.lane:
                out.append(f"cohort {cohort.cid}: member off lane {cohort.lane}")
            if snapshot.road.delta(pa.x, pb.x) >= 0:
                out.append(f"cohort {cohort.cid}: rank order of {a},{b} disagrees with positions")
    return out


# --- dissemination -----------------------------------------------------------


@dataclass
class DeliveryReport:
    origin: int
    n: int
    accept_frame: dict[int, int] = field(default_factory=dict)
    flags: list[tuple[int, Flag]] = field(default_factory=list)
    transmissions: int = 0

    @property
    def latency_frames(self) -> dict[int, int]:
        """Frames spanned from the origin's transmission (the origin's frame counts as one)."""
        return {r: f + 1 for r, f in self.accept_frame.items()}

    @property
    def max_latency(self) -> int:
        return max(self.latency_frames.values(), default=0)

    def complete(self, direction: str) -> bool:
        return set(self.accept_frame) == expected_recipients(self.origin, self.n, direction)


def expected_recipients(origin: int, n: int, direction: str) -> set[int]:
    if direction == TAILWARD:
        return set(range(origin + 1, n + 1))
    if direction == HEADWARD:
        return set(range(1, origin))
    return set(range(1, n + 1)) - {origin}


def disseminate(
    cohort: Cohort,
    origin_rank: int,
    payload: bytes,
    direction: str = BOTH,
    *,
    frame: MacFrame = MacFrame(),
    lost: Iterable[tuple[int, int]] = (),
    loss_p: float = 0.0,
    rng: random.Random | None = None,
    max_frames: int | None = None,
) -> DeliveryReport:
    """Cohort-wide N2N dissemination from one member, frame by frame.

    Each member relays an accepted payload once, in its own slot of the
    next frame. ``lost`` lists (sender rank, receiver rank) links that drop
    every copy; ``loss_p`` drops copies independently, drawing in
    (sender rank, receiver rank) order.
    """
    if direction not in (TAILWARD, HEADWARD, BOTH):
        raise ValueError(f"unknown direction {direction!r}")
    n = cohort.n
    cohort.member_at(origin_rank)
    lost = set(lost)
    if loss_p and rng is None:
        rng = random.Random(0)
    report = DeliveryReport(origin_rank, n)
    states = {r: AcceptanceState() for r in range(1, n + 1)}
    origin = Name(origin_rank, cohort.lane)
    outgoing: dict[int, bytes] = {origin_rank: payload}
    limit = max_frames if max_frames is not None else n + 2 * DEFAULT_TIMEOUT_FRAMES + 1
    for k in range(limit):
        inboxes: dict[int, list[N2NMessage]] = {r: [] for r in range(1, n + 1)}
        for r in sorted(outgoing):
            tx = lg_send(
                Name(r, cohort.lane), n, outgoing[r],
                origin=origin, scope=direction, tx_time=from_ns(frame.slot_start_ns(k, r)),
            )
            report.transmissions += 1
            for target in tx.targets:
                if (r, target) in lost:
                    continue
                if loss_p and rng.random() < loss_p:
                    continue
                inboxes[target].append(tx.message)
        outgoing = {}
        for r in range(1, n + 1):
            res = lg_receive(r, inboxes[r], states[r], frame=k, cohort_size=n)
            if res.accepted:
                report.accept_frame[r] = k
            report.flags.extend((r, f) for f in res.flags)
            for m in res.relays:
                outgoing[r] = m.payload
        if not outgoing and not any(s.pending for s in states.values()):
            break
    return report
