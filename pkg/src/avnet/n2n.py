"""Neighbor-to-neighbor messaging: restricted spanning and redundancy-based acceptance.

Longitudinal messages reach at most the two closest predecessors and
successors; lateral ones reach the closest vehicle in each adjacent lane.
A payload from a non-adjacent origin is delivered only once two distinct
neighbors have produced byte-identical copies of it, so a single lying
relay can neither forge nor silently drop a message.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, NamedTuple

from .mac import LATERAL, LONGITUDINAL, Name

SAFETY = "safety"
MGMT = "mgmt"

TAILWARD = "tail"
HEADWARD = "head"
BOTH = "both"

DEFAULT_TIMEOUT_FRAMES = 2


@dataclass(frozen=True)
class N2NMessage:
    """One over-the-air N2N message. Only names appear; no identities or coordinates."""

    sender: Name
    channel: str
    payload: bytes
    origin: Name
    origin_frame: int = 0
    kind: str = SAFETY
    scope: str = BOTH
    tx_time: float = 0.0
    dest: tuple[int, ...] = ()  # ranks (longitudinal) or lanes (lateral)

    @property
    def hop(self):
        return "direct" if self.origin == self.sender else ("relayed", self.sender.r)

    @property
    def key(self) -> tuple:
        return (self.channel, self.origin, self.origin_frame)

    def to_record(self) -> dict:
        return {
            "sender": str(self.sender),
            "channel": self.channel,
            "kind": self.kind,
            "origin": str(self.origin),
            "origin_frame": self.origin_frame,
            "scope": self.scope,
            "dest": list(self.dest),
            "tx_time": round(self.tx_time, 9),
            "payload": self.payload.decode("utf-8", "backslashreplace"),
        }


class Transmission(NamedTuple):
    message: N2NMessage
    targets: tuple  # ranks for lg, designated vehicle handles for lt

    def addressed(self):
        return [(t, self.message) for t in self.targets]


def longitudinal_neighbors(rank: int, cohort_size: int) -> tuple[int, ...]:
    return tuple(r for r in (rank - 2, rank - 1, rank + 1, rank + 2) if 1 <= r <= cohort_size)


def lg_send(
    sender: Name,
    cohort_size: int,
    payload: bytes,
    *,
    origin: Name | None = None,
    origin_frame: int = 0,
    kind: str = SAFETY,
    scope: str = BOTH,
    tx_time: float = 0.0,
    reachable: Callable[[int], bool] | None = None,
) -> Transmission:
    """Range-2 longitudinal send; ``reachable`` filters targets by radio range."""
    targets = longitudinal_neighbors(sender.r, cohort_size)
    if reachable is not None:
        targets = tuple(t for t in targets if reachable(t))
    msg = N2NMessage(
        sender=sender,
        channel=LONGITUDINAL,
        payload=payload,
        origin=origin or sender,
        origin_frame=origin_frame,
        kind=kind,
        scope=scope,
        tx_time=tx_time,
        dest=targets,
    )
    return Transmission(msg, targets)


def lt_send(
    sender: Name,
    payload: bytes,
    lateral: Mapping[int, Hashable | None],
    *,
    origin: Name | None = None,
    origin_frame: int = 0,
    tx_time: float = 0.0,
) -> Transmission:
    """Range-1 lateral send to the designated nearest vehicle of each adjacent lane.

    ``lateral`` maps adjacent lane number to the designation oracle's pick
    (``None`` when that lane has nobody in range).
    """
    picks = tuple((lane, h) for lane, h in sorted(lateral.items()) if h is not None)
    msg = N2NMessage(
        sender=sender,
        channel=LATERAL,
        payload=payload,
        origin=origin or sender,
        origin_frame=origin_frame,
        tx_time=tx_time,
        dest=tuple(lane for lane, _ in picks),
    )
    return Transmission(msg, tuple(h for _, h in picks))


class Flag(NamedTuple):
    kind: str  # forgery | suppression_or_loss | spanning_violation | lateral_minority | lateral_conflict
    key: tuple
    suspects: tuple[int, ...] = ()


@dataclass
class _Pending:
    first_frame: int
    copies: dict[bytes, set[int]] = field(default_factory=lambda: defaultdict(set))
    flagged: bool = False


@dataclass
class AcceptanceState:
    """Per-member acceptance bookkeeping; a payload is delivered at most once."""

    timeout_frames: int = DEFAULT_TIMEOUT_FRAMES
    pending: dict[tuple, _Pending] = field(default_factory=dict)
    delivered: dict[tuple, bytes] = field(default_factory=dict)
    flagged_late: set[tuple] = field(default_factory=set)

    def reset(self) -> None:
        self.pending.clear()
        self.delivered.clear()
        self.flagged_late.clear()


class ReceiveResult(NamedTuple):
    accepted: list[tuple[tuple, bytes]]
    flags: list[Flag]
    relays: list[N2NMessage]  # accepted messages this member must relay once


def _in_scope(rank: int, origin: int, scope: str) -> bool:
    if rank == origin:
        return False
    if scope == TAILWARD:
        return rank > origin
    if scope == HEADWARD:
        return rank < origin
    return True


def _should_relay(rank: int, origin: int, cohort_size: int) -> bool:
    step = 1 if rank > origin else -1
    return 1 <= rank + step <= cohort_size


def lg_receive(
    rank: int,
    inbox: Iterable[N2NMessage],
    state: AcceptanceState,
    *,
    frame: int,
    cohort_size: int,
) -> ReceiveResult:
    """Apply the seen-twice rule to longitudinal safety copies received in ``frame``.

    A copy sent directly by an origin one rank away is accepted on its own.
    Anything else needs byte-identical copies from two distinct neighbors.
    Disagreeing copies raise a forgery flag; a lone copy still pending after
    the timeout raises suppression_or_loss.
    """
    accepted, flags, relays = [], [], []
    neighborhood = set(longitudinal_neighbors(rank, cohort_size))
    for msg in inbox:
        if msg.kind != SAFETY or msg.channel != LONGITUDINAL:
            continue
        key = msg.key
        if msg.sender.r not in neighborhood:
            flags.append(Flag("spanning_violation", key, (msg.sender.r,)))
            continue
        if not _in_scope(rank, msg.origin.r, msg.scope):
            continue
        if key in state.delivered:
            if msg.payload != state.delivered[key] and key not in state.flagged_late:
                state.flagged_late.add(key)
                flags.append(Flag("forgery", key, (msg.sender.r,)))
            continue
        direct_adjacent = msg.sender == msg.origin and abs(msg.origin.r - rank) == 1
        if direct_adjacent:
            payload = msg.payload
        else:
            p = state.pending.setdefault(key, _Pending(first_frame=frame))
            p.copies[msg.payload].add(msg.sender.r)
            if len(p.copies) > 1 and not p.flagged:
                p.flagged = True
                suspects = sorted({r for rs in p.copies.values() for r in rs if r != msg.origin.r})
                flags.append(Flag("forgery", key, tuple(suspects)))
            payload = next((pl for pl, rs in p.copies.items() if len(rs) >= 2), None)
            if payload is None:
                continue
        state.pending.pop(key, None)
        state.delivered[key] = payload
        accepted.append((key, payload))
        if _should_relay(rank, msg.origin.r, cohort_size):
            relays.append(msg)
    for key, p in list(state.pending.items()):
        if frame - p.first_frame >= state.timeout_frames:
            del state.pending[key]
            senders = sorted({r for rs in p.copies.values() for r in rs})
            if len(p.copies) == 1:
                flags.append(Flag("suppression_or_loss", key, tuple(senders)))
    return ReceiveResult(accepted, flags, relays)


def relay_kwargs(msg: N2NMessage, payload: bytes | None = None) -> dict:
    """Keyword arguments for ``lg_send`` that re-emit ``msg`` under the relayer's name."""
    return dict(
        origin=msg.origin,
        origin_frame=msg.origin_frame,
        kind=msg.kind,
        scope=msg.scope,
        payload=msg.payload if payload is None else payload,
    )


def lateral_group(origin: Name) -> set[Name]:
    """The three senders whose copies count toward lateral acceptance:
    the lateral origin and its two range-1 longitudinal neighbors (echoes)."""
    return {Name(origin.r + d, origin.j) for d in (-1, 0, 1) if origin.r + d >= 1}


@dataclass
class LateralPolicy:
    """Who may vouch for a lateral message and how many must agree."""

    quorum: int = 2
    group: Callable[[Name], set[Name]] = lateral_group


def lt_receive(
    inbox: Iterable[N2NMessage],
    state: AcceptanceState,
    *,
    frame: int,
    policy: LateralPolicy = LateralPolicy(),
) -> ReceiveResult:
    """2-out-of-3 acceptance of lateral copies.

    Accepts once ``policy.quorum`` byte-identical copies from distinct group
    members arrive; any dissenting copy flags its sender. Three pairwise
    different copies flag every sender for audit.
    """
    accepted, flags = [], []
    for msg in inbox:
        if msg.kind != SAFETY or msg.channel != LATERAL:
            continue
        key = msg.key
        if msg.sender not in policy.group(msg.origin):
            flags.append(Flag("spanning_violation", key, (msg.sender.r,)))
            continue
        if key in state.delivered:
            if msg.payload != state.delivered[key]:
                flags.append(Flag("lateral_minority", key, (msg.sender.r,)))
            continue
        p = state.pending.setdefault(key, _Pending(first_frame=frame))
        p.copies[msg.payload].add(msg.sender.r)
        winner = next((pl for pl, rs in p.copies.items() if len(rs) >= policy.quorum), None)
        if winner is not None:
            for pl, rs in p.copies.items():
                if pl != winner:
                    flags.append(Flag("lateral_minority", key, tuple(sorted(rs))))
            del state.pending[key]
            state.delivered[key] = winner
            accepted.append((key, winner))
            continue
        if len(p.copies) >= 3 and not p.flagged:
            p.flagged = True
            flags.append(Flag("lateral_conflict", key, tuple(sorted(r for rs in p.copies.values() for r in rs))))
    for key, p in list(state.pending.items()):
        if frame - p.first_frame >= state.timeout_frames:
            del state.pending[key]
    return ReceiveResult(accepted, flags, [])
