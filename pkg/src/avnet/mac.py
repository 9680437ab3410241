"""Slotted MAC for N2N channels: per-rank transmit times and slot-ownership checks.

Every rank owns one slot per frame on each channel. Times are handled in
integer nanoseconds internally so slot boundaries compare exactly.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, NamedTuple

from .errors import ConfigurationError

LONGITUDINAL = "lg"
LATERAL = "lt"
CHANNELS = (LONGITUDINAL, LATERAL)

NS = 1_000_000_000


def to_ns(seconds: float) -> int:
    return round(seconds * NS)


def from_ns(ns: int) -> float:
    return ns / NS


@dataclass(frozen=True)
class Name:
    """Self-issued anonymous name: rank ``r`` in lane ``j``."""

    r: int
    j: int

    def __str__(self) -> str:
        return f"{{{self.r},{self.j}}}"


@dataclass(frozen=True)
class MacFrame:
    slot_duration: float = 0.001
    slots_per_frame: int = 24
    lg_offset: float = 0.0
    lt_offset: float = 0.0
    tx_duration: float = 0.0002
    epoch: float = 0.0

    def __post_init__(self):
        if self.slot_duration <= 0 or self.slots_per_frame < 1:
            raise ConfigurationError("slot_duration must be > 0 and slots_per_frame >= 1")
        if not 0 <= self.tx_duration <= self.slot_duration:
            raise ConfigurationError("tx_duration must fit inside one slot")

    @property
    def duration(self) -> float:
        return self.slots_per_frame * self.slot_duration

    @property
    def slot_ns(self) -> int:
        return to_ns(self.slot_duration)

    @property
    def frame_ns(self) -> int:
        return self.slots_per_frame * self.slot_ns

    def offset_ns(self, channel: str) -> int:
        if channel == LONGITUDINAL:
            return to_ns(self.lg_offset)
        if channel == LATERAL:
            return to_ns(self.lt_offset)
        raise ValueError(f"unknown channel {channel!r}")

    def slot_start_ns(self, frame: int, rank: int, channel: str = LONGITUDINAL) -> int:
        self._check_rank(rank)
        return to_ns(self.epoch) + self.offset_ns(channel) + frame * self.frame_ns + (rank - 1) * self.slot_ns

    def locate_ns(self, t_ns: int, channel: str = LONGITUDINAL) -> tuple[int, int, int]:
        """(frame index, slot index, ns into slot) for an absolute time."""
        rel = t_ns - to_ns(self.epoch) - self.offset_ns(channel)
        frame, within = divmod(rel, self.frame_ns)
        slot, into = divmod(within, self.slot_ns)
        return frame, slot, into

    def _check_rank(self, rank: int) -> None:
        if not 1 <= rank <= self.slots_per_frame:
            raise ConfigurationError(f"rank {rank} exceeds frame capacity {self.slots_per_frame}")


def slot_times(rank: int, frame: MacFrame) -> tuple[float, float]:
    """Offsets of Lg_r and Lt_r from the start of their channel's frame."""
    frame._check_rank(rank)
    offset = (rank - 1) * frame.slot_duration
    return offset, offset


def access_delay_bound(frame: MacFrame) -> float:
    """Worst-case wait for one's own slot; independent of load."""
    return frame.slots_per_frame * frame.slot_duration


class SafetyMargin(NamedTuple):
    distance_in_lambda: float
    ratio: float
    verdict: bool


def safety_margin_check(lam: float, v: float, iv_gap: float, factor: float = 10.0) -> SafetyMargin:
    """Distance covered during one access delay must be ``factor`` times smaller than the gap."""
    if iv_gap <= 0:
        raise ValueError("iv_gap must be > 0")
    distance = v * lam
    ratio = math.inf if distance == 0 else iv_gap / distance
    return SafetyMargin(distance, ratio, ratio >= factor)


@dataclass(frozen=True)
class TxRecord:
    sender: Name
    channel: str
    tx_time: float
    digest: str = ""
    duration: float = 0.0


class SlotCheck(NamedTuple):
    ok: bool
    kind: str | None = None  # "masquerade" | "off_slot" | "sybil"
    owner: int | None = None


def check_slot_ownership(
    tx: TxRecord,
    claimed_rank: int,
    frame: MacFrame,
    occupied: int | None = None,
) -> SlotCheck:
    """Verify a transmission against the slot schedule.

    ``claimed_rank`` is the rank the receiver attributes to the physical
    transmitter. ``occupied`` is the cohort size when known; slots beyond
    it belong to nobody.
    """
    t = to_ns(tx.tx_time)
    _, slot, into = frame.locate_ns(t, tx.channel)
    owner = slot + 1
    if into + to_ns(tx.duration) > frame.slot_ns:
        return SlotCheck(False, "off_slot", None)
    if occupied is not None and owner > occupied:
        return SlotCheck(False, "off_slot", None)
    if owner != claimed_rank or tx.sender.r != claimed_rank:
        return SlotCheck(False, "masquerade", owner)
    return SlotCheck(True, None, owner)


def detect_sybil(observed: Iterable[tuple[object, TxRecord]], frame: MacFrame) -> set[int]:
    """Indices of records whose physical source used more than one name in a frame.

    ``observed`` pairs each record with an opaque physical-source key (what
    the receiver's sensors attribute the emission to).
    """
    groups: dict[tuple, list[tuple[int, Name]]] = defaultdict(list)
    for i, (source, tx) in enumerate(observed):
        k, _, _ = frame.locate_ns(to_ns(tx.tx_time), tx.channel)
        groups[(source, k, tx.channel)].append((i, tx.sender))
    flagged: set[int] = set()
    for entries in groups.values():
        if len({name for _, name in entries}) > 1:
            flagged.update(i for i, _ in entries)
    return flagged


@dataclass
class SaturationResult:
    frames: int
    transmissions: int
    collisions: int
    max_delay_ns: int
    delays_ns: list[int]


def simulate_saturated(cohort_size: int, frame: MacFrame, frames: int, channel: str = LONGITUDINAL) -> SaturationResult:
    """Every member always has a message queued; the head-of-line message becomes
    eligible at the slot boundary that ends the previous transmission's slot."""
    if cohort_size > frame.slots_per_frame:
        raise ConfigurationError("cohort larger than frame")
    occupancy: dict[tuple[int, int], int] = defaultdict(int)
    eligible = {r: 0 for r in range(1, cohort_size + 1)}
    delays = []
    tx_ns = to_ns(frame.tx_duration)
    for k in range(frames):
        for r in range(1, cohort_size + 1):
            start = frame.slot_start_ns(k, r, channel)
            if start < eligible[r]:
                continue
            _, slot, _ = frame.locate_ns(start, channel)
            occupancy[(k, slot)] += 1
            delays.append(start + tx_ns - eligible[r])
            eligible[r] = start + frame.slot_ns
    collisions = sum(c - 1 for c in occupancy.values() if c > 1)
    return SaturationResult(frames, len(delays), collisions, max(delays, default=0), delays)
