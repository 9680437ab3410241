"""Vehicular cells and range gating for short-range communication."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from .errors import ScenarioError
from .kinematics import RoadSegment

MAX_CELL_MEMBERS = 14
LONGITUDINAL_PER_SIDE = 2
LATERAL_PER_LANE = 5


@dataclass(frozen=True)
class Placement:
    x: float
    lane: int


@dataclass(frozen=True)
class RangeConfig:
    n2n_range: float = 30.0
    sc_v2v_range: float = 60.0
    cell_window: float | None = None  # None means sc_v2v_range

    def __post_init__(self):
        if not 0 < self.n2n_range <= self.sc_v2v_range:
            raise ValueError("need 0 < n2n_range <= sc_v2v_range")
        if self.cell_window is not None and self.cell_window <= 0:
            raise ValueError("cell_window must be > 0")

    @property
    def window(self) -> float:
        return self.sc_v2v_range if self.cell_window is None else self.cell_window

    def range_for(self, kind: str) -> float:
        if kind == "n2n":
            return self.n2n_range
        if kind == "sc_v2v":
            return self.sc_v2v_range
        raise ValueError(f"unknown range kind {kind!r}")


@dataclass(frozen=True)
class WorldSnapshot:
    """Immutable ground-truth positions of every vehicle at one instant."""

    road: RoadSegment
    placements: Mapping[int, Placement]
    time: float = 0.0

    def __post_init__(self):
        seen: dict[tuple[int, float], int] = {}
        for vid, p in self.placements.items():
            key = (p.lane, p.x)
            if key in seen:
                raise ScenarioError(f"vehicles {seen[key]} and {vid} overlap in lane {p.lane}")
            seen[key] = vid

    def __getitem__(self, vid: int) -> Placement:
        try:
            return self.placements[vid]
        except KeyError:
            raise ScenarioError(f"unknown vehicle id {vid}") from None

    def __contains__(self, vid: int) -> bool:
        return vid in self.placements

    def distance(self, a: int, b: int) -> float:
        pa, pb = self[a], self[b]
        dx = self.road.delta(pa.x, pb.x)
        dy = (pb.lane - pa.lane) * self.road.lane_width
        return math.hypot(dx, dy)


@dataclass(frozen=True)
class CellView:
    subject: int
    ahead: tuple[int, ...] = ()
    behind: tuple[int, ...] = ()
    lateral: Mapping[int, tuple[int, ...]] = field(default_factory=dict)
    capture_time: float = 0.0

    @property
    def members(self) -> frozenset[int]:
        out = set(self.ahead) | set(self.behind)
        for ids in self.lateral.values():
            out.update(ids)
        return frozenset(out)

    def __len__(self) -> int:
        return len(self.members)


def compute_cell(subject: int, snapshot: WorldSnapshot, config: RangeConfig = RangeConfig()) -> CellView:
    """Cell(subject): the vehicles that could physically collide with it.

    Up to two nearest predecessors and two nearest successors in the
    subject's lane, plus up to five nearest vehicles in each adjacent lane,
    all within the longitudinal cell window. Distance ties go to the lower
    vehicle id.
    """
    me = snapshot[subject]
    road = snapshot.road
    window = config.window
    ahead, behind = [], []
    lateral: dict[int, list[tuple[float, int]]] = {}
    for vid, p in snapshot.placements.items():
        if vid == subject:
            continue
        d = road.delta(me.x, p.x)
        if abs(d) > window:
            continue
        if p.lane == me.lane:
            (ahead if d > 0 else behind).append((abs(d), vid))
        elif abs(p.lane - me.lane) == 1:
            lateral.setdefault(p.lane, []).append((abs(d), vid))
    ahead.sort()
    behind.sort()
    lat = {}
    for lane in sorted(lateral):
        lat[lane] = tuple(v for _, v in sorted(lateral[lane])[:LATERAL_PER_LANE])
    return CellView(
        subject=subject,
        ahead=tuple(v for _, v in ahead[:LONGITUDINAL_PER_SIDE]),
        behind=tuple(v for _, v in behind[:LONGITUDINAL_PER_SIDE]),
        lateral=lat,
        capture_time=snapshot.time,
    )


def in_range(a: int, b: int, kind: str, snapshot: WorldSnapshot, config: RangeConfig = RangeConfig()) -> bool:
    return snapshot.distance(a, b) <= config.range_for(kind)


def nearest_in_lane(subject: int, lane: int, snapshot: WorldSnapshot, max_distance: float) -> int | None:
    """Ground-truth stand-in for optical lateral designation: closest vehicle in ``lane``."""
    best = None
    for vid, p in snapshot.placements.items():
        if vid == subject or p.lane != lane:
            continue
        d = snapshot.distance(subject, vid)
        if d <= max_distance and (best is None or (d, vid) < best):
            best = (d, vid)
    return None if best is None else best[1]


def saturated_snapshot(spacing: float = 5.0, per_lane: int = 13, lane_count: int = 3) -> tuple[WorldSnapshot, int]:
    """Densest 3-lane traffic with the subject mid-pack in the middle lane."""
    road = RoadSegment(lane_count=lane_count)
    placements = {}
    vid = 0
    for lane in range(1, lane_count + 1):
        for i in range(per_lane):
            placements[vid] = Placement(x=1000.0 + i * spacing, lane=lane)
            vid += 1
    middle = (lane_count + 1) // 2
    subject = (middle - 1) * per_lane + per_lane // 2
    return WorldSnapshot(road=road, placements=placements), subject
