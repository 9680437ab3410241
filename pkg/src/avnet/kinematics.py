"""Road model, longitudinal kinematics and the gap rules that keep cohorts safe."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping

DEFAULT_HEADWAY = {0: 1.8, 1: 1.5, 2: 1.2, 3: 0.8, 4: 0.5, 5: 0.3}


@dataclass(frozen=True)
class RoadSegment:
    """Straight multilane segment. Lane 1 is the rightmost lane."""

    lane_count: int = 3
    lane_width: float = 3.5
    length: float = 10_000.0
    ends: str = "bounded"  # or "periodic"

    def __post_init__(self):
        if self.lane_count < 1:
            raise ValueError("lane_count must be >= 1")
        if self.lane_width <= 0 or self.length <= 0:
            raise ValueError("lane_width and length must be positive")
        if self.ends not in ("bounded", "periodic"):
            raise ValueError(f"unknown road ends {self.ends!r}")

    def has_lane(self, lane: int) -> bool:
        return 1 <= lane <= self.lane_count

    def delta(self, x_from: float, x_to: float) -> float:
        """Signed longitudinal offset of ``x_to`` as seen from ``x_from``."""
        d = x_to - x_from
        if self.ends == "periodic":
            half = self.length / 2.0
            d = (d + half) % self.length - half
        return d

    def wrap(self, x: float) -> float:
        if self.ends == "periodic":
            return x % self.length
        return x


@dataclass(frozen=True)
class KinematicState:
    position: float
    lane: int
    velocity: float
    acceleration: float = 0.0

    def __post_init__(self):
        if self.velocity < 0:
            raise ValueError("velocity must be >= 0")


@dataclass(frozen=True)
class GapPolicy:
    """Braking model and headway table.

    ``min_gap_floor`` bounds the inter-cohort gap and ``iv_gap_floor`` the
    intra-cohort gap.
    """

    brake_decel: float = 8.0
    reaction_time: float = 0.5
    headway_by_aul: Mapping[int, float] = field(default_factory=lambda: dict(DEFAULT_HEADWAY))
    min_gap_floor: float = 5.0
    iv_gap_floor: float = 2.0

    def __post_init__(self):
        if self.brake_decel <= 0:
            raise ValueError("brake_decel must be > 0")
        if self.reaction_time < 0:
            raise ValueError("reaction_time must be >= 0")
        if self.min_gap_floor <= 0 or self.iv_gap_floor <= 0:
            raise ValueError("gap floors must be > 0")
        levels = sorted(self.headway_by_aul)
        if levels != list(range(6)):
            raise ValueError("headway table must cover automation levels 0..5")
        for lo, hi in zip(levels, levels[1:]):
            if self.headway_by_aul[hi] > self.headway_by_aul[lo]:
                raise ValueError("headway must be nonincreasing in automation level")


def advance_state(state: KinematicState, commanded_accel: float, dt: float) -> KinematicState:
    """Constant-acceleration update over ``dt``; a vehicle that stops mid-step stays stopped."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    v0 = state.velocity
    a = commanded_accel
    if a < 0 and v0 + a * dt <= 0:
        t_stop = v0 / -a if v0 > 0 else 0
        dist = v0 * t_stop + a * t_stop * t_stop / 2
        return replace(state, position=state.position + dist, velocity=0, acceleration=a)
    return replace(
        state,
        position=state.position + v0 * dt + a * dt * dt / 2,
        velocity=max(v0 + a * dt, 0),
        acceleration=a,
    )


def stopping_distance(v: float, decel: float, reaction_time: float = 0.0) -> float:
    return v * reaction_time + v * v / (2.0 * decel)


def required_ic_gap(v: float, policy: GapPolicy) -> float:
    """Inter-cohort gap that absorbs a brick-wall stop of the preceding tail."""
    if v < 0:
        raise ValueError("v must be >= 0")
    return max(stopping_distance(v, policy.brake_decel, policy.reaction_time), policy.min_gap_floor)


def required_iv_gap(v: float, aul: int, policy: GapPolicy) -> float:
    if aul not in policy.headway_by_aul:
        raise ValueError(f"automation level {aul} outside 0..5")
    return max(v * policy.headway_by_aul[aul], policy.iv_gap_floor)


def brick_wall_min_gap(v: float, gap: float, policy: GapPolicy, dt: float = 1e-3) -> float:
    """Step a follower toward a leader that stops dead at t=0.

    The follower keeps speed ``v`` for the reaction time, then brakes at
    ``policy.brake_decel``. Returns the smallest bumper gap reached; a
    negative value means the follower ran into the leader.
    """
    # exact rational arithmetic: contact at exactly zero gap must not read as overlap
    q = lambda x: Fraction(str(x))  # noqa: E731
    step_dt, decel = q(dt), q(policy.brake_decel)
    follower = KinematicState(position=Fraction(0), lane=1, velocity=q(v))
    leader_x = q(gap)
    react_steps = round(q(policy.reaction_time) / step_dt)
    step = 0
    min_gap = leader_x
    while follower.velocity > 0:
        accel = 0 if step < react_steps else -decel
        follower = advance_state(follower, accel, step_dt)
        step += 1
        min_gap = min(min_gap, leader_x - follower.position)
    return float(min_gap)
