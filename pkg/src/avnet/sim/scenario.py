"""Scenario files: versioned JSON describing road, vehicles, cohorts, scripted events and attacks."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from ..cells import RangeConfig
from ..cohort import DEFAULT_N_MAX, CohortPolicy
from ..errors import ScenarioError
from ..kinematics import DEFAULT_HEADWAY, GapPolicy, RoadSegment
from ..mac import MacFrame
from ..security import ATTACK_KINDS, DEFAULT_POOL_SIZE, AttackSpec, adversary_model_ok
from .channel import LossModel

SCHEMA = "avnet-scenario/1"
CONFIG_ENV = "AVNET_CONFIG_DIR"

EVENT_TYPES = {
    "lg_join": ("vehicle", "cohort_of"),
    "lt_join": ("vehicle", "cohort_of", "after"),
    "leave": ("vehicle",),
    "accel": ("vehicle", "accel", "duration"),
    "disseminate": ("vehicle", "payload"),
    "lateral": ("vehicle", "payload"),
    "v2x": ("vehicle", "class"),
    "link_fail": ("a", "b"),
}


@dataclass(frozen=True)
class VehicleSpec:
    id: int
    x: float
    lane: int
    v: float
    aul: int = 4
    stealth: bool = False
    pseudos: int = DEFAULT_POOL_SIZE
    nsc_pseudos: int = DEFAULT_POOL_SIZE


@dataclass(frozen=True)
class CohortSpec:
    members: tuple[int, ...]  # head -> tail


@dataclass
class Scenario:
    name: str
    duration: float
    vehicles: list[VehicleSpec]
    cohorts: list[CohortSpec] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    attacks: list[AttackSpec] = field(default_factory=list)
    seed: int = 0
    dt: float = 0.01
    road: RoadSegment = field(default_factory=RoadSegment)
    ranges: RangeConfig = field(default_factory=RangeConfig)
    gaps: GapPolicy = field(default_factory=GapPolicy)
    policy: CohortPolicy = field(default_factory=CohortPolicy)
    mac: MacFrame = field(default_factory=MacFrame)
    loss: LossModel = field(default_factory=LossModel)
    vehicle_length: float = 4.0
    keepalive: bool = True
    link_fail_frames: int = 3
    silence_frames: int = 3
    crowd_mode: str = "deterministic"
    crowd_p: float = 0.1
    crowd_period: float = 1.0
    stop_decel: float = 3.0
    verify_delay: float = 0.002
    position_noise: float = 0.0  # uniform +/- meters on join-time gap sensing
    source: dict = field(default_factory=dict, repr=False)

    def vehicle(self, vid: int) -> VehicleSpec:
        for v in self.vehicles:
            if v.id == vid:
                return v
        raise ScenarioError(f"unknown vehicle {vid}")

    def with_seed(self, seed: int) -> "Scenario":
        s = copy.copy(self)
        s.seed = seed
        return s

    def to_dict(self) -> dict:
        return copy.deepcopy(self.source)


def _n_max_table(raw) -> tuple:
    if raw is None:
        return DEFAULT_N_MAX
    return tuple((float("inf") if b is None else float(b), int(n)) for b, n in raw)


def _build(kind, fn, problems, default):
    try:
        return fn()
    except (TypeError, ValueError, KeyError) as e:
        problems.append(f"{kind}: {e}")
        return default


def from_dict(data: dict) -> Scenario:
    """Parse and validate; every problem found is reported in one ScenarioError."""
    problems: list[str] = []
    if data.get("schema") != SCHEMA:
        problems.append(f"schema must be {SCHEMA!r}, got {data.get('schema')!r}")
    road = _build("road", lambda: RoadSegment(**data.get("road", {})), problems, RoadSegment())
    ranges = _build("ranges", lambda: RangeConfig(**data.get("ranges", {})), problems, RangeConfig())

    def gap_policy():
        g = dict(data.get("gap_policy", {}))
        if "headway_by_aul" in g:
            g["headway_by_aul"] = {int(k): float(v) for k, v in g["headway_by_aul"].items()}
        else:
            g["headway_by_aul"] = dict(DEFAULT_HEADWAY)
        return GapPolicy(**g)

    gaps = _build("gap_policy", gap_policy, problems, GapPolicy())

    def cohort_policy():
        c = dict(data.get("cohort_policy", {}))
        c["n_max_by_velocity"] = _n_max_table(c.get("n_max_by_velocity"))
        return CohortPolicy(**c)

    policy = _build("cohort_policy", cohort_policy, problems, CohortPolicy())
    mac_raw = dict(data.get("mac", {}))
    mac_raw.setdefault("slots_per_frame", max(24, policy.largest_n_max))
    mac = _build("mac", lambda: MacFrame(**mac_raw), problems, MacFrame())
    if mac.slots_per_frame < policy.largest_n_max:
        problems.append(f"mac: {mac.slots_per_frame} slots cannot hold a cohort of {policy.largest_n_max}")

    def loss_model():
        raw = data.get("loss", {})
        overrides = {(int(a), int(b)): float(p) for a, b, p in raw.get("overrides", [])}
        return LossModel(float(raw.get("p", 0.0)), overrides)

    loss = _build("loss", loss_model, problems, LossModel())

    vehicles: list[VehicleSpec] = []
    for i, raw in enumerate(data.get("vehicles", [])):
        v = _build(f"vehicles[{i}]", lambda raw=raw: VehicleSpec(**raw), problems, None)
        if v is None:
            continue
        if not road.has_lane(v.lane):
            problems.append(f"vehicle {v.id}: lane {v.lane} not in 1..{road.lane_count}")
        if v.v < 0:
            problems.append(f"vehicle {v.id}: negative velocity")
        if not 0 <= v.aul <= 5:
            problems.append(f"vehicle {v.id}: aul {v.aul} outside 0..5")
        if not 0 <= v.x <= road.length:
            problems.append(f"vehicle {v.id}: position {v.x} off the road")
        if v.pseudos < 0 or v.nsc_pseudos < 0:
            problems.append(f"vehicle {v.id}: negative pseudonym pool")
        vehicles.append(v)
    if not vehicles:
        problems.append("scenario has no vehicles")
    ids = [v.id for v in vehicles]
    if len(set(ids)) != len(ids):
        problems.append("duplicate vehicle ids")
    by_id = {v.id: v for v in vehicles}
    length = float(data.get("vehicle_length", 4.0))
    seen = {}
    for v in vehicles:
        for other in seen.get(v.lane, []):
            if abs(other.x - v.x) < length:
                problems.append(f"vehicles {other.id} and {v.id} overlap in lane {v.lane}")
        seen.setdefault(v.lane, []).append(v)

    cohorts = []
    used: set[int] = set()
    for i, raw in enumerate(data.get("cohorts", [])):
        members = tuple(int(m) for m in raw.get("members", []))
        if not members:
            problems.append(f"cohorts[{i}]: empty")
            continue
        missing = [m for m in members if m not in by_id]
        if missing:
            problems.append(f"cohorts[{i}]: unknown members {missing}")
            continue
        if used & set(members) or len(set(members)) != len(members):
            problems.append(f"cohorts[{i}]: vehicle listed in more than one cohort")
        used |= set(members)
        lanes = {by_id[m].lane for m in members}
        if len(lanes) != 1:
            problems.append(f"cohorts[{i}]: members span lanes {sorted(lanes)}")
        xs = [by_id[m].x for m in members]
        if any(b >= a for a, b in zip(xs, xs[1:])):
            problems.append(f"cohorts[{i}]: members not listed head to tail")
        for m in members:
            if not policy.sl <= by_id[m].aul <= policy.hl:
                problems.append(f"cohorts[{i}]: member {m} aul outside [{policy.sl},{policy.hl}]")
        v0 = by_id[members[0]].v
        if len(members) > policy.n_max(v0):
            problems.append(f"cohorts[{i}]: {len(members)} members exceed n_max {policy.n_max(v0)}")
        cohorts.append(CohortSpec(members))

    duration = data.get("duration")
    if not isinstance(duration, (int, float)) or duration <= 0:
        problems.append("duration must be a positive number")
        duration = 1.0

    events = []
    for i, raw in enumerate(data.get("events", [])):
        kind = raw.get("type")
        if kind not in EVENT_TYPES:
            problems.append(f"events[{i}]: unknown type {kind!r}")
            continue
        for key in EVENT_TYPES[kind]:
            if key not in raw:
                problems.append(f"events[{i}] ({kind}): missing {key!r}")
        t = raw.get("t")
        if not isinstance(t, (int, float)) or not 0 <= t <= duration:
            problems.append(f"events[{i}] ({kind}): time {t!r} outside the run")
        for key in ("vehicle", "cohort_of", "a", "b"):
            if key in raw and raw[key] not in by_id:
                problems.append(f"events[{i}] ({kind}): unknown vehicle {raw[key]}")
        events.append(dict(raw))

    attacks = []
    for i, raw in enumerate(data.get("attacks", [])):
        if raw.get("kind") not in ATTACK_KINDS:
            problems.append(f"attacks[{i}]: unknown kind {raw.get('kind')!r}")
            continue
        spec = _build(f"attacks[{i}]", lambda raw=raw: AttackSpec(**raw), problems, None)
        if spec is None:
            continue
        if spec.attacker not in by_id:
            problems.append(f"attacks[{i}]: unknown attacker {spec.attacker}")
        if spec.end_frame is not None and spec.end_frame <= spec.start_frame:
            problems.append(f"attacks[{i}]: empty frame window")
        attacks.append(spec)
    problems.extend(_adversary_problems(attacks, cohorts))

    crowd = data.get("crowdsourcing", {})
    if crowd.get("mode", "deterministic") not in ("deterministic", "probabilistic"):
        problems.append(f"crowdsourcing: unknown mode {crowd.get('mode')!r}")

    noise = data.get("position_noise", 0.0)
    if not isinstance(noise, (int, float)) or noise < 0:
        problems.append(f"position_noise: must be a number >= 0, got {noise!r}")

    if problems:
        raise ScenarioError("invalid scenario:\n  " + "\n  ".join(problems))
    return Scenario(
        name=str(data.get("name", "unnamed")),
        duration=float(duration),
        vehicles=vehicles,
        cohorts=cohorts,
        events=events,
        attacks=attacks,
        seed=int(data.get("seed", 0)),
        dt=float(data.get("dt", 0.01)),
        road=road,
        ranges=ranges,
        gaps=gaps,
        policy=policy,
        mac=mac,
        loss=loss,
        vehicle_length=length,
        keepalive=bool(data.get("keepalive", True)),
        link_fail_frames=int(data.get("link_fail_frames", 3)),
        silence_frames=int(data.get("silence_frames", 3)),
        crowd_mode=crowd.get("mode", "deterministic"),
        crowd_p=float(crowd.get("p", 0.1)),
        crowd_period=float(crowd.get("period", 1.0)),
        stop_decel=float(data.get("stop_decel", 3.0)),
        verify_delay=float(data.get("verify_delay", 0.002)),
        position_noise=float(noise),
        source=copy.deepcopy(data),
    )


def _adversary_problems(attacks: list[AttackSpec], cohorts: list[CohortSpec]) -> list[str]:
    out = []
    for c in cohorts:
        ranks = [c.members.index(a.attacker) + 1 for a in attacks if a.attacker in c.members and not a.override_adversary_model]
        if not adversary_model_ok(ranks):
            out.append(f"attackers at ranks {sorted(set(ranks))} break the one-per-three-ranks adversary model")
    return out


def load(path: str | os.PathLike) -> Scenario:
    """Load a scenario from a path or, failing that, by bundled name."""
    p = Path(path)
    if not p.exists():
        p = _resolve_named(str(path))
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{p}: not valid JSON ({e})") from None
    return from_dict(data)


def config_dir() -> Path | None:
    d = os.environ.get(CONFIG_ENV)
    return Path(d) if d else None


def _resolve_named(name: str) -> Path:
    stem = name[:-5] if name.endswith(".json") else name
    user = config_dir()
    if user is not None and (user / f"{stem}.json").exists():
        return user / f"{stem}.json"
    bundled = resources.files("avnet.scenarios") / f"{stem}.json"
    if bundled.is_file():
        return Path(str(bundled))
    raise ScenarioError(f"no scenario file or bundled scenario named {name!r}")


def bundled_names() -> list[str]:
    root = resources.files("avnet.scenarios")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json") and not p.name.startswith("snapshot-"))


SNAPSHOT_SCHEMA = "avnet-snapshot/1"


def load_snapshot(name: str = "saturated-cell"):
    """Load a bundled (or config-dir) world snapshot; returns (snapshot, subject)."""
    from ..cells import Placement, WorldSnapshot

    p = Path(name)
    if not p.exists():
        p = _resolve_named(f"snapshot-{name}")
    data = json.loads(p.read_text())
    if data.get("schema") != SNAPSHOT_SCHEMA:
        raise ScenarioError(f"{p}: schema must be {SNAPSHOT_SCHEMA!r}")
    road = RoadSegment(**data.get("road", {}))
    placements = {int(vid): Placement(float(x), int(lane)) for vid, x, lane in data["placements"]}
    return WorldSnapshot(road, placements), int(data["subject"])
