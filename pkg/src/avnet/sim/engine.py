"""Discrete-event engine: fixed-step kinematics interleaved with slot-timed protocol actions.

Events are processed in (time ns, vehicle id, event code, sequence) order;
global events use vehicle id -1 so they run before per-vehicle events at the
same instant. One ``random.Random(seed)`` stream feeds, in event order, the
channel's loss draws and probabilistic crowdsourcing.
"""

from __future__ import annotations

import heapq
import random
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace

from ..analysis import STEALTH_EXCEPTIONS, CrowdMessage, CrowdsourceConfig, crowdsource_round
from ..cells import MAX_CELL_MEMBERS, Placement, WorldSnapshot, compute_cell, nearest_in_lane
from ..cohort import Candidate, Cohort, cohort_problems, leave, lg_join, lt_join, new_cohort, split
from ..errors import AuthUnavailable, CompartmentViolation, InvariantBreach, ProtocolError
from ..kinematics import KinematicState, advance_state, required_ic_gap, required_iv_gap
from ..mac import LATERAL, LONGITUDINAL, Name, TxRecord, check_slot_ownership, detect_sybil, from_ns, to_ns
from ..n2n import (
    BOTH,
    MGMT,
    SAFETY,
    AcceptanceState,
    LateralPolicy,
    N2NMessage,
    lg_receive,
    lg_send,
    longitudinal_neighbors,
    lt_receive,
    lt_send,
)
from ..security import (
    NSC,
    SC,
    SECONDS_PER_DAY,
    CertificationAuthority,
    JoinRequest,
    JoinVerifier,
    PredicateEngine,
    SendEvent,
    SensorEvent,
    TamperProofDevice,
    ViolationEntry,
    digest,
    evaluate_predicates,
    execute_stop,
    sign_join,
)
from .channel import Emission, channel_deliver
from .scenario import Scenario
from .trace import Trace

# event codes, in tie-break order
FRAME, KIN, SCRIPT, VERIFY, TX, ATTACK_TX, CROWD, END = range(8)

GLOBAL = -1
SHOULDER = 0
MAX_ACCEL = 2.0
FOLLOW_GAINS = (0.3, 0.8)  # (gap, relative speed) toward the cohort predecessor
IC_GAINS = (0.1, 0.5)  # same, toward a vehicle of another cohort
SPEED_GAIN = 0.5
LOOKAHEAD = 150.0
BOGUS = b"BOGUS:"


@dataclass
class Outgoing:
    payload: bytes
    scope: str = BOTH
    origin: Name | None = None  # None: originate under the sender's name at send time
    origin_frame: int | None = None
    not_before: int = 0
    targets: tuple[int, ...] = ()  # lateral echoes only
    tainted: bool = False
    key: tuple | None = None


@dataclass
class Vehicle:
    id: int
    state: KinematicState
    aul: int
    stealth: bool
    desired_v: float
    sc: TamperProofDevice
    nsc: TamperProofDevice
    lg_state: AcceptanceState = field(default_factory=AcceptanceState)
    lt_state: AcceptanceState = field(default_factory=AcceptanceState)
    outbox: deque = field(default_factory=deque)
    lt_outbox: deque = field(default_factory=deque)
    last_tx: dict = field(default_factory=dict)
    accel_override: tuple[float, int] | None = None
    excluded: bool = False
    off_road: bool = False
    halted: bool = False
    attacks: list = field(default_factory=list)

    @property
    def on_road(self) -> bool:
        return not (self.excluded or self.off_road)


@dataclass(frozen=True)
class Slot:
    cid: int
    rank: int
    n: int
    lane: int


class Simulation:
    def __init__(self, scenario: Scenario, *, seed: int | None = None, checked: bool = False):
        self.sc = scenario
        self.seed = scenario.seed if seed is None else seed
        self.rng = random.Random(self.seed)
        self.noise_rng = random.Random(f"position-noise:{self.seed}")
        self.checked = checked
        self.mac = scenario.mac
        self.frame_ns = self.mac.frame_ns
        self.dt_ns = to_ns(scenario.dt)
        self.end_ns = to_ns(scenario.duration)
        self.trace = Trace()
        self.loss = scenario.loss
        self.ca = CertificationAuthority()
        self.verifier = JoinVerifier(self.ca, scenario.verify_delay)
        self.lateral_policy = LateralPolicy()
        self.crowd = CrowdsourceConfig(scenario.crowd_mode, scenario.crowd_p)
        self.certs: dict[int, str] = {}
        self.vehicles: dict[int, Vehicle] = {}
        for spec in sorted(scenario.vehicles, key=lambda v: v.id):
            cert = self.ca.register(spec.id)
            self.certs[spec.id] = cert
            sc_tpd = self.ca.issue_pseudos(cert, spec.pseudos, SC)
            sc_tpd.predicates = PredicateEngine(self.mac, silence_frames=scenario.silence_frames)
            nsc_tpd = self.ca.issue_pseudos(cert, spec.nsc_pseudos, NSC)
            self.vehicles[spec.id] = Vehicle(
                spec.id, KinematicState(spec.x, spec.lane, spec.v), spec.aul, spec.stealth, spec.v, sc_tpd, nsc_tpd
            )
        self.auls = {vid: v.aul for vid, v in self.vehicles.items()}
        self.initial_pool = sum(len(v.sc) + len(v.nsc) for v in self.vehicles.values())
        for a in scenario.attacks:
            self.vehicles[a.attacker].attacks.append(a)
        self.attackers = {a.attacker for a in scenario.attacks}

        self.cohorts: dict[int, Cohort] = {}
        self.cohort_of: dict[int, int] = {}
        self._next_cid = 1
        listed = set()
        for c in scenario.cohorts:
            head = self.vehicles[c.members[0]]
            self._add_cohort(new_cohort(0, head.state.lane, c.members, head.state.velocity, scenario.policy))
            listed |= set(c.members)
        for vid in sorted(self.vehicles):
            if vid not in listed:
                v = self.vehicles[vid]
                self._add_cohort(new_cohort(0, v.state.lane, (vid,), v.state.velocity, scenario.policy))

        self.queue: list = []
        self._seq = 0
        self.now = 0
        self.frame = -1
        self.schedule: dict[int, Slot] = {}
        self.sched_members: dict[int, tuple[int, ...]] = {}
        self.heard: dict[int, set[int]] = defaultdict(set)
        self.missed: dict[tuple[int, int], int] = defaultdict(int)
        self.observed: dict[int, list] = defaultdict(list)  # receiver -> [(source, TxRecord, tx_id)] this frame
        self.active_cohorts: set[int] = set()
        self._snapshot: WorldSnapshot | None = None
        self._crowd_round = 0
        self._tx_id = 0
        self._tpd_lengths: dict[int, int] = {}
        self._collided: set[tuple[int, int]] = set()
        self.stops: dict[int, object] = {}
        self._sybil_seen: set[tuple[int, int]] = set()

        # bookkeeping for metrics
        self.m = defaultdict(int)
        self.latencies: list[int] = []
        self.tainted: set[bytes] = set()
        self.attack_events: list[dict] = []
        self.mac_flagged: set[int] = set()  # tx ids flagged by an honest receiver
        self.flag_keys: dict[str, set[tuple]] = defaultdict(set)
        self.attack_tx: set[int] = set()
        self.suppressed_keys: set[tuple] = set()
        self.origin_frames: dict[tuple, int] = {}

    # --- cohort bookkeeping ---------------------------------------------------

    def _add_cohort(self, cohort: Cohort) -> Cohort:
        if cohort.cid == 0 or cohort.cid in self.cohorts and self.cohorts[cohort.cid] is not cohort:
            cohort = replace(cohort, cid=self._next_cid)
        self._next_cid = max(self._next_cid, cohort.cid + 1)
        self.cohorts[cohort.cid] = cohort
        for vid in cohort.members:
            self.cohort_of[vid] = cohort.cid
        return cohort

    def _fresh_cid(self) -> int:
        cid = self._next_cid
        self._next_cid += 1
        return cid

    def _set_cohorts(self, old_cid: int | None, new: list[Cohort], reason: str, subject: int | None) -> None:
        if old_cid is not None:
            self.cohorts.pop(old_cid, None)
        for c in new:
            self.cohorts[c.cid] = c
            self._next_cid = max(self._next_cid, c.cid + 1)
            for vid in c.members:
                self.cohort_of[vid] = c.cid
        for c in new:
            self.trace.emit(self.now, "RENUM", subject, cohort=c.cid, n=c.n, members=list(c.members), reason=reason)
            for vid in c.members:
                v = self.vehicles[vid]
                v.outbox = deque(o for o in v.outbox if o.origin is None)
                v.lt_outbox.clear()
                v.lg_state.pending.clear()
                v.lt_state.pending.clear()
            if c.n > 1:
                ck = c.common_knowledge
                payload = f"ck:n={ck.n};v={ck.velocity:.3f};sl={ck.sl};hl={ck.hl}".encode()
                self.vehicles[c.head].outbox.append(Outgoing(payload, scope="tail", not_before=self.frame + 1))
                self.trace.emit(self.now, "DISSEM", c.head, cohort=c.cid, origin_rank=1, direction="tail", reason=reason, digest=digest(payload))
        self._snapshot = None

    def _singleton(self, vid: int) -> Cohort:
        v = self.vehicles[vid]
        return new_cohort(self._fresh_cid(), v.state.lane, (vid,), v.state.velocity, self.sc.policy)

    def _remove_member(self, vid: int, reason: str) -> None:
        cid = self.cohort_of.get(vid)
        if cid is None:
            return
        cohort = self.cohorts[cid]
        if cohort.n == 1:
            self.cohorts.pop(cid)
            del self.cohort_of[vid]
            return
        rest = leave(cohort, vid, self._fresh_cid())
        if len(rest) == 2:
            self.trace.emit(self.now, "SPLIT", vid, cohort=cid, at_rank=cohort.rank_of(vid), new=[c.cid for c in rest], reason=reason)
        del self.cohort_of[vid]
        self._set_cohorts(cid, rest, reason, vid)

    # --- world -------------------------------------------------------------

    def snapshot(self) -> WorldSnapshot:
        if self._snapshot is None:
            self._snapshot = WorldSnapshot(
                self.sc.road,
                {vid: Placement(v.state.position, v.state.lane) for vid, v in self.vehicles.items() if v.on_road},
                from_ns(self.now),
            )
        return self._snapshot

    def perceived(self) -> WorldSnapshot:
        """Snapshot as the sensors see it: ground truth plus uniform position noise."""
        noise = self.sc.position_noise
        snap = self.snapshot()
        if not noise:
            return snap
        placements = {
            vid: Placement(p.x + self.noise_rng.uniform(-noise, noise), p.lane) for vid, p in sorted(snap.placements.items())
        }
        return WorldSnapshot(snap.road, placements, snap.time)

    def _lane_order(self) -> dict[int, list[Vehicle]]:
        lanes = defaultdict(list)
        for v in self.vehicles.values():
            if v.on_road:
                lanes[v.state.lane].append(v)
        for vs in lanes.values():
            vs.sort(key=lambda v: -v.state.position)
        return lanes

    # --- event queue ---------------------------------------------------------

    def push(self, t_ns: int, vid: int, code: int, handler, *args) -> None:
        self._seq += 1
        heapq.heappush(self.queue, (t_ns, vid, code, self._seq, handler, args))

    def run(self) -> Trace:
        sc = self.sc
        self.trace.emit(0, "SIM_START", None, scenario=sc.name, seed=self.seed, vehicles=len(self.vehicles))
        self.push(0, GLOBAL, FRAME, self._on_frame, 0)
        self.push(0, GLOBAL, KIN, self._on_kin)
        self.push(0, GLOBAL, CROWD, self._on_crowd)
        for i, ev in enumerate(sc.events):
            self.push(to_ns(ev["t"]), ev.get("vehicle", ev.get("a", GLOBAL)), SCRIPT, self._on_script, ev)
        self.push(self.end_ns, GLOBAL, END, None)
        while self.queue:
            t, vid, code, _, handler, args = heapq.heappop(self.queue)
            self.now = t
            if code == END:
                break
            handler(*args)
            if self.checked:
                self._check_invariants((t, vid, code, handler.__name__, args))
        self.trace.emit(self.end_ns, "SIM_END", None, frames=self.frame + 1)
        self.trace.metrics = self._metrics()
        return self.trace

    # --- frame boundary ------------------------------------------------------

    def _on_frame(self, k: int) -> None:
        self.frame = k
        if k > 0:
            self._liveness(k)
            self._sensors(k)
        self.heard = defaultdict(set)
        self.active_cohorts = set()
        self.observed = defaultdict(list)
        self.schedule, self.sched_members = {}, {}
        for cid, c in self.cohorts.items():
            if c.n < 2:
                continue
            self.sched_members[cid] = c.members
            self.m["frame_capacity"] += self.mac.slots_per_frame
            for r, vid in enumerate(c.members, 1):
                self.schedule[vid] = Slot(cid, r, c.n, c.lane)
        for vid in sorted(self.schedule):
            v = self.vehicles[vid]
            s = self.schedule[vid]
            if k > 0:
                res_lg = lg_receive(s.rank, [], v.lg_state, frame=k, cohort_size=s.n)
                self._handle_flags(vid, res_lg.flags)
                lt_receive([], v.lt_state, frame=k, policy=self.lateral_policy)
            if self.sc.keepalive or _eligible(v.outbox, k):
                self.push(self.mac.slot_start_ns(k, s.rank, LONGITUDINAL), vid, TX, self._on_tx, vid, k, LONGITUDINAL)
            if _eligible(v.lt_outbox, k):
                self.push(self.mac.slot_start_ns(k, s.rank, LATERAL), vid, TX, self._on_tx, vid, k, LATERAL)
            for a in v.attacks:
                if a.active(k) and a.kind in ("masquerade", "sybil", "false_inject"):
                    self._schedule_attack(v, s, a, k)
                if a.kind == "distant" and k == a.start_frame:
                    self._distant(v)
        self.push((k + 1) * self.frame_ns + to_ns(self.mac.epoch), GLOBAL, FRAME, self._on_frame, k + 1)

    def _liveness(self, k: int) -> None:
        if not self.sc.keepalive:
            return
        for cid, members in self.sched_members.items():
            for a, b in zip(members, members[1:]):
                va, vb = self.vehicles[a], self.vehicles[b]
                if va.excluded or vb.excluded or self.cohort_of.get(a) != self.cohort_of.get(b):
                    self.missed.pop((a, b), None)
                    continue
                ok = b in self.heard[a] and a in self.heard[b]
                self.missed[(a, b)] = 0 if ok else self.missed[(a, b)] + 1
                if self.missed[(a, b)] >= self.sc.link_fail_frames:
                    cohort = self.cohorts[self.cohort_of[a]]
                    r = cohort.rank_of(a)
                    if r < cohort.n and cohort.member_at(r + 1) == b:
                        del self.missed[(a, b)]
                        self.trace.emit(self.now, "LINK_FAIL", a, peer=b, frames=self.sc.link_fail_frames)
                        front, rear = split(cohort, r, self._fresh_cid())
                        self.trace.emit(self.now, "SPLIT", a, cohort=cohort.cid, at_rank=r, new=[front.cid, rear.cid], reason="link_fail")
                        self._set_cohorts(cohort.cid, [front, rear], "link_fail", a)

    def _sensors(self, k: int) -> None:
        """Silent in-lane intruders inside a cohort's extent feed P3 at the member behind them."""
        lanes = self._lane_order()
        for cid in sorted(self.sched_members):
            c = self.cohorts.get(cid)
            if c is None or c.n < 2:
                continue
            members = set(c.members)
            head_x = self.vehicles[c.head].state.position
            tail_x = self.vehicles[c.tail].state.position
            order = lanes.get(c.lane, [])
            for i, v in enumerate(order):
                if v.id in members or not tail_x < v.state.position < head_x:
                    continue
                behind = next((w for w in order[i + 1 :] if w.id in members), None)
                if behind is None:
                    continue
                ev = SensorEvent(k, f"trk-{digest(cid, v.id)}", v.id in self.heard[behind.id], cid in self.active_cohorts)
                for viol in evaluate_predicates(behind.sc, ev):
                    self.trace.emit(self.now, "TPD_AUDIT", behind.id, predicate=viol.predicate, evidence=viol.evidence)
                    self.m["tpd_audits"] += 1

    # --- transmissions -------------------------------------------------------

    def _on_tx(self, vid: int, k: int, channel: str) -> None:
        v = self.vehicles[vid]
        s = self.schedule.get(vid)
        if not v.on_road or s is None:
            return
        box = v.outbox if channel == LONGITUDINAL else v.lt_outbox
        item = None
        for i, o in enumerate(box):
            if o.not_before <= k:
                item = o
                del box[i]
                break
        if item is None and not (channel == LONGITUDINAL and self.sc.keepalive):
            return
        last = v.last_tx.get(channel)
        if last is not None and self.now - last < self.frame_ns:
            # slot moved earlier after renumbering: wait one frame to keep the send separation
            if item is not None:
                box.appendleft(item)
            self.m["deferred_sends"] += 1
            return
        name = Name(s.rank, s.lane)
        if item is None:
            payload = f"ck:n={s.n}".encode()
            self._emit(v, s, channel, name, payload, kind=MGMT, origin=name, origin_frame=k, scope=BOTH)
            return
        origin = item.origin or name
        origin_frame = k if item.origin_frame is None else item.origin_frame
        payload = item.payload
        if item.tainted:
            self.tainted.add(payload)
        tx_id = self._emit(
            v, s, channel, name, payload, kind=SAFETY, origin=origin, origin_frame=origin_frame,
            scope=item.scope, lateral_targets=item.targets,
        )
        if item.tainted:
            self.attack_tx.add(tx_id)
            key = (channel, origin, origin_frame)
            self._attack_event("forge", vid, tx_id=tx_id, key=key)

    def _schedule_attack(self, v: Vehicle, s: Slot, a, k: int) -> None:
        S = self.mac.slots_per_frame
        if a.kind == "masquerade":
            target = a.target or (s.rank + 2 if s.rank + 2 <= s.n else s.rank - 2)
            if not 1 <= target <= s.n or target == s.rank:
                return
            t, name = self.mac.slot_start_ns(k, target), Name(target, s.lane)
        elif a.kind == "sybil":
            target = a.target or s.n + 1
            if not 1 <= target <= S or target == s.rank:
                return
            t, name = self.mac.slot_start_ns(k, target), Name(target, s.lane)
        else:  # false_inject: own name, a slot nobody owns (or straddling its own slot end)
            if s.n < S:
                t = self.mac.slot_start_ns(k, s.n + 1)
            else:
                t = self.mac.slot_start_ns(k, s.rank) + self.mac.slot_ns - to_ns(self.mac.tx_duration) // 2
            name = Name(s.rank, s.lane)
        self.push(t, v.id, ATTACK_TX, self._on_attack_tx, v.id, k, a.kind, name)

    def _on_attack_tx(self, vid: int, k: int, kind: str, name: Name) -> None:
        v = self.vehicles[vid]
        s = self.schedule.get(vid)
        if not v.on_road or s is None:
            return
        payload = BOGUS + f"{kind}:{k}".encode()
        self.tainted.add(payload)
        tx_id = self._tx_id + 1
        self.attack_tx.add(tx_id)
        self._attack_event(kind, vid, tx_id=tx_id)
        self._emit(v, s, LONGITUDINAL, name, payload, kind=SAFETY, origin=name, origin_frame=k, scope=BOTH)

    def _attack_event(self, kind: str, vid: int, **data) -> None:
        self.attack_events.append(dict(kind=kind, attacker=vid, frame=self.frame, **data))
        self.trace.emit(self.now, "ATTACK", vid, kind=kind, **{k: _plain(v) for k, v in data.items()})

    def _emit(self, v: Vehicle, s: Slot, channel, name, payload, *, kind, origin, origin_frame, scope, lateral_targets=()) -> int:
        self._tx_id += 1
        tx_id = self._tx_id
        t = from_ns(self.now)
        members = self.sched_members[s.cid]
        snap = self.snapshot()
        if channel == LONGITUDINAL:
            tx = lg_send(name, s.n, payload, origin=origin, origin_frame=origin_frame, kind=kind, scope=scope, tx_time=t)
            receivers = tuple(members[r - 1] for r in tx.targets if members[r - 1] != v.id)
        else:
            picks = lateral_targets
            if origin == name:
                picks = tuple(self._lateral_picks(v.id))
            lanes = {snap[p].lane: p for p in picks if p in snap}
            tx = lt_send(name, payload, lanes, origin=origin, origin_frame=origin_frame, tx_time=t)
            echoers = tuple(members[r - 1] for r in (s.rank - 1, s.rank + 1) if 1 <= r <= s.n) if origin == name else ()
            receivers = tuple(tx.targets) + echoers
        receivers = tuple(r for r in receivers if r in snap)
        msg = tx.message
        self.trace.emit(self.now, "N2N_TX", v.id, tx_id=tx_id, msg=msg.to_record())
        self.m["n2n_tx"] += 1
        self.m["n2n_tx_" + channel] += 1
        self.active_cohorts.add(s.cid)
        self._own_activation(v, s, channel)
        out = channel_deliver([Emission(v.id, receivers, msg)], snap, self.loss, self.rng, self.sc.ranges)
        self.m["pairs"] += len(receivers)
        self.m["delivered"] += len(out.delivered)
        self.m["lost"] += len(out.lost)
        self.m["out_of_range"] += len(out.out_of_range)
        if origin == name and kind == SAFETY and channel == LONGITUDINAL:
            self.origin_frames.setdefault(msg.key, origin_frame)
        for src, rx, m in out.delivered:
            self._receive(rx, src, m, tx_id, lateral_targets=tx.targets if channel == LATERAL else ())
        if v.sc.violations and v.id not in self.stops:
            self._stop(v)
        return tx_id

    def _lateral_picks(self, vid: int) -> list[int]:
        snap = self.snapshot()
        lane = snap[vid].lane
        picks = []
        for adj in (lane - 1, lane + 1):
            if self.sc.road.has_lane(adj):
                p = nearest_in_lane(vid, adj, snap, self.sc.ranges.n2n_range)
                if p is not None:
                    picks.append(p)
        return picks

    def _own_activation(self, v: Vehicle, s: Slot, channel: str) -> None:
        v.last_tx[channel] = self.now
        for viol in evaluate_predicates(v.sc, SendEvent(channel, from_ns(self.now), s.rank)):
            self.trace.emit(self.now, "TPD_VIOLATION", v.id, predicate=viol.predicate, evidence=viol.evidence)
            self.m["tpd_violations"] += 1

    # --- reception -------------------------------------------------------------

    def _receive(self, rx: int, src: int, msg: N2NMessage, tx_id: int, lateral_targets=()) -> None:
        r = self.vehicles[rx]
        if not r.on_road:
            return
        mine = self.schedule.get(rx)
        theirs = self.schedule.get(src)
        same_cohort = mine is not None and theirs is not None and mine.cid == theirs.cid
        if msg.channel == LONGITUDINAL and not same_cohort:
            self.m["overheard"] += 1
            return
        if same_cohort:
            claimed, occupied = theirs.rank, theirs.n
        else:
            claimed, occupied = msg.sender.r, None
        rec = TxRecord(msg.sender, msg.channel, msg.tx_time, duration=self.mac.tx_duration)
        chk = check_slot_ownership(rec, claimed, self.mac, occupied)
        if not chk.ok:
            self._mac_violation(rx, tx_id, chk.kind, msg, chk.owner)
            return
        obs = self.observed[rx]
        repeat = any(s == src for s, _, _ in obs)
        obs.append((src, rec, tx_id))
        flagged = detect_sybil([(s, t) for s, t, _ in obs], self.mac) if repeat else set()
        if flagged:
            for i in sorted(flagged):
                tid = obs[i][2]
                if (rx, tid) not in self._sybil_seen:
                    self._sybil_seen.add((rx, tid))
                    self._mac_violation(rx, tid, "sybil", msg, None)
            if len(obs) - 1 in flagged:
                return
        self.heard[rx].add(src)
        if msg.kind == MGMT:
            return
        k = self.frame
        if msg.channel == LONGITUDINAL:
            res = lg_receive(mine.rank, [msg], r.lg_state, frame=k, cohort_size=mine.n)
            self._handle_accepts(rx, res.accepted)
            self._handle_flags(rx, res.flags)
            for relay in res.relays:
                self._relay(r, relay, k)
        else:
            if rx in lateral_targets:
                res = lt_receive([msg], r.lt_state, frame=k, policy=self.lateral_policy)
                self._handle_accepts(rx, res.accepted, lateral=True)
                self._handle_flags(rx, res.flags)
            elif same_cohort and msg.sender == msg.origin and abs(mine.rank - theirs.rank) == 1:
                r.lt_outbox.append(
                    Outgoing(msg.payload, origin=msg.origin, origin_frame=msg.origin_frame, not_before=k + 1, targets=tuple(lateral_targets))
                )

    def _relay(self, r: Vehicle, relay: N2NMessage, k: int) -> None:
        active = [a for a in r.attacks if a.active(k)]
        if any(a.kind == "suppress" for a in active):
            self.suppressed_keys.add(relay.key)
            self._attack_event("suppress", r.id, key=relay.key)
            return
        payload, tainted = relay.payload, False
        if any(a.kind == "forge" for a in active):
            payload, tainted = BOGUS + relay.payload, True
        r.outbox.append(
            Outgoing(payload, scope=relay.scope, origin=relay.origin, origin_frame=relay.origin_frame, not_before=k + 1, tainted=tainted)
        )

    def _mac_violation(self, rx: int, tx_id: int, kind: str, msg: N2NMessage, owner) -> None:
        self.trace.emit(self.now, "MAC_VIOLATION", rx, tx_id=tx_id, kind=kind, claimed=str(msg.sender), owner=owner)
        self.m["mac_violations"] += 1
        if rx not in self.attackers:
            self.mac_flagged.add(tx_id)

    def _handle_accepts(self, rx: int, accepted, lateral: bool = False) -> None:
        for key, payload in accepted:
            self.trace.emit(self.now, "N2N_ACCEPT", rx, key=_plain(key), digest=digest(payload))
            self.m["accepted_lt" if lateral else "accepted_lg"] += 1
            if payload in self.tainted and rx not in self.attackers:
                self.m["forged_accepted"] += 1
            of = self.origin_frames.get(key)
            if of is not None and not lateral:
                self.latencies.append(self.frame - of + 1)

    def _handle_flags(self, rx: int, flags) -> None:
        for f in flags:
            self.trace.emit(self.now, "N2N_FLAG", rx, kind=f.kind, key=_plain(f.key), suspects=list(f.suspects))
            self.m["flag_" + f.kind] += 1
            if rx not in self.attackers:
                self.flag_keys[f.kind].add(f.key)

    # --- exclusion -------------------------------------------------------------

    def _stop(self, v: Vehicle) -> None:
        day = int(from_ns(self.now) // SECONDS_PER_DAY)
        plan = execute_stop(v.state, v.sc, v.nsc, decel=self.sc.stop_decel, dt=self.sc.dt, day=day, halt_lane=SHOULDER)
        self.stops[v.id] = plan
        self.trace.emit(
            self.now, "STOP", v.id, halt_time=plan.halt_time, halt_distance=plan.halt_distance,
            predicates=sorted({e.predicate for e in v.sc.violations}),
        )
        v.excluded = True
        v.outbox.clear()
        v.lt_outbox.clear()
        v.state = replace(v.state, lane=SHOULDER)
        self._remove_member(v.id, "stop")
        self._v2x(v, plan.report.to_record(), sign=False)
        self._snapshot = None

    def _v2x(self, v: Vehicle, record: dict, sign: bool = True, **meta) -> None:
        """Outbound V2X through the stealth filter; ``meta`` goes to the trace, not on air."""
        cls = record["class"]
        if v.stealth and cls not in STEALTH_EXCEPTIONS:
            self.trace.emit(self.now, "V2X_BLOCKED", v.id, msg_class=cls)
            self.m["v2x_blocked"] += 1
            return
        if sign and "pseudo" not in record:
            try:
                record = dict(record, pseudo=v.nsc.take_pseudo(int(from_ns(self.now) // SECONDS_PER_DAY), NSC).pseudo_id)
            except AuthUnavailable:
                record = dict(record, pseudo="")
        code = "EXCL_REPORT" if cls == "exclusion_report" else "V2X_TX"
        self.trace.emit(self.now, code, v.id, stealth=v.stealth, msg=record, **meta)
        self.m["v2x_tx"] += 1

    def _distant(self, v: Vehicle) -> None:
        """A remote attacker owns the NSC side; every SC-side write must bounce."""
        self._attack_event("distant", v.id)
        attempts = (
            ("sc_log", lambda: v.sc.record(ViolationEntry(from_ns(self.now), "forged", "remote"), source=NSC)),
            ("sc_pseudo", lambda: v.sc.take_pseudo(0, source=NSC)),
            ("motion", lambda: self._command(v, -8.0, source=NSC)),
        )
        for what, attempt in attempts:
            try:
                attempt()
            except CompartmentViolation:
                self.trace.emit(self.now, "COMPARTMENT_BLOCKED", v.id, target=what)
                self.m["compartment_blocked"] += 1

    def _command(self, v: Vehicle, accel: float, source: str = SC, duration_ns: int | None = None) -> None:
        if source != SC:
            raise CompartmentViolation(f"{source} event attempted a motion command")
        until = self.end_ns if duration_ns is None else self.now + duration_ns
        v.accel_override = (accel, until)

    # --- kinematics ------------------------------------------------------------

    def _on_kin(self) -> None:
        dt = self.sc.dt
        lanes = self._lane_order()
        accel = {}
        for lane, order in lanes.items():
            for i, v in enumerate(order):
                accel[v.id] = self._control(v, order[i - 1] if i > 0 else None)
        for v in self.vehicles.values():
            if v.off_road:
                continue
            if v.excluded:
                if v.halted:
                    continue
                v.state = advance_state(v.state, -self.sc.stop_decel, dt)
                if v.state.velocity == 0:
                    v.halted = True
                    self.trace.emit(self.now, "HALT", v.id, position=v.state.position, lane=v.state.lane)
                continue
            s = advance_state(v.state, accel[v.id], dt)
            v.state = replace(s, position=self.sc.road.wrap(s.position))
        self._snapshot = None
        self._collisions()
        self.push(self.now + self.dt_ns, GLOBAL, KIN, self._on_kin)

    def _control(self, v: Vehicle, leader: Vehicle | None) -> float:
        if v.accel_override is not None:
            a, until = v.accel_override
            if self.now < until:
                return a
            v.accel_override = None
            v.desired_v = v.state.velocity
        a = SPEED_GAIN * (v.desired_v - v.state.velocity)
        if leader is not None:
            gap = self.sc.road.delta(v.state.position, leader.state.position) - self.sc.vehicle_length
            if gap < LOOKAHEAD:
                cid = self.cohort_of.get(v.id)
                predecessor = cid is not None and cid == self.cohort_of.get(leader.id)
                if predecessor:
                    kg, kv = FOLLOW_GAINS
                    want = required_iv_gap(v.state.velocity, v.aul, self.sc.gaps)
                    a = min(a, kg * (gap - want) + kv * (leader.state.velocity - v.state.velocity))
                else:
                    want = required_ic_gap(v.state.velocity, self.sc.gaps)
                    if gap < want:
                        kg, kv = IC_GAINS
                        a = min(a, kg * (gap - want) + kv * (leader.state.velocity - v.state.velocity))
        return max(-self.sc.gaps.brake_decel, min(MAX_ACCEL, a))

    def _collisions(self) -> None:
        for order in self._lane_order().values():
            for lead, follow in zip(order, order[1:]):
                pair = (lead.id, follow.id)
                if self.sc.road.delta(follow.state.position, lead.state.position) < self.sc.vehicle_length and pair not in self._collided:
                    self._collided.add(pair)
                    self.trace.emit(self.now, "COLLISION", follow.id, other=lead.id, lane=lead.state.lane)
                    self.m["collisions"] += 1

    # --- scripted events ---------------------------------------------------------

    def _on_script(self, ev: dict) -> None:
        kind = ev["type"]
        getattr(self, "_script_" + kind)(ev)

    def _script_lg_join(self, ev: dict) -> None:
        self._request_join(ev, "lg")

    def _script_lt_join(self, ev: dict) -> None:
        self._request_join(ev, "lt")

    def _request_join(self, ev: dict, kind: str) -> None:
        vid = ev["vehicle"]
        v = self.vehicles[vid]
        target = self.cohort_of.get(ev["cohort_of"])
        if not v.on_road or target is None:
            return
        self.trace.emit(self.now, "JOIN_REQ", vid, kind=kind, cohort=target)
        self.m["join_requests"] += 1
        mine = self.cohort_of.get(vid)
        if mine is not None and self.cohorts[mine].n > 1:
            self._join_rejected(vid, kind, "member")
            return
        t = from_ns(self.now)
        req = JoinRequest(kind, v.aul, v.state.lane, ev.get("after"), t)
        try:
            signed = sign_join(v.sc, req)
        except AuthUnavailable:
            self._join_rejected(vid, kind, "auth_unavailable")
            return
        self.m["sc_pseudos_used"] += 1
        self.push(self.now + to_ns(self.verifier.verify_delay), vid, VERIFY, self._on_verify, vid, kind, target, ev, signed, self.now)

    def _join_rejected(self, vid: int, kind: str, reason: str, requested: int | None = None) -> None:
        self.trace.emit(self.now, "JOIN_REJ", vid, kind=kind, reason=reason, requested_ns=requested)
        self.m["joins_rejected"] += 1

    def _on_verify(self, vid: int, kind: str, cid: int, ev: dict, signed, requested_ns: int) -> None:
        cohort = self.cohorts.get(cid)
        v = self.vehicles[vid]
        if cohort is None or not v.on_road:
            self._join_rejected(vid, kind, "gone", requested_ns)
            return
        snap = self.perceived()
        now = from_ns(requested_ns)
        cand = Candidate(vid, v.aul)
        if kind == "lg":
            decision, joined = lg_join(cohort, cand, signed, self.verifier, snap, policy=self.sc.policy, ranges=self.sc.ranges, now=now)
        else:
            after = ev["after"]
            if not 0 <= after <= cohort.n:
                self._join_rejected(vid, kind, "position", requested_ns)
                return
            decision, joined = lt_join(
                cohort, cand, after, signed, self.verifier, snap, self.auls,
                policy=self.sc.policy, gaps=self.sc.gaps, ranges=self.sc.ranges, now=now,
                vehicle_length=self.sc.vehicle_length,
            )
        if not decision.accepted:
            self._join_rejected(vid, kind, decision.reason, requested_ns)
            return
        self.trace.emit(self.now, "JOIN_OK", vid, kind=kind, cohort=cid, rank=decision.rank, requested_ns=requested_ns, decided_ns=self.now)
        self.m["joins_ok"] += 1
        old = self.cohort_of.get(vid)
        if old is not None:
            self.cohorts.pop(old, None)
        if kind == "lt":
            v.state = replace(v.state, lane=cohort.lane)
        v.desired_v = cohort.velocity
        self._set_cohorts(cid, [joined], "join", vid)

    def _script_leave(self, ev: dict) -> None:
        vid = ev["vehicle"]
        v = self.vehicles[vid]
        if not v.on_road:
            return
        self._remove_member(vid, "leave")
        v.off_road = True
        v.outbox.clear()
        v.lt_outbox.clear()
        self._snapshot = None

    def _script_accel(self, ev: dict) -> None:
        v = self.vehicles[ev["vehicle"]]
        if v.on_road:
            self._command(v, float(ev["accel"]), SC, to_ns(ev["duration"]))

    def _script_disseminate(self, ev: dict) -> None:
        vid = ev["vehicle"]
        v = self.vehicles[vid]
        cid = self.cohort_of.get(vid)
        if not v.on_road or cid is None or self.cohorts[cid].n < 2:
            return
        payload = ev["payload"].encode()
        direction = ev.get("direction", BOTH)
        v.outbox.append(Outgoing(payload, scope=direction, not_before=self.frame + 1))
        c = self.cohorts[cid]
        self.trace.emit(self.now, "DISSEM", vid, cohort=cid, origin_rank=c.rank_of(vid), direction=direction, reason="event", digest=digest(payload))

    def _script_lateral(self, ev: dict) -> None:
        v = self.vehicles[ev["vehicle"]]
        if v.on_road:
            v.lt_outbox.append(Outgoing(ev["payload"].encode(), not_before=self.frame + 1))

    def _script_v2x(self, ev: dict) -> None:
        v = self.vehicles[ev["vehicle"]]
        if not v.excluded:
            self._v2x(v, {"class": ev["class"]})

    def _script_link_fail(self, ev: dict) -> None:
        a, b = ev["a"], ev["b"]
        self.loss = self.loss.with_override(a, b, 1.0).with_override(b, a, 1.0)

    # --- crowdsourcing ----------------------------------------------------------

    def _on_crowd(self) -> None:
        rnd = self._crowd_round
        self._crowd_round += 1
        for cid in sorted(self.cohorts):
            c = self.cohorts[cid]
            for rank in crowdsource_round(c, rnd, self.crowd, self.rng):
                v = self.vehicles[c.member_at(rank)]
                try:
                    p = v.nsc.take_pseudo(int(from_ns(self.now) // SECONDS_PER_DAY), NSC)
                except AuthUnavailable:
                    self.m["crowd_unsigned"] += 1
                    continue
                msg = CrowdMessage(c.n, v.state.position, p.pseudo_id)
                self._v2x(v, msg.to_record(), round=rnd, cohort=cid)
                self.m["crowd_messages"] += 1
        self.m["crowd_rounds"] += 1
        self.push(self.now + to_ns(self.sc.crowd_period), GLOBAL, CROWD, self._on_crowd)

    # --- checked mode -----------------------------------------------------------

    def _check_invariants(self, event) -> None:
        problems = []
        snap = self.snapshot()
        seen = set()
        for c in self.cohorts.values():
            on_road = all(self.vehicles[m].on_road for m in c.members)
            problems += cohort_problems(c, snap if on_road else None, self.auls, self.sc.policy)
            if seen & set(c.members):
                problems.append(f"vehicle in two cohorts: {sorted(seen & set(c.members))}")
            seen |= set(c.members)
        owners = defaultdict(list)
        for vid, s in self.schedule.items():
            owners[(s.cid, s.rank)].append(vid)
        problems += [f"slot {k} shared by {v}" for k, v in owners.items() if len(v) > 1]
        for vid, v in self.vehicles.items():
            n = len(v.sc.violation_log)
            if n < self._tpd_lengths.get(vid, 0):
                problems.append(f"vehicle {vid}: TPD log shrank")
            self._tpd_lengths[vid] = n
        if self.m["pairs"] != self.m["delivered"] + self.m["lost"] + self.m["out_of_range"]:
            problems.append("channel accounting does not balance")
        if event[2] == FRAME:
            for vid in snap.placements:
                if len(compute_cell(vid, snap, self.sc.ranges)) > MAX_CELL_MEMBERS:
                    problems.append(f"vehicle {vid}: cell exceeds {MAX_CELL_MEMBERS}")
        if problems:
            raise InvariantBreach("; ".join(problems), event)

    # --- metrics --------------------------------------------------------------------

    def _metrics(self) -> dict:
        m = self.m
        detected = 0
        for ev in self.attack_events:
            if self._detected(ev):
                detected += 1
        honest_violations = sum(
            1 for e in self.trace.of("TPD_VIOLATION") if e.subject not in self.attackers
        )
        unexplained_mac = sum(
            1 for e in self.trace.of("MAC_VIOLATION") if e.data["tx_id"] not in self.attack_tx and e.subject not in self.attackers
        )
        unexplained_forgery = sum(1 for key in self.flag_keys["forgery"] if not self._key_tainted(key))
        violations = m["mac_violations"] + m["tpd_violations"] + m["flag_forgery"] + m["flag_spanning_violation"]
        frames = self.frame + 1
        remaining = sum(len(v.sc) + len(v.nsc) for v in self.vehicles.values())
        lat = self.latencies
        return {
            "scenario": self.sc.name,
            "seed": self.seed,
            "frames": frames,
            "collisions": m["collisions"],
            "n2n_tx": m["n2n_tx"],
            "pairs": m["pairs"],
            "delivered": m["delivered"],
            "lost": m["lost"],
            "out_of_range": m["out_of_range"],
            "accepted_lg": m["accepted_lg"],
            "accepted_lt": m["accepted_lt"],
            "mac_violations": m["mac_violations"],
            "tpd_violations": m["tpd_violations"],
            "tpd_audits": m["tpd_audits"],
            "flags_forgery": m["flag_forgery"],
            "flags_suppression_or_loss": m["flag_suppression_or_loss"],
            "flags_spanning_violation": m["flag_spanning_violation"],
            "flags_lateral": m["flag_lateral_minority"] + m["flag_lateral_conflict"],
            "violations": violations,
            "false_positives": honest_violations + unexplained_mac + unexplained_forgery,
            "attack_events": len(self.attack_events),
            "attack_detected": detected,
            "detection_rate": detected / len(self.attack_events) if self.attack_events else 1.0,
            "forged_accepted": m["forged_accepted"],
            "stops": len(self.stops),
            "compartment_blocked": m["compartment_blocked"],
            "joins_ok": m["joins_ok"],
            "joins_rejected": m["joins_rejected"],
            "pseudos_consumed": self.initial_pool - remaining,
            "latency_max_frames": max(lat, default=0),
            "latency_mean_frames": sum(lat) / len(lat) if lat else 0.0,
            "utilization": m["n2n_tx_lg"] / m["frame_capacity"] if m["frame_capacity"] else 0.0,
            "v2x_tx": m["v2x_tx"],
            "v2x_blocked": m["v2x_blocked"],
            "crowd_messages": m["crowd_messages"],
            "crowd_rounds": m["crowd_rounds"],
            "deferred_sends": m["deferred_sends"],
        }

    def _key_tainted(self, key) -> bool:
        return any(ev.get("key") == key for ev in self.attack_events)

    def _detected(self, ev: dict) -> bool:
        kind = ev["kind"]
        if kind in ("masquerade", "sybil", "false_inject"):
            return ev["tx_id"] in self.mac_flagged or ev["attacker"] in self.stops
        if kind == "forge":
            return ev["key"] in self.flag_keys["forgery"]
        if kind == "suppress":
            return ev["key"] in self.flag_keys["suppression_or_loss"]
        if kind == "distant":
            return self.m["compartment_blocked"] > 0
        return False


def _eligible(box, k: int) -> bool:
    return any(o.not_before <= k for o in box)


def _plain(value):
    if isinstance(value, Name):
        return str(value)
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def run_scenario(scenario: Scenario, *, seed: int | None = None, checked: bool = False) -> Trace:
    """Run one scenario to completion and return its trace (metrics attached)."""
    sim = Simulation(scenario, seed=seed, checked=checked)
    trace = sim.run()
    trace.metrics["trace_hash"] = trace.hash
    trace.simulation = sim
    return trace
