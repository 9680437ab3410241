"""Independent reference models shared by the module tests and the acceptance suite."""

import random
from typing import NamedTuple

from avnet.cells import Placement, WorldSnapshot
from avnet.cohort import Candidate, Cohort, CohortPolicy, cohort_problems, leave, lg_join, lt_join, split
from avnet.kinematics import GapPolicy, RoadSegment
from avnet.n2n import HEADWARD, TAILWARD
from avnet.security import CertificationAuthority, JoinRequest, JoinVerifier, sign_join

ROAD = RoadSegment(lane_count=3, length=100_000.0)


def world(placements):
    return WorldSnapshot(ROAD, {vid: Placement(x, lane) for vid, (x, lane) in placements.items()})


class FuzzStats(NamedTuple):
    attempted: int
    accepted: dict
    max_cohorts: int


def brute_force_cell(subject, snap, window):
    """Reference selection by rank counting: a candidate is kept when fewer than
    the quota of qualifying rivals beat it on (|offset|, id)."""
    me = snap.placements[subject]

    def offset(vid):
        return snap.road.delta(me.x, snap.placements[vid].x)

    def group(vid):
        p = snap.placements[vid]
        d = offset(vid)
        if vid == subject or abs(d) > window:
            return None
        if p.lane == me.lane:
            return ("ahead", 2) if d > 0 else ("behind", 2)
        if abs(p.lane - me.lane) == 1:
            return (("lane", p.lane), 5)
        return None

    picked = set()
    for vid in snap.placements:
        g = group(vid)
        if g is None:
            continue
        rivals = [
            w for w in snap.placements
            if w != vid and group(w) == g and (abs(offset(w)), w) < (abs(offset(vid)), vid)
        ]
        if len(rivals) < g[1]:
            picked.add(vid)
    return picked


def random_snapshot(rng, n=None, span=300.0, lanes=3):
    n = rng.randint(0, 90) if n is None else n
    placements = {}
    taken = set()
    vid = 0
    while len(placements) < n:
        lane = rng.randint(1, lanes)
        x = round(rng.uniform(0, span) * 2) / 2  # half-meter grid forces distance ties
        if (lane, x) in taken:
            continue
        taken.add((lane, x))
        placements[vid] = Placement(x, lane)
        vid += 1
    return WorldSnapshot(RoadSegment(lane_count=lanes), placements)



def hop_oracle(n, origin, direction, lost=frozenset()):
    """Frame-synchronous reference: a member accepts on a direct copy from an
    adjacent origin, or once two distinct neighbors delivered the payload;
    whoever accepts in frame k relays in frame k+1 if someone lies beyond."""
    def wanted(r):
        if r == origin:
            return False
        if direction == TAILWARD:
            return r > origin
        if direction == HEADWARD:
            return r < origin
        return True

    accept, heard = {}, {r: set() for r in range(1, n + 1)}
    senders = {origin}
    k = 0
    while senders:
        fresh = set()
        for s in senders:
            for t in range(s - 2, s + 3):
                if t == s or not 1 <= t <= n or (s, t) in lost or not wanted(t) or t in accept:
                    continue
                if s == origin and abs(t - origin) == 1:
                    accept[t] = k
                    fresh.add(t)
                else:
                    heard[t].add(s)
        for t in range(1, n + 1):
            if t not in accept and wanted(t) and len(heard[t]) >= 2:
                accept[t] = k
                fresh.add(t)
        senders = {t for t in fresh if 1 <= t + (1 if t > origin else -1) <= n}
        k += 1
    return accept


def independent_problems(cohort, snap, auls, policy):
    """Re-derive the cohort invariants without the library's checker."""
    out = []
    names = [(i + 1, cohort.lane) for i in range(cohort.n)]
    if [(m.name.r, m.name.j) for m in cohort.memberships()] != names:
        out.append("ranks")
    xs = [snap[v].x for v in cohort.members]
    if xs != sorted(xs, reverse=True) or len(set(xs)) != len(xs):
        out.append("order")
    if any(snap[v].lane != cohort.lane for v in cohort.members):
        out.append("lane")
    if any(not cohort.sl <= auls[v] <= cohort.hl for v in cohort.members):
        out.append("level")
    if cohort.n > policy.n_max(cohort.velocity):
        out.append("size")
    return out


def fuzz_cohorts(seed: int = 4, ops: int = 10_000) -> FuzzStats:
    """Random LgJoin/LtJoin/leave/split traffic over at most 8 cohorts.

    Every cohort invariant is asserted after every operation.
    """
    rng = random.Random(seed)
    policy = CohortPolicy()
    gaps = GapPolicy()
    ca = CertificationAuthority()
    verifier = JoinVerifier(ca)
    places, auls, cohorts = {}, {}, {}
    next_vid, next_cid = 1, 1

    def add_vehicle(x, lane, aul):
        nonlocal next_vid
        vid = next_vid
        next_vid += 1
        places[vid] = (x, lane)
        auls[vid] = aul
        return vid

    for i in range(4):
        lane = 1 + i % 3
        sl = rng.randint(0, 3)
        hl = rng.randint(sl, 5)
        v = rng.choice([5.0, 10.0, 25.0, 35.0])
        members = [add_vehicle(10_000.0 * (i + 1) - 40.0 * k, lane, rng.randint(sl, hl)) for k in range(3)]
        cohorts[next_cid] = Cohort(next_cid, lane, tuple(members), v, sl, hl)
        next_cid += 1

    counts = dict.fromkeys(["lg", "lt", "leave", "split"], 0)
    accepted = dict.fromkeys(counts, 0)
    max_cohorts = len(cohorts)
    for _ in range(ops):
        op = rng.choices(["lg", "lt", "leave", "split"], weights=[3, 4, 2, 1])[0]
        cid = rng.choice(sorted(cohorts))
        c = cohorts[cid]
        counts[op] += 1
        if op == "lg":
            tail_x = places[c.tail][0]
            aul = rng.randint(0, 5)
            vid = add_vehicle(tail_x - rng.uniform(15.0, 30.0), c.lane, aul)
            tpd = ca.issue_pseudos(ca.register(vid), 1)
            req = sign_join(tpd, JoinRequest("lg", aul, c.lane))
            d, new = lg_join(c, Candidate(vid, aul), req, verifier, world(places), policy=policy)
            if not d.accepted:
                del places[vid]
                continue
        elif op == "lt":
            k = rng.randint(0, c.n)
            lane = c.lane + rng.choice([-1, 1])
            if not ROAD.has_lane(lane):
                continue
            hi = places[c.members[k - 1]][0] if k else places[c.head][0] + 40.0
            lo = places[c.members[k]][0] if k < c.n else places[c.tail][0] - 40.0
            x = round(rng.uniform(lo, hi), 3)
            if any(p == (x, lane) for p in places.values()) or x in (lo, hi):
                continue
            aul = rng.randint(0, 5)
            vid = add_vehicle(x, lane, aul)
            tpd = ca.issue_pseudos(ca.register(vid), 1)
            req = sign_join(tpd, JoinRequest("lt", aul, lane, k))
            d, new = lt_join(c, Candidate(vid, aul), k, req, verifier, world(places), auls, policy=policy, gaps=gaps)
            if not d.accepted:
                del places[vid]
                continue
            places[vid] = (x, c.lane)  # lane change completes with the commit
        elif op == "leave":
            if len(cohorts) == 1 and c.n == 1:
                continue
            # at the cohort cap only the ends may leave (no new cohort forms)
            vid = rng.choice((c.head, c.tail) if len(cohorts) >= 8 else c.members)
            parts = leave(c, vid, next_cid)
            del places[vid]
            del cohorts[cid]
            for p in parts:
                cohorts[p.cid] = p
            next_cid += 1
            new = None
        else:
            if c.n < 2 or len(cohorts) >= 8:
                continue
            a, b = split(c, rng.randint(1, c.n - 1), next_cid)
            cohorts[a.cid], cohorts[b.cid] = a, b
            next_cid += 1
            new = None
        accepted[op] += 1
        if new is not None:
            cohorts[cid] = new
        snap = world(places)
        assert len(cohorts) <= 8
        max_cohorts = max(max_cohorts, len(cohorts))
        member_sets = [set(x.members) for x in cohorts.values()]
        assert sum(map(len, member_sets)) == len(set().union(*member_sets))
        for x in cohorts.values():
            assert cohort_problems(x, snap, auls, policy) == []
            assert independent_problems(x, snap, auls, policy) == []
    return FuzzStats(sum(counts.values()), accepted, max_cohorts)
