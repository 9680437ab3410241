import itertools
import json

from hypothesis import given
from hypothesis import strategies as st

from avnet.cells import Placement, WorldSnapshot, nearest_in_lane
from avnet.kinematics import RoadSegment
from avnet.mac import LATERAL, LONGITUDINAL, Name
from avnet.n2n import (
    BOTH,
    HEADWARD,
    MGMT,
    TAILWARD,
    AcceptanceState,
    LateralPolicy,
    N2NMessage,
    lg_receive,
    lg_send,
    lt_receive,
    lt_send,
    relay_kwargs,
)

LANE = 2


def name(r, j=LANE):
    return Name(r, j)


def lg(sender, origin, payload=b"clear lane", frame=0, scope=BOTH):
    return N2NMessage(name(sender), LONGITUDINAL, payload, name(origin), origin_frame=frame, scope=scope)


def lt(sender, origin, payload=b"lane merging"):
    return N2NMessage(name(sender), LATERAL, payload, name(origin))


def test_lg_send_reaches_two_each_side():
    assert lg_send(name(3), 10, b"x").targets == (1, 2, 4, 5)
    assert lg_send(name(1), 10, b"x").targets == (2, 3)
    assert lg_send(name(2), 2, b"x").targets == (1,)
    assert lg_send(name(1), 1, b"x").targets == ()


def test_lg_send_range_filter():
    tx = lg_send(name(3), 10, b"x", reachable=lambda r: r != 5)
    assert tx.targets == (1, 2, 4)
    assert tx.message.dest == (1, 2, 4)


def lateral_world(*others):
    placements = {0: Placement(100.0, 2)}
    placements.update({vid: Placement(x, lane) for vid, (x, lane) in enumerate(others, start=1)})
    return WorldSnapshot(RoadSegment(lane_count=3), placements)


def picks(snap, subject=0):
    lane = snap[subject].lane
    return {adj: nearest_in_lane(subject, adj, snap, 30.0) for adj in (lane - 1, lane + 1) if snap.road.has_lane(adj)}


def test_lt_send_both_sides():
    snap = lateral_world((104.0, 1), (120.0, 1), (98.0, 3))
    tx = lt_send(name(1), b"m", picks(snap))
    assert tx.targets == (1, 3)
    assert tx.message.dest == (1, 3)


def test_lt_send_road_edge():
    snap = WorldSnapshot(RoadSegment(lane_count=3), {0: Placement(100.0, 1), 1: Placement(95.0, 2)})
    assert lt_send(name(1, 1), b"m", picks(snap)).targets == (1,)


def test_lt_send_nobody_in_range():
    snap = lateral_world((160.0, 1), (40.0, 3))
    assert lt_send(name(1), b"m", picks(snap)).targets == ()


def test_accept_seen_twice():
    st_ = AcceptanceState()
    first = lg_receive(3, [lg(5, 5)], st_, frame=0, cohort_size=8)
    assert first.accepted == []
    res = lg_receive(3, [lg(4, 5)], st_, frame=1, cohort_size=8)
    assert res.accepted == [((LONGITUDINAL, name(5), 0), b"clear lane")]
    assert res.flags == []
    assert len(res.relays) == 1


def test_adjacent_origin_accepted_on_direct_copy_and_relayed():
    st_ = AcceptanceState()
    res = lg_receive(4, [lg(5, 5)], st_, frame=0, cohort_size=8)
    assert res.accepted and res.relays
    again = lg_receive(4, [lg(6, 5)], st_, frame=1, cohort_size=8)
    assert again.accepted == [] and again.flags == []


def test_disagreeing_copies_flag_forgery():
    st_ = AcceptanceState()
    lg_receive(3, [lg(5, 5)], st_, frame=0, cohort_size=8)
    res = lg_receive(3, [lg(4, 5, payload=b"BOGUS")], st_, frame=1, cohort_size=8)
    assert res.accepted == []
    assert [f.kind for f in res.flags] == ["forgery"]
    assert res.flags[0].suspects == (4,)


def test_single_copy_times_out_as_suppression_or_loss():
    st_ = AcceptanceState()
    lg_receive(3, [lg(5, 5)], st_, frame=0, cohort_size=8)
    assert lg_receive(3, [], st_, frame=1, cohort_size=8).flags == []
    res = lg_receive(3, [], st_, frame=2, cohort_size=8)
    assert [f.kind for f in res.flags] == ["suppression_or_loss"]
    assert res.accepted == []
    assert not st_.pending


def test_out_of_neighborhood_sender_flagged():
    res = lg_receive(2, [lg(5, 5)], AcceptanceState(), frame=0, cohort_size=8)
    assert [f.kind for f in res.flags] == ["spanning_violation"]


def test_scope_limits_recipients():
    st_ = AcceptanceState()
    res = lg_receive(1, [lg(2, 2, scope=TAILWARD)], st_, frame=0, cohort_size=8)
    assert res.accepted == []
    res = lg_receive(3, [lg(2, 2, scope=HEADWARD)], st_, frame=0, cohort_size=8)
    assert res.accepted == []


def test_tail_does_not_relay_tailward():
    res = lg_receive(8, [lg(7, 7)], AcceptanceState(), frame=0, cohort_size=8)
    assert res.accepted and not res.relays


def test_management_traffic_ignored():
    m = N2NMessage(name(4), LONGITUDINAL, b"ck:n=8", name(4), kind=MGMT)
    assert lg_receive(3, [m], AcceptanceState(), frame=0, cohort_size=8).accepted == []


def test_delivered_at_most_once():
    st_ = AcceptanceState()
    accepted = []
    for k, sender in enumerate([5, 4, 4, 5]):
        accepted += lg_receive(3, [lg(sender, 5)], st_, frame=k, cohort_size=8).accepted
    assert len(accepted) == 1


def test_relay_kwargs_keep_origin():
    msg = lg(2, 1, frame=7, scope=TAILWARD)
    tx = lg_send(name(3), 8, **relay_kwargs(msg))
    assert tx.message.origin == name(1)
    assert tx.message.origin_frame == 7
    assert tx.message.hop == ("relayed", 3)
    assert msg.hop == ("relayed", 2)
    assert lg(1, 1).hop == "direct"


def test_lateral_two_of_three_accepts():
    st_ = AcceptanceState()
    res = lt_receive([lt(4, 4), lt(3, 4)], st_, frame=0)
    assert res.accepted == [((LATERAL, name(4), 0), b"lane merging")]


def test_lateral_one_of_three_rejected():
    st_ = AcceptanceState()
    assert lt_receive([lt(4, 4)], st_, frame=0).accepted == []
    assert lt_receive([], st_, frame=2).accepted == []
    assert not st_.pending


def test_lateral_three_distinct_flags_all():
    res = lt_receive([lt(3, 4, b"a"), lt(4, 4, b"b"), lt(5, 4, b"c")], AcceptanceState(), frame=0)
    assert res.accepted == []
    assert [(f.kind, f.suspects) for f in res.flags] == [("lateral_conflict", (3, 4, 5))]


def test_lateral_majority_flags_minority():
    res = lt_receive([lt(3, 4, b"bad"), lt(4, 4), lt(5, 4)], AcceptanceState(), frame=0)
    assert res.accepted[0][1] == b"lane merging"
    assert [(f.kind, f.suspects) for f in res.flags] == [("lateral_minority", (3,))]


def test_lateral_sender_outside_group():
    res = lt_receive([lt(7, 4)], AcceptanceState(), frame=0)
    assert [f.kind for f in res.flags] == ["spanning_violation"]


def test_lateral_policy_is_swappable():
    policy = LateralPolicy(quorum=1)
    assert lt_receive([lt(4, 4)], AcceptanceState(), frame=0, policy=policy).accepted


def run_with_attacker(n, origin, attacker, direction, mode):
    """Frame-synchronous dissemination where one relay forges or drops.
    Returns what each rank accepted."""
    states = {r: AcceptanceState() for r in range(1, n + 1)}
    outgoing = {origin: b"safe"}
    accepted = {}
    for k in range(n + 5):
        inbox = {r: [] for r in states}
        for r, payload in sorted(outgoing.items()):
            tx = lg_send(name(r), n, payload, origin=name(origin), scope=direction)
            for t in tx.targets:
                inbox[t].append(tx.message)
        outgoing = {}
        for r in states:
            res = lg_receive(r, inbox[r], states[r], frame=k, cohort_size=n)
            for _, payload in res.accepted:
                accepted[r] = payload
            for m in res.relays:
                if r == attacker and mode == "suppress":
                    continue
                outgoing[r] = b"BOGUS" if r == attacker and mode == "forge" else m.payload
    return accepted


def test_no_forged_payload_accepted_exhaustive():
    """Every single-attacker placement, origin and direction for n <= 8."""
    for n in range(2, 9):
        for origin, attacker, direction in itertools.product(range(1, n + 1), range(1, n + 1), (TAILWARD, HEADWARD, BOTH)):
            if attacker == origin:
                continue
            for mode in ("forge", "suppress"):
                accepted = run_with_attacker(n, origin, attacker, direction, mode)
                for r, payload in accepted.items():
                    if r != attacker:
                        assert payload == b"safe", (n, origin, attacker, direction, mode, r)


def test_message_record_carries_only_names():
    rec = lg(2, 1).to_record()
    assert set(rec) == {"sender", "channel", "kind", "origin", "origin_frame", "scope", "dest", "tx_time", "payload"}
    text = json.dumps(rec)
    for banned in ("vehicle", "pseudo", "cert", "position", '"x"', '"id"'):
        assert banned not in text


@given(
    n=st.integers(2, 12),
    origin=st.integers(1, 12),
    direction=st.sampled_from([TAILWARD, HEADWARD, BOTH]),
)
def test_restricted_spanning(n, origin, direction):
    origin = min(origin, n)
    tx = lg_send(name(origin), n, b"p", scope=direction)
    assert all(abs(t - origin) <= 2 for t in tx.targets)
