import random
import time

import pytest
from hypothesis import given
from hypothesis import strategies as st

from avnet.cohort import (
    Candidate,
    Cohort,
    CohortPolicy,
    admission_check,
    disseminate,
    leave,
    lg_join,
    lt_join,
    new_cohort,
    split,
)
from avnet.errors import AuthUnavailable, ProtocolError
from avnet.n2n import BOTH, HEADWARD, TAILWARD
from avnet.security import CertificationAuthority, JoinRequest, JoinVerifier, Pseudo, SignedRequest, sign_join
from oracles import fuzz_cohorts, hop_oracle, world


def line(members, lane=2, head_x=1000.0, spacing=10.0):
    return {vid: (head_x - i * spacing, lane) for i, vid in enumerate(members)}


@pytest.fixture
def ca():
    return CertificationAuthority()


def signed_for(ca, kind="lg", aul=4, lane=2, count=10):
    tpd = ca.issue_pseudos(ca.register("joiner"), count)
    return tpd, sign_join(tpd, JoinRequest(kind, aul, lane))


# --- admission ---------------------------------------------------------------


def test_admission_examples():
    c = Cohort(1, 2, (1, 2, 3), velocity=20.0, sl=3, hl=5)
    assert admission_check(4, c).accepted
    assert admission_check(2, c) == (False, "level", None)
    assert admission_check(4, Cohort(1, 2, (1,), sl=4, hl=4)).accepted


def test_admission_full_from_n_max_table():
    policy = CohortPolicy()
    # 25 m/s falls in the (20, 30] step of the default table
    assert policy.n_max(25.0) == 12
    c = Cohort(1, 2, tuple(range(1, 13)), velocity=25.0)
    assert admission_check(4, c, policy).reason == "full"


def test_n_max_table_steps():
    policy = CohortPolicy()
    assert [policy.n_max(v) for v in (0, 10, 15, 20, 30, 31, 60)] == [24, 24, 18, 18, 12, 8, 8]
    with pytest.raises(ValueError):
        CohortPolicy(n_max_by_velocity=((10.0, 8), (float("inf"), 12)))


def test_homogeneous_policy_pins_level():
    c = new_cohort(1, 2, [1, 2], 20.0, CohortPolicy(homogeneous=True), aul=4)
    assert (c.sl, c.hl) == (4, 4)
    assert not admission_check(5, c).accepted


# --- LgJoin ------------------------------------------------------------------


def test_lg_join_becomes_tail(ca):
    c = Cohort(1, 2, (1, 2, 3, 4, 5), velocity=20.0)
    places = line(c.members)
    places[6] = (places[5][0] - 12.0, 2)
    tpd, req = signed_for(ca)
    d, joined = lg_join(c, Candidate(6, 4), req, JoinVerifier(ca), world(places))
    assert d == (True, None, 6)
    assert joined.n == 6 and joined.tail == 6
    assert joined.common_knowledge.n == 6


def test_lg_join_forged_rejected(ca):
    c = Cohort(1, 2, (1, 2, 3, 4, 5), velocity=20.0)
    places = line(c.members)
    places[6] = (places[5][0] - 12.0, 2)
    _, req = signed_for(ca)
    forged = SignedRequest(req.request, Pseudo(req.pseudo.pseudo_id, req.pseudo.cert_id, "0" * 16), req.signature)
    d, after = lg_join(c, Candidate(6, 4), forged, JoinVerifier(ca), world(places))
    assert d.reason == "auth"
    assert after is c


def test_lg_join_out_of_range_and_full(ca):
    c = Cohort(1, 2, (1, 2), velocity=20.0)
    places = line(c.members)
    places[6] = (places[2][0] - 45.0, 2)
    _, req = signed_for(ca)
    assert lg_join(c, Candidate(6, 4), req, JoinVerifier(ca), world(places))[0].reason == "range"
    full = Cohort(1, 2, tuple(range(1, 9)), velocity=35.0)
    places = line(full.members)
    places[60] = (places[8][0] - 10.0, 2)
    _, req = signed_for(ca)
    assert lg_join(full, Candidate(60, 4), req, JoinVerifier(ca), world(places))[0].reason == "full"


def test_lg_join_existing_member_is_a_bug(ca):
    c = Cohort(1, 2, (1, 2))
    _, req = signed_for(ca)
    with pytest.raises(ProtocolError):
        lg_join(c, Candidate(2, 4), req, JoinVerifier(ca), world(line(c.members)))


def test_one_pseudonym_per_attempt(ca):
    tpd = ca.issue_pseudos(ca.register("joiner"), 3)
    c = Cohort(1, 2, (1, 2), velocity=20.0)
    places = line(c.members)
    places[6] = (places[2][0] - 50.0, 2)  # out of range: every attempt is rejected
    v = JoinVerifier(ca)
    for expected_left in (2, 1, 0):
        d, _ = lg_join(c, Candidate(6, 4), sign_join(tpd, JoinRequest("lg", 4, 2)), v, world(places))
        assert not d.accepted
        assert len(tpd) == expected_left
    with pytest.raises(AuthUnavailable):
        sign_join(tpd, JoinRequest("lg", 4, 2))


# --- LtJoin ------------------------------------------------------------------


AULS = {vid: 5 for vid in range(1, 20)}


def test_lt_join_between_two_and_three(ca):
    c = Cohort(1, 2, (1, 2, 3, 4), velocity=25.0)
    places = line(c.members, spacing=20.0)
    places[9] = (places[2][0] - 10.0, 1)
    tpd, req = signed_for(ca, "lt", aul=5)
    d, joined = lt_join(c, Candidate(9, 5), 2, req, JoinVerifier(ca), world(places), AULS)
    assert d == (True, None, 3)
    assert joined.members == (1, 2, 9, 3, 4)
    assert joined.rank_of(3) == 4 and joined.rank_of(4) == 5


def test_lt_join_ahead_of_head(ca):
    c = Cohort(1, 2, (1, 2, 3), velocity=25.0)
    places = line(c.members, spacing=20.0)
    places[9] = (places[1][0] + 10.0, 3)
    _, req = signed_for(ca, "lt", aul=5)
    d, joined = lt_join(c, Candidate(9, 5), 0, req, JoinVerifier(ca), world(places), AULS)
    assert d.rank == 1
    assert joined.head == 9 and [joined.rank_of(v) for v in (1, 2, 3)] == [2, 3, 4]


def test_lt_join_gap_too_small(ca):
    # 4 m of bumper gap against a required 25 * 0.3 = 7.5 m
    c = Cohort(1, 2, (1, 2, 3), velocity=25.0)
    places = line(c.members, spacing=30.0)
    places[9] = (places[1][0] - 8.0, 1)
    _, req = signed_for(ca, "lt", aul=5)
    d, after = lt_join(c, Candidate(9, 5), 1, req, JoinVerifier(ca), world(places), AULS, vehicle_length=4.0)
    assert d.reason == "gap"
    assert after is c


def test_lt_join_needs_adjacent_lane(ca):
    c = Cohort(1, 3, (1, 2), velocity=25.0)
    places = line(c.members, lane=3, spacing=30.0)
    places[9] = (places[1][0] - 15.0, 1)
    _, req = signed_for(ca, "lt", aul=5)
    assert lt_join(c, Candidate(9, 5), 1, req, JoinVerifier(ca), world(places), AULS)[0].reason == "range"


# --- split / leave -------------------------------------------------------------


def test_split_examples():
    a, b = split(Cohort(1, 2, tuple(range(1, 8))), 3, 2)
    assert (a.n, b.n) == (3, 4)
    assert [m.rank for m in b.memberships()] == [1, 2, 3, 4]
    assert b.head == 4
    x, y = split(Cohort(1, 2, (1, 2)), 1, 2)
    assert (x.members, y.members) == ((1,), (2,))


def test_split_exhaustive():
    for n in range(2, 13):
        c = Cohort(1, 2, tuple(range(100, 100 + n)))
        for k in range(1, n):
            a, b = split(c, k, 2)
            assert (a.n, b.n) == (k, n - k)
            for part in (a, b):
                assert [m.rank for m in part.memberships()] == list(range(1, part.n + 1))
            assert a.members + b.members == c.members


def test_split_out_of_range_is_a_bug():
    with pytest.raises(ProtocolError):
        split(Cohort(1, 2, (1, 2, 3)), 3, 2)
    with pytest.raises(ProtocolError):
        split(Cohort(1, 2, (1,)), 0, 2)


def test_leave_middle_splits_ends_renumber():
    c = Cohort(1, 2, tuple(range(1, 10)))
    front, rear = leave(c, 4, 2)
    assert (front.n, rear.n) == (3, 5)
    assert leave(c, 1, 2)[0].members == tuple(range(2, 10))
    assert leave(c, 9, 2)[0].n == 8
    assert leave(Cohort(1, 2, (5,)), 5, 2) == []


# --- fuzz ---------------------------------------------------------------------


def test_rank_integrity_fuzz():
    start = time.perf_counter()
    stats = fuzz_cohorts(seed=4, ops=10_000)
    assert stats.attempted == 10_000
    assert all(stats.accepted.values()), stats.accepted
    assert stats.max_cohorts <= 8
    assert time.perf_counter() - start < 30.0


# --- dissemination -------------------------------------------------------------


@pytest.mark.parametrize("n", range(2, 13))
def test_lossless_tailward_latency_is_n_minus_one(n):
    rep = disseminate(Cohort(1, 2, tuple(range(1, n + 1))), 1, b"new v", TAILWARD)
    assert rep.complete(TAILWARD)
    assert rep.max_latency == n - 1
    assert rep.flags == []


def test_ten_member_example():
    rep = disseminate(Cohort(1, 2, tuple(range(1, 11))), 1, b"new v", TAILWARD)
    assert set(rep.accept_frame) == set(range(2, 11))
    assert rep.latency_frames[10] <= 9


def test_singleton_report_is_empty():
    rep = disseminate(Cohort(1, 2, (1,)), 1, b"x")
    assert rep.accept_frame == {}
    assert rep.complete(BOTH)


def test_single_link_loss_exhaustive_matches_oracle():
    n = 6
    for origin in range(1, n + 1):
        for direction in (TAILWARD, HEADWARD, BOTH):
            links = [(s, t) for s in range(1, n + 1) for t in range(s - 2, s + 3) if t != s and 1 <= t <= n]
            for link in links:
                rep = disseminate(Cohort(1, 2, tuple(range(1, n + 1))), origin, b"p", direction, lost=[link])
                assert rep.accept_frame == hop_oracle(n, origin, direction, {link}), (origin, direction, link)


def test_lost_direct_copy_to_rank_three():
    # with relays only after acceptance, rank 3 holds one copy (rank 2's
    # relay) and rank 4 can never collect a second one; the loss is flagged
    n = 5
    rep = disseminate(Cohort(1, 2, tuple(range(1, n + 1))), 1, b"p", TAILWARD, lost=[(1, 3)])
    assert rep.accept_frame == hop_oracle(n, 1, TAILWARD, {(1, 3)})
    assert set(rep.accept_frame) == {2}
    assert {(r, f.kind) for r, f in rep.flags} >= {(3, "suppression_or_loss")}


@given(n=st.integers(2, 12), origin=st.integers(1, 12), direction=st.sampled_from([TAILWARD, HEADWARD, BOTH]))
def test_lossless_dissemination_completes(n, origin, direction):
    origin = min(origin, n)
    rep = disseminate(Cohort(1, 2, tuple(range(1, n + 1))), origin, b"p", direction)
    assert rep.complete(direction)
    assert rep.accept_frame == hop_oracle(n, origin, direction)
    assert rep.max_latency <= n - 1


def test_random_losses_are_seeded():
    c = Cohort(1, 2, tuple(range(1, 11)))
    a = disseminate(c, 1, b"p", TAILWARD, loss_p=0.2, rng=random.Random(3))
    b = disseminate(c, 1, b"p", TAILWARD, loss_p=0.2, rng=random.Random(3))
    assert a.accept_frame == b.accept_frame
