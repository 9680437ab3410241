"""Tamper-proof devices, PKI-free pseudonym admission, exclusion predicates and Stop.

Cryptography is abstract: a pseudonym is valid when its tag matches the
issuing authority's keyed digest, and verification costs a fixed delay.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .errors import AuthUnavailable, CompartmentViolation, ConfigurationError
from .kinematics import KinematicState, advance_state
from .mac import MacFrame, from_ns, to_ns

SC = "SC"
NSC = "NSC"

DEFAULT_POOL_SIZE = 5000
DEFAULT_VERIFY_DELAY = 0.002
DEFAULT_STOP_DECEL = 3.0
SECONDS_PER_DAY = 86_400.0

ATTACK_KINDS = ("masquerade", "sybil", "forge", "suppress", "false_inject", "distant")


def digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(repr(p).encode())
        h.update(b"\x00")
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class Pseudo:
    pseudo_id: str
    cert_id: str  # pseudonym certificate
    tag: str


@dataclass(frozen=True)
class ViolationEntry:
    time: float
    predicate: str
    evidence: str
    audit_only: bool = False


class PseudoPool:
    """Reserved block of pseudonym serials; each pseudonym is minted when taken."""

    def __init__(self, serials: range, mint):
        self._serials = serials
        self._next = 0
        self._mint = mint

    def __len__(self) -> int:
        return len(self._serials) - self._next

    def popleft(self) -> Pseudo:
        if not len(self):
            raise IndexError("pop from an empty pool")
        serial = self._serials[self._next]
        self._next += 1
        return self._mint(serial)

    def clear(self) -> None:
        self._next = len(self._serials)

    def __iter__(self):
        return (self._mint(s) for s in self._serials[self._next :])


@dataclass
class TamperProofDevice:
    """One compartment's TPD: pseudonym pool plus append-only logs."""

    compartment: str
    reversible_cert: str
    pool: PseudoPool | deque = field(default_factory=deque)
    violation_log: list[ViolationEntry] = field(default_factory=list)
    usage_log: dict[str, int] = field(default_factory=dict)
    predicates: "PredicateEngine | None" = None

    def __len__(self) -> int:
        return len(self.pool)

    def take_pseudo(self, day: int, source: str = SC) -> Pseudo:
        self._guard(source)
        if not self.pool:
            raise AuthUnavailable(f"{self.compartment}-TPD pseudonym pool exhausted")
        p = self.pool.popleft()
        self.usage_log[p.pseudo_id] = day
        return p

    def record(self, entry: ViolationEntry, source: str = SC) -> None:
        self._guard(source)
        self.violation_log.append(entry)

    def _guard(self, source: str) -> None:
        if self.compartment == SC and source != SC:
            raise CompartmentViolation(f"{source} event attempted to write SC-TPD state")

    @property
    def violations(self) -> list[ViolationEntry]:
        return [v for v in self.violation_log if not v.audit_only]


class CertificationAuthority:
    """Registers vehicles once and hands out pseudonym pools; never contacted on the move."""

    def __init__(self, secret: str = "avn-ca"):
        self._secret = secret
        self._serial = 0
        self._certs: dict[str, object] = {}

    def _tag(self, pseudo_id: str, cert_id: str) -> str:
        return digest(self._secret, pseudo_id, cert_id)

    def register(self, vehicle) -> str:
        cert = "cert-" + digest(self._secret, "reg", len(self._certs))
        self._certs[cert] = vehicle
        return cert

    def lookup(self, reversible_cert: str):
        """Authority-side reversal of a certificate (accountability)."""
        return self._certs.get(reversible_cert)

    def issue_pseudos(self, reversible_cert: str, count: int, compartment: str = SC) -> TamperProofDevice:
        if count < 0:
            raise ValueError("count must be >= 0")
        pool = PseudoPool(range(self._serial + 1, self._serial + 1 + count), self._mint)
        self._serial += count
        return TamperProofDevice(compartment=compartment, reversible_cert=reversible_cert, pool=pool)

    def _mint(self, serial: int) -> Pseudo:
        pid = "ps-" + digest(self._secret, "pseudo", serial)
        pcert = "pc-" + digest(self._secret, "pcert", serial)
        return Pseudo(pid, pcert, self._tag(pid, pcert))

    def valid(self, pseudo: Pseudo) -> bool:
        return pseudo.tag == self._tag(pseudo.pseudo_id, pseudo.cert_id)


def issue_pseudos(count: int, ca: CertificationAuthority | None = None, vehicle=None) -> TamperProofDevice:
    ca = ca or CertificationAuthority()
    return ca.issue_pseudos(ca.register(vehicle), count)


@dataclass(frozen=True)
class JoinRequest:
    kind: str  # "lg" | "lt"
    aul: int
    lane: int
    insert_after: int | None = None  # rank k for LtJoin
    time: float = 0.0


@dataclass(frozen=True)
class SignedRequest:
    request: JoinRequest
    pseudo: Pseudo
    signature: str

    @property
    def well_formed(self) -> bool:
        return self.signature == digest(self.pseudo.pseudo_id, self.request)


def sign_join(tpd: TamperProofDevice, request: JoinRequest, day: int | None = None) -> SignedRequest:
    """Spend the next unused SC pseudonym on one join attempt."""
    if day is None:
        day = int(request.time // SECONDS_PER_DAY)
    p = tpd.take_pseudo(day)
    return SignedRequest(request, p, digest(p.pseudo_id, request))


class Verification(NamedTuple):
    valid: bool
    reason: str | None
    decided_at: float
    replay: bool = False


class JoinVerifier:
    """Verifier side of admission. Remembers which physical source spent each pseudonym."""

    def __init__(self, ca: CertificationAuthority, verify_delay: float = DEFAULT_VERIFY_DELAY):
        self.ca = ca
        self.verify_delay = verify_delay
        self.spent: dict[str, object] = {}

    def verify_join(self, signed: SignedRequest, now: float = 0.0, source=None) -> Verification:
        done = now + self.verify_delay
        if not signed.well_formed or not self.ca.valid(signed.pseudo):
            return Verification(False, "forged", done)
        pid = signed.pseudo.pseudo_id
        if pid in self.spent and self.spent[pid] != source:
            return Verification(False, "replay", done, replay=True)
        self.spent[pid] = source
        return Verification(True, None, done)


# --- exclusion predicates ---------------------------------------------------


class SendEvent(NamedTuple):
    channel: str
    time: float
    rank: int  # rank in force for the frame containing ``time``


class SensorEvent(NamedTuple):
    frame: int
    neighbor: object  # opaque sensor track id
    transmitted: bool
    channel_active: bool


class Violation(NamedTuple):
    predicate: str
    time: float
    evidence: str
    audit_only: bool = False


class PredicateEngine:
    """Table of SC-TPD predicates evaluated on the vehicle's own activity.

    P1 minimum separation between two sends on one channel.
    P2 sends only inside the slot of the rank in force.
    P3 a sensed cell member that stays N2N-silent while the channel is busy
       (audit flag only; the silent party cannot be stopped from here).
    """

    def __init__(self, frame: MacFrame, min_separation: float | None = None, silence_frames: int = 3):
        self.frame = frame
        self.min_sep_ns = to_ns(frame.duration if min_separation is None else min_separation)
        self.silence_frames = silence_frames
        self.last_send: dict[str, int] = {}
        self.silence: dict[object, int] = {}
        self.checks = [self._p1, self._p2, self._p3]

    def evaluate(self, event) -> list[Violation]:
        out = []
        for check in self.checks:
            v = check(event)
            if v is not None:
                out.append(v)
        if isinstance(event, SendEvent):
            self.last_send[event.channel] = to_ns(event.time)
        return out

    def _p1(self, ev):
        if not isinstance(ev, SendEvent):
            return None
        prev = self.last_send.get(ev.channel)
        t = to_ns(ev.time)
        if prev is not None and t - prev < self.min_sep_ns:
            return Violation("P1", ev.time, digest("P1", ev.channel, prev, t))
        return None

    def _p2(self, ev):
        if not isinstance(ev, SendEvent):
            return None
        _, slot, _ = self.frame.locate_ns(to_ns(ev.time), ev.channel)
        if slot + 1 != ev.rank:
            return Violation("P2", ev.time, digest("P2", ev.channel, ev.rank, to_ns(ev.time)))
        return None

    def _p3(self, ev):
        if not isinstance(ev, SensorEvent):
            return None
        if ev.transmitted or not ev.channel_active:
            self.silence.pop(ev.neighbor, None)
            return None
        n = self.silence.get(ev.neighbor, 0) + 1
        self.silence[ev.neighbor] = n
        if n == self.silence_frames:
            t = from_ns(self.frame.slot_start_ns(ev.frame, 1))
            return Violation("P3", t, digest("P3", ev.neighbor, ev.frame), audit_only=True)
        return None


def evaluate_predicates(tpd: TamperProofDevice, event) -> list[Violation]:
    """Run ``tpd``'s predicate table on one local event and log any violation."""
    if tpd.predicates is None:
        raise ConfigurationError("TPD has no predicate engine")
    found = tpd.predicates.evaluate(event)
    for v in found:
        tpd.record(ViolationEntry(v.time, v.predicate, v.evidence, v.audit_only))
    return found


# --- physical exclusion -----------------------------------------------------


@dataclass(frozen=True)
class ExclusionReport:
    halt_position: float
    halt_lane: int
    reversible_cert: str
    violations: tuple[ViolationEntry, ...]
    nsc_pseudo: str
    recipient: str = "authority"

    def to_record(self) -> dict:
        return {
            "class": "exclusion_report",
            "halt_position": round(self.halt_position, 6),
            "halt_lane": self.halt_lane,
            "reversible_cert": self.reversible_cert,
            "violations": [[round(v.time, 9), v.predicate, v.evidence] for v in self.violations],
            "pseudo": self.nsc_pseudo,
            "recipient": self.recipient,
        }


class StopPlan(NamedTuple):
    trajectory: list[KinematicState]
    halt_time: float
    halt_distance: float
    report: ExclusionReport


def execute_stop(
    state: KinematicState,
    sc_tpd: TamperProofDevice,
    nsc_tpd: TamperProofDevice,
    *,
    decel: float = DEFAULT_STOP_DECEL,
    dt: float = 0.1,
    day: int = 0,
    halt_lane: int | None = None,
) -> StopPlan:
    """Decelerate to a halt and build the one exclusion report for this offender."""
    if not sc_tpd.violations:
        raise ConfigurationError("Stop requires a recorded violation")
    halt_time = state.velocity / decel
    traj = [state]
    s = state
    while s.velocity > 0:
        s = advance_state(s, -decel, dt)
        traj.append(s)
    pseudo = nsc_tpd.take_pseudo(day, source=NSC) if len(nsc_tpd) else None
    report = ExclusionReport(
        halt_position=s.position,
        halt_lane=state.lane if halt_lane is None else halt_lane,
        reversible_cert=sc_tpd.reversible_cert,
        violations=tuple(sc_tpd.violation_log),
        nsc_pseudo=pseudo.pseudo_id if pseudo else "",
    )
    return StopPlan(traj, halt_time, s.position - state.position, report)


# --- attacks -----------------------------------------------------------------


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    attacker: int
    target: int | None = None  # victim rank, extra rank, or relay rank depending on kind
    start_frame: int = 0
    end_frame: int | None = None
    override_adversary_model: bool = False

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigurationError(f"unknown attack kind {self.kind!r}")

    def active(self, frame: int) -> bool:
        return frame >= self.start_frame and (self.end_frame is None or frame < self.end_frame)


def adversary_model_ok(attacker_ranks: Iterable[int]) -> bool:
    """At most one attacker in any window of three consecutive ranks."""
    ranks = sorted(set(attacker_ranks))
    return all(b - a >= 3 for a, b in zip(ranks, ranks[1:]))

