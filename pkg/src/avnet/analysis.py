"""Closed-form side models: LDM drift, PKI verification load, crowdsourcing and stealth mode."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

from .cohort import Cohort

STEALTH_EXCEPTIONS = frozenset({"ecall", "crowdsource", "exclusion_report"})
V2X_CLASSES = ("ecall", "crowdsource", "exclusion_report", "infotainment", "other")


@dataclass(frozen=True)
class BeaconModel:
    velocity: float
    beacon_frequency: float
    lost_count: int = 1

    def __post_init__(self):
        if self.beacon_frequency <= 0:
            raise ValueError("beacon_frequency must be > 0")
        if self.lost_count < 0 or self.velocity < 0:
            raise ValueError("velocity and lost_count must be >= 0")


def ldm_discrepancy(model: BeaconModel) -> float:
    """Position gap between two observers' latest records when one missed beacons."""
    return model.lost_count * model.velocity / model.beacon_frequency


class PkiLoad(NamedTuple):
    utilization: float
    thrashing: bool


def pki_load(vehicles: float, beacon_frequency: float, verify_time: float, threshold: float = 0.95) -> PkiLoad:
    """Fraction of one verifier's time spent checking signed beacons."""
    if min(vehicles, beacon_frequency, verify_time) < 0:
        raise ValueError("inputs must be >= 0")
    u = vehicles * beacon_frequency * verify_time
    return PkiLoad(u, u >= threshold)


@dataclass(frozen=True)
class CrowdsourceConfig:
    mode: str = "deterministic"
    p: float = 0.1

    def __post_init__(self):
        if self.mode not in ("deterministic", "probabilistic"):
            raise ValueError(f"unknown crowdsourcing mode {self.mode!r}")
        if self.mode == "probabilistic" and not 0 < self.p <= 1:
            raise ValueError("p must be in (0, 1]")


class CrowdMessage(NamedTuple):
    """V2X crowdsourcing message: cohort length and a position, signed by an NSC pseudonym."""

    cohort_length: int
    position: float
    pseudo: str

    def to_record(self) -> dict:
        return {
            "class": "crowdsource",
            "cohort_length": self.cohort_length,
            "position": round(self.position, 3),
            "pseudo": self.pseudo,
        }


def crowdsource_round(
    cohort: Cohort,
    round_no: int,
    config: CrowdsourceConfig = CrowdsourceConfig(),
    rng: random.Random | None = None,
) -> list[int]:
    """Ranks that broadcast this round.

    Deterministic mode rotates one broadcaster through the ranks; the
    probabilistic mode lets each member speak with probability ``p``.
    """
    n = cohort.n
    if config.mode == "deterministic":
        return [round_no % n + 1]
    if rng is None:
        raise ValueError("probabilistic mode needs a seeded rng")
    return [r for r in range(1, n + 1) if rng.random() < config.p]


def stealth_filter(messages: Iterable, stealth: bool, classify=None) -> list:
    """Drop outbound V2X traffic in stealth mode except e-Call, crowdsourcing and exclusion reports.

    ``classify`` maps a message to its class; by default a message is its
    own class string or a mapping with a ``"class"`` key.
    """
    msgs = list(messages)
    if not stealth:
        return msgs
    classify = classify or _class_of
    return [m for m in msgs if classify(m) in STEALTH_EXCEPTIONS]


def _class_of(m) -> str:
    if isinstance(m, str):
        return m
    if isinstance(m, dict):
        return m["class"]
    return getattr(m, "msg_class")


def binomial_mean(n: int, p: float) -> float:
    return n * p


def mean_broadcasters(cohort: Cohort, rounds: int, config: CrowdsourceConfig, seed: int = 0) -> float:
    rng = random.Random(seed)
    total = sum(len(crowdsource_round(cohort, k, config, rng)) for k in range(rounds))
    return total / rounds


def tabulate(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    widths = [max(len(c), *(len(str(r[c])) for r in rows)) for c in cols]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(str(r[c]).ljust(w) for c, w in zip(cols, widths)) for r in rows]
    return "\n".join(lines)
