"""Attack injection and the attack corpus runner."""

from __future__ import annotations

import copy

from ..security import AttackSpec
from .engine import run_scenario
from .scenario import Scenario, from_dict

CORPUS_KINDS = ("masquerade", "sybil", "forge", "suppress", "false_inject")


def inject_attack(scenario: Scenario, spec: AttackSpec) -> Scenario:
    """A re-validated copy of ``scenario`` with one more attack scripted."""
    data = copy.deepcopy(scenario.source)
    raw = {k: getattr(spec, k) for k in ("kind", "attacker", "target", "start_frame", "end_frame", "override_adversary_model")}
    data.setdefault("attacks", []).append(raw)
    data["name"] = f"{scenario.name}+{spec.kind}"
    return from_dict(data)


def clear_attacks(scenario: Scenario) -> Scenario:
    data = copy.deepcopy(scenario.source)
    data["attacks"] = []
    return from_dict(data)


def attack_suite(base: Scenario, kinds=CORPUS_KINDS, *, attacker: int | None = None, seed: int | None = None) -> list[dict]:
    """Run each attack kind against ``base`` plus the attack-free twin.

    The attacker defaults to rank 4 of the first scripted cohort.
    """
    twin = clear_attacks(base)
    if attacker is None:
        members = base.cohorts[0].members
        attacker = members[min(3, len(members) - 1)]
    rows = []
    clean = run_scenario(twin, seed=seed).metrics
    rows.append(_row("none", clean))
    for kind in kinds:
        spec = AttackSpec(kind, attacker, start_frame=5)
        m = run_scenario(inject_attack(twin, spec), seed=seed).metrics
        rows.append(_row(kind, m))
    return rows


def _row(kind: str, m: dict) -> dict:
    return {
        "attack": kind,
        "events": m["attack_events"],
        "detected": m["attack_detected"],
        "detection_rate": round(m["detection_rate"], 4),
        "forged_accepted": m["forged_accepted"],
        "false_positives": m["false_positives"],
        "stops": m["stops"],
    }
