"""Lossy short-range radio channel."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple

from ..cells import RangeConfig, WorldSnapshot


@dataclass(frozen=True)
class LossModel:
    """Independent per-(sender, receiver) Bernoulli losses.

    One ``rng.random()`` draw is consumed per in-range pair, in the order
    transmissions are given and, within one transmission, in receiver order.
    Out-of-range pairs consume no draw.
    """

    p: float = 0.0
    overrides: Mapping[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        for q in (self.p, *self.overrides.values()):
            if not 0.0 <= q <= 1.0:
                raise ValueError(f"loss probability {q} outside [0, 1]")

    def prob(self, sender: int, receiver: int) -> float:
        return self.overrides.get((sender, receiver), self.p)

    def with_override(self, sender: int, receiver: int, p: float) -> "LossModel":
        o = dict(self.overrides)
        o[(sender, receiver)] = p
        return LossModel(self.p, o)


class Emission(NamedTuple):
    source: int
    receivers: tuple[int, ...]
    payload: object = None
    kind: str = "n2n"


class Outcome(NamedTuple):
    delivered: list[tuple[int, int, object]]  # (source, receiver, payload)
    lost: list[tuple[int, int]]
    out_of_range: list[tuple[int, int]]


def channel_deliver(
    emissions: Iterable[Emission],
    snapshot: WorldSnapshot,
    loss: LossModel,
    rng: random.Random,
    ranges: RangeConfig = RangeConfig(),
) -> Outcome:
    delivered, lost, oor = [], [], []
    for e in emissions:
        limit = ranges.range_for(e.kind)
        for rx in e.receivers:
            if snapshot.distance(e.source, rx) > limit:
                oor.append((e.source, rx))
                continue
            if rng.random() < loss.prob(e.source, rx):
                lost.append((e.source, rx))
            else:
                delivered.append((e.source, rx, e.payload))
    return Outcome(delivered, lost, oor)
