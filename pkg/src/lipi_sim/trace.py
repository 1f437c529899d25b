"""Round results and the record of what was broadcast during a round."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any

from .stnet import PhaseRecord


class RoundStatus(enum.Enum):
    OK = "ok"
    INITIATOR_FAILED = "initiator_failed"
    RECOVERY_FAILED = "recovery_failed"
    INCOMPLETE = "incomplete"
    OVERFLOW = "overflow"
    RECONSTRUCTION_FAILED = "reconstruction_failed"


class RoundPhase(enum.Enum):
    SYNC_FLOOD = "SYNC_FLOOD"
    SHARE_1 = "SHARE_1"
    MISSING_FLOOD = "MISSING_FLOOD"
    SHARE_2_RECOVERY = "SHARE_2_RECOVERY"
    DONE = "DONE"


LEGAL_PATHS = (
    (RoundPhase.SYNC_FLOOD, RoundPhase.SHARE_1, RoundPhase.DONE),
    (RoundPhase.SYNC_FLOOD, RoundPhase.SHARE_1, RoundPhase.MISSING_FLOOD,
     RoundPhase.SHARE_2_RECOVERY, RoundPhase.DONE),
)


@dataclass
class RoundTrace:
    """Everything put on the air in a round, and who heard what.

    Only transmitted payloads go in here; private state lives on the result.
    """

    protocol: str
    seq_no: int = 0
    broadcasts: dict[str, dict[int, Any]] = field(default_factory=dict)
    observed: dict[str, dict[int, tuple[int, ...]]] = field(default_factory=dict)

    def record(self, phase: str, payloads: dict[int, Any], delivery: dict[int, dict] | None = None) -> None:
        self.broadcasts[phase] = dict(sorted(payloads.items()))
        if delivery is not None:
            self.observed[phase] = {v: tuple(sorted(got)) for v, got in sorted(delivery.items())}

    def payloads(self, phase: str) -> dict[int, Any]:
        return self.broadcasts.get(phase, {})

    def all_payload_ints(self):
        """Every integer appearing in any broadcast payload (flattened)."""
        def walk(x):
            if isinstance(x, bool):
                return
            if isinstance(x, int):
                yield x
            elif isinstance(x, dict):
                for v in x.values():
                    yield from walk(v)
            elif isinstance(x, (list, tuple, set, frozenset)):
                for v in x:
                    yield from walk(v)
        for per_sender in self.broadcasts.values():
            yield from walk(per_sender)


@dataclass
class AggregateResult:
    protocol: str
    seq_no: int
    status: RoundStatus
    aggregate: dict[int, Any]
    survivors: frozenset
    included: frozenset  # owners whose secrets the aggregate covers
    recovery_used: bool
    latency: dict[int, int]
    radio_on: dict[int, int]
    phases: list[PhaseRecord]
    initiator: int
    trace: RoundTrace
    path: tuple[RoundPhase, ...] = ()
    setup_phases: list[PhaseRecord] = field(default_factory=list)
    setup_radio_on: dict[int, int] = field(default_factory=dict)
    private: dict[int, dict] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is RoundStatus.OK

    @property
    def comm_rounds(self) -> int:
        """All-to-all sharing instances in the round proper (key setup excluded)."""
        setup = {(p.name, p.start) for p in self.setup_phases}
        return sum(1 for p in self.phases if p.kind == "minicast" and (p.name, p.start) not in setup)

    @property
    def setup_duration(self) -> int:
        return sum(p.end - p.start for p in self.setup_phases)

    def round_latency(self) -> dict[int, int]:
        """Per-node latency with key setup taken out."""
        shift = self.setup_duration
        return {v: t - shift for v, t in self.latency.items()}

    def round_radio_on(self) -> dict[int, int]:
        return {v: r - self.setup_radio_on.get(v, 0) for v, r in self.radio_on.items()}

    @property
    def duration(self) -> int:
        return self.phases[-1].end if self.phases else 0

    @property
    def value(self):
        """The aggregate all survivors agree on; None if they disagree or none exists."""
        vals = list(self.aggregate.values())
        if not vals or any(v != vals[0] for v in vals[1:]):
            return None
        return vals[0]
