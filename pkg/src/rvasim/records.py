"""Per-trial result records shared by the procedure and the batch harness."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


class Phase(str, enum.Enum):
    CALIBRATION = "Calibration"
    INITIAL_POSITIONING = "InitialPositioning"
    TARGET_ALIGNMENT = "TargetAlignment"
    INSERTION = "Insertion"
    RESET = "Reset"
    DONE = "Done"
    ABORTED = "Aborted"


# forward edges plus the two retry self-loops; Aborted is reachable from any
# non-terminal phase and is checked separately
LEGAL_TRANSITIONS = {
    Phase.CALIBRATION: {Phase.INITIAL_POSITIONING},
    Phase.INITIAL_POSITIONING: {Phase.INITIAL_POSITIONING, Phase.TARGET_ALIGNMENT},
    Phase.TARGET_ALIGNMENT: {Phase.INSERTION},
    Phase.INSERTION: {Phase.INSERTION, Phase.RESET},
    Phase.RESET: {Phase.DONE},
    Phase.DONE: set(),
    Phase.ABORTED: set(),
}


def is_legal_trace(trace, first: Phase = Phase.CALIBRATION) -> bool:
    """True if ``trace`` (a sequence of (phase, tick)) walks the legal graph
    from ``first`` to a terminal phase with non-decreasing ticks."""
    if not trace:
        return False
    phases = [Phase(p) for p, _ in trace]
    ticks = [t for _, t in trace]
    if phases[0] is not first or phases[-1] not in (Phase.DONE, Phase.ABORTED):
        return False
    if any(b < a for a, b in zip(ticks, ticks[1:])):
        return False
    for a, b in zip(phases, phases[1:]):
        if a in (Phase.DONE, Phase.ABORTED):
            return False
        if b is Phase.ABORTED:
            continue
        if b not in LEGAL_TRANSITIONS[a]:
            return False
    return True


class Outcome(str, enum.Enum):
    SUCCESS = "Success"
    MISS = "Miss"
    TRANSFIXED = "Transfixed"
    ABORTED = "Aborted"


@dataclass(frozen=True)
class AttemptLog:
    """One needle attempt as written to the trial log."""

    outcome: Outcome
    abort_reason: str | None
    phase_trace: tuple
    max_force_n: float
    force_trace: tuple = ()
    events: tuple = ()
    frames: tuple | None = None
    needle_detected_px: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "outcome", Outcome(self.outcome))
        object.__setattr__(self, "phase_trace", tuple((Phase(p).value, int(t)) for p, t in self.phase_trace))
        object.__setattr__(self, "force_trace", tuple(float(f) for f in self.force_trace))
        object.__setattr__(self, "events", tuple(tuple(e) for e in self.events))
        if self.frames is not None:
            object.__setattr__(self, "frames", tuple(self.frames))
        if self.needle_detected_px is not None:
            object.__setattr__(self, "needle_detected_px", tuple(float(v) for v in self.needle_detected_px))
        if (self.outcome is Outcome.ABORTED) != (self.abort_reason is not None):
            raise ValueError("abort_reason is set exactly when the outcome is Aborted")


@dataclass(frozen=True)
class TrialRecord:
    """Final result of one subject: up to two attempts on the same vessel.

    ``outcome``, ``max_force_n``, ``phase_trace`` and ``frames`` describe
    the last attempt; every attempt is kept in ``attempts``.
    """

    trial_id: int
    scenario_seed: int
    vessel_diameter_mm: float
    vessel_depth_mm: float
    attempts: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "attempts", tuple(self.attempts))
        if not self.attempts:
            raise ValueError("a trial needs at least one attempt")

    @property
    def last(self) -> AttemptLog:
        return self.attempts[-1]

    @property
    def outcome(self) -> Outcome:
        return self.last.outcome

    @property
    def abort_reason(self) -> str | None:
        return self.last.abort_reason

    @property
    def blood_return(self) -> bool:
        return self.outcome is Outcome.SUCCESS

    @property
    def first_attempt_success(self) -> bool:
        return self.attempts[0].outcome is Outcome.SUCCESS

    @property
    def attempts_used(self) -> int:
        return len(self.attempts)

    @property
    def phase_trace(self) -> tuple:
        return self.last.phase_trace

    @property
    def max_force_n(self) -> float:
        return max(a.max_force_n for a in self.attempts)

    @property
    def frames(self) -> tuple | None:
        return self.last.frames

    def without_id(self) -> TrialRecord:
        return TrialRecord(0, self.scenario_seed, self.vessel_diameter_mm, self.vessel_depth_mm, self.attempts)
