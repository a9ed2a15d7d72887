"""Deterministic discrete-event engine.

A scenario is a script: fob definitions, one receiver policy, an
optional attacker, and a time-ordered list of events (victim presses,
attacker phases, learn-mode entry, clock markers).  Running it produces
a trace that records every emission, delivery, receiver action,
attacker action and door change.  Identical scenarios produce
bit-identical traces.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from enum import Enum

from . import attacks
from .attacks import (
    CaptureObserved,
    PhaseTrigger,
    ScheduleReplay,
    SetJamming,
    STRATEGY_KINDS,
)
from .channel import ATTACKER, VICTIM, ChannelState, subscribe, set_jamming, transmit
from .codebook import Instruction, derive_key, master_from_seed
from .fob import FobState, press
from .receiver import (
    ActionKind,
    Door,
    ReceiverPolicy,
    ReceiverState,
    enter_learn_mode,
    new_receiver_state,
    receive,
    register_fob,
)

logger = logging.getLogger(__name__)


class ScenarioError(Exception):
    """Scenario failed validation; ``problems`` lists every offender."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class FobDef:
    serial: int
    initial_counter: int = 0
    key: bytes | None = None            # default: derived from the scenario seed
    clock_skew_ms: int = 0
    emit_timestamps: bool = False
    learned: bool = True                # receiver knows this fob at start
    receiver_counter: int | None = None  # default: same as initial_counter


@dataclass(frozen=True)
class VictimPress:
    fob_serial: int
    button: Instruction
    out_of_range: bool = False
    fob_in_attacker_range: bool = True


@dataclass(frozen=True)
class AttackerPhase:
    name: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class LearnModeEntry:
    pass


@dataclass(frozen=True)
class AdvanceClock:
    pass


@dataclass(frozen=True)
class ScenarioEvent:
    at: int
    action: object


@dataclass(frozen=True)
class AttackerDef:
    kind: str
    jam_first: bool = True
    signals_to_capture: int = 2


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    fobs: tuple[FobDef, ...]
    policy: ReceiverPolicy
    attacker: AttackerDef | None = None
    events: tuple[ScenarioEvent, ...] = ()


class Goal(str, Enum):
    UNLOCK_WITHOUT_AUTHORIZATION = "UnlockWithoutAuthorization"
    VICTIM_UNAFFECTED = "VictimUnaffected"
    RELOCKED_AFTER = "ReLockedAfter"


@dataclass(frozen=True)
class TraceRecord:
    at: int
    kind: str
    fields: tuple[tuple[str, object], ...]

    def get(self, name: str, default=None):
        for key, value in self.fields:
            if key == name:
                return value
        return default

    def render(self) -> str:
        parts = ["t=%d" % self.at, "ev=%s" % self.kind]
        parts.extend("%s=%s" % (key, _render_value(v)) for key, v in self.fields)
        return " ".join(parts)


def _render_value(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bytes):
        return value.hex()
    return str(value)


class Trace:
    def __init__(self) -> None:
        self.records: list[TraceRecord] = []

    def add(self, at: int, kind: str, **fields) -> TraceRecord:
        record = TraceRecord(at=at, kind=kind, fields=tuple(fields.items()))
        self.records.append(record)
        return record

    def render(self) -> str:
        return "".join(record.render() + "\n" for record in self.records)

    def __iter__(self):
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class _AttackerReplay:
    capture_index: int


def validate_scenario(scenario: Scenario) -> None:
    problems = []
    serials = set()
    for fob in scenario.fobs:
        if fob.serial in serials:
            problems.append("duplicate fob serial %d" % fob.serial)
        serials.add(fob.serial)
    previous = None
    for i, event in enumerate(scenario.events):
        if event.at < 0:
            problems.append("event %d: negative time %d" % (i, event.at))
        if previous is not None and event.at < previous:
            problems.append(
                "event %d: time %d before previous event at %d"
                % (i, event.at, previous)
            )
        previous = event.at
        action = event.action
        if isinstance(action, VictimPress) and action.fob_serial not in serials:
            problems.append("event %d: unknown fob serial %d" % (i, action.fob_serial))
        if isinstance(action, AttackerPhase) and scenario.attacker is None:
            problems.append("event %d: attacker phase without an attacker" % i)
    if problems:
        raise ScenarioError(problems)


class Engine:
    """Single-threaded event loop over one scenario."""

    def __init__(self, scenario: Scenario):
        validate_scenario(scenario)
        self.scenario = scenario
        master = master_from_seed(scenario.seed)
        self.fobs: dict[int, FobState] = {}
        self.receiver: ReceiverState = new_receiver_state(scenario.policy, master)
        self.policy: ReceiverPolicy = scenario.policy
        for fob_def in scenario.fobs:
            key = fob_def.key or derive_key(master, fob_def.serial)
            self.fobs[fob_def.serial] = FobState(
                serial=fob_def.serial,
                key=key,
                counter=fob_def.initial_counter,
                clock_skew_ms=fob_def.clock_skew_ms,
                emit_timestamps=fob_def.emit_timestamps,
            )
            if fob_def.learned:
                stored = (
                    fob_def.receiver_counter
                    if fob_def.receiver_counter is not None
                    else fob_def.initial_counter
                )
                register_fob(self.receiver, fob_def.serial, key, stored)
        self.channel = ChannelState()
        self.strategy = None
        self.captures = None
        if scenario.attacker is not None:
            self.captures = subscribe(self.channel, ATTACKER)
            self.strategy = _build_strategy(scenario.attacker)
        self.trace = Trace()
        self._queue: list[tuple[int, int, object]] = []
        self._seq = 0
        self._door_seen = self.receiver.door

    def _push(self, at: int, action: object) -> None:
        heapq.heappush(self._queue, (at, self._seq, action))
        self._seq += 1

    def run(self) -> Trace:
        logger.debug(
            "running scenario %s (%d events)",
            self.scenario.name,
            len(self.scenario.events),
        )
        trace = self.trace
        trace.add(0, "scenario", name=self.scenario.name, seed=self.scenario.seed)
        for serial, fob in self.fobs.items():
            trace.add(0, "fob", serial=serial, ctr=fob.counter)
        trace.add(0, "door", state=self.receiver.door)
        for event in self.scenario.events:
            self._push(event.at, event.action)
        while self._queue:
            at, _, action = heapq.heappop(self._queue)
            self._dispatch(at, action)
        self._footer()
        return trace

    def _dispatch(self, now: int, action: object) -> None:
        if isinstance(action, VictimPress):
            self._victim_press(now, action)
        elif isinstance(action, _AttackerReplay):
            self._attacker_replay(now, action)
        elif isinstance(action, AttackerPhase):
            self.trace.add(now, "phase", name=action.name)
            self._run_strategy(PhaseTrigger(action.name, action.params), now)
        elif isinstance(action, LearnModeEntry):
            enter_learn_mode(self.receiver)
            self.trace.add(now, "learn_mode", state=self.receiver.learn_phase)
        elif isinstance(action, AdvanceClock):
            self.trace.add(now, "tick")
        else:
            raise ScenarioError(["unsupported event action %r" % (action,)])

    def _victim_press(self, now: int, event: VictimPress) -> None:
        fob = self.fobs[event.fob_serial]
        new_fob, transmission = press(fob, event.button, now)
        self.fobs[event.fob_serial] = new_fob
        record = transmit(
            self.channel,
            transmission,
            now,
            sender=VICTIM,
            out_of_range=event.out_of_range,
            fob_in_attacker_range=event.fob_in_attacker_range,
        )
        self.trace.add(
            now,
            "tx",
            src=VICTIM,
            serial=transmission.serial,
            ctr=new_fob.counter,
            btn=event.button,
            out_of_range=event.out_of_range,
            jammed=record.jammed,
            delivered=record.delivered,
            captured=record.captured,
            frame=transmission.ciphertext,
        )
        if record.captured and self.strategy is not None:
            index = len(self.captures) - 1
            self._run_strategy(
                CaptureObserved(index, transmission, record.delivered), now
            )
        if record.delivered:
            self._deliver(now, transmission, VICTIM)

    def _attacker_replay(self, now: int, action: _AttackerReplay) -> None:
        entry = self.captures[action.capture_index]
        record = transmit(self.channel, entry.transmission, now, sender=ATTACKER)
        self.trace.add(
            now,
            "tx",
            src=ATTACKER,
            serial=entry.transmission.serial,
            idx=action.capture_index,
            jammed=record.jammed,
            delivered=record.delivered,
            captured=record.captured,
            frame=entry.transmission.ciphertext,
        )
        if record.delivered:
            self._deliver(now, entry.transmission, ATTACKER)

    def _deliver(self, now: int, transmission, sender: str) -> None:
        action = receive(self.receiver, self.policy, transmission, now)
        fields = {
            "src": sender,
            "serial": transmission.serial,
            "action": action.kind,
        }
        if action.instruction is not None:
            fields["btn"] = action.instruction
        if action.reason is not None:
            fields["reason"] = action.reason
        if action.new_counter is not None:
            fields["ctr"] = action.new_counter
        fields["door"] = self.receiver.door
        self.trace.add(now, "rx", **fields)
        if self.receiver.door is not self._door_seen:
            self._door_seen = self.receiver.door
            self.trace.add(now, "door", state=self.receiver.door)

    def _run_strategy(self, event, now: int) -> None:
        if self.strategy is None:
            return
        for command in self.strategy.on_event(event, now):
            if isinstance(command, SetJamming):
                set_jamming(self.channel, command.on)
                self.trace.add(
                    now, "attacker", action="jam_on" if command.on else "jam_off"
                )
            elif isinstance(command, ScheduleReplay):
                self.trace.add(
                    now,
                    "attacker",
                    action="replay",
                    idx=command.capture_index,
                    due=command.at,
                )
                self._push(command.at, _AttackerReplay(command.capture_index))
            else:
                raise ScenarioError(["unsupported attacker command %r" % (command,)])

    def _footer(self) -> None:
        at = self.receiver.clock
        for serial, fob in self.fobs.items():
            record = self.receiver.fobs.get(serial)
            stored = record.counter if record is not None else -1
            self.trace.add(at, "final_fob", serial=serial, ctr=fob.counter, stored=stored)
        self.trace.add(
            at,
            "final",
            door=self.receiver.door,
            captures=len(self.captures) if self.captures is not None else 0,
        )


def _build_strategy(definition: AttackerDef):
    try:
        cls = STRATEGY_KINDS[definition.kind]
    except KeyError:
        raise ScenarioError(["unknown attacker strategy %r" % definition.kind])
    if cls is attacks.RollBack:
        return cls(
            jam_first=definition.jam_first,
            signals_to_capture=definition.signals_to_capture,
        )
    return cls()


def run(scenario: Scenario) -> Trace:
    """Execute a scenario and return its trace."""
    return Engine(scenario).run()


def evaluate(trace: Trace, goal: Goal) -> bool:
    """Check a goal predicate against a finished trace."""
    if goal is Goal.UNLOCK_WITHOUT_AUTHORIZATION:
        return _unlocked_by_attacker(trace)
    if goal is Goal.VICTIM_UNAFFECTED:
        return _victim_unaffected(trace)
    if goal is Goal.RELOCKED_AFTER:
        final_door = None
        for record in trace:
            if record.kind == "final":
                final_door = record.get("door")
        return final_door is Door.LOCKED and _unlocked_by_attacker(trace)
    raise ValueError("unknown goal %r" % (goal,))


def _unlocked_by_attacker(trace: Trace) -> bool:
    for record in trace:
        if (
            record.kind == "rx"
            and record.get("src") == ATTACKER
            and record.get("action") in (ActionKind.EXECUTED, ActionKind.RESYNCED)
            and record.get("btn") is Instruction.UNLOCK
        ):
            return True
    return False


def _victim_unaffected(trace: Trace) -> bool:
    records = trace.records
    for i, record in enumerate(records):
        if record.kind != "tx" or record.get("src") != VICTIM:
            continue
        if record.get("out_of_range") or record.get("jammed"):
            continue
        if not record.get("delivered"):
            continue
        intended = record.get("btn")
        # The matching receiver action is the next rx record at this time.
        acted = False
        for later in records[i + 1 :]:
            if later.at != record.at:
                break
            if later.kind == "rx" and later.get("serial") == record.get("serial"):
                acted = (
                    later.get("action") in (ActionKind.EXECUTED, ActionKind.RESYNCED)
                    and later.get("btn") == intended
                )
                break
        if not acted:
            return False
    return True
