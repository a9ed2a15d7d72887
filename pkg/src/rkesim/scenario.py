"""Scenario and policy file formats.

Both formats are line oriented and diff friendly.  ``#`` starts a
comment, blank lines are ignored, and the first meaningful line is a
versioned header.  Keys and values are whitespace separated.

Scenario file grammar (header ``rkesim-scenario v1``)::

    name <ident>              # optional, defaults to the file stem
    seed <int>

    [fob]                     # one section per fob
    serial <int>
    counter <int>             # initial fob counter, default 0
    key <hex>                 # default: derived from the seed
    clock_skew_ms <int>       # default 0
    timestamps on|off         # embed timestamps, default off
    learned on|off            # receiver knows this fob, default on
    receiver_counter <int>    # stored counter, default same as counter

    [receiver]
    single_window <int>                    # default 16
    double_window_limit <int>              # default 32768
    rollback <n> strict|loose [<ms>]       # default: absent
    per_instruction_counters on|off        # default off
    timestamp_tolerance_ms <int>           # default: no timestamp check
    learn_entry explicit|auto              # default explicit
    learn_exit on|off                      # exit after success, default on
    learn_readd overwrite|ignore           # default overwrite

    [attacker]                # optional
    strategy naive_replay|jam_replay_lock|future_code|rolljam|rollback
    jam_first on|off          # rollback recon, default on
    signals_to_capture <int>  # rollback recon, default 2

    [events]
    <at_ms> press <serial> lock|unlock [out_of_range] [no_capture]
    <at_ms> attacker deploy
    <at_ms> attacker exploit [indices=<i,j,...>] [gap_ms=<int>] [relock]
    <at_ms> learn_mode
    <at_ms> advance

Policy files (header ``rkesim-policy v1``) hold ``name`` plus a single
``[receiver]`` section with the same keys.
"""

from __future__ import annotations

from dataclasses import dataclass

from .codebook import Instruction
from .receiver import (
    LearnBehavior,
    ReaddMode,
    ReceiverPolicy,
    RollbackProfile,
    SequenceMode,
    TimestampCheck,
)
from .sim import (
    AdvanceClock,
    AttackerDef,
    AttackerPhase,
    FobDef,
    LearnModeEntry,
    Scenario,
    ScenarioEvent,
    VictimPress,
)

SCENARIO_HEADER = "rkesim-scenario v1"
POLICY_HEADER = "rkesim-policy v1"


class ParseError(Exception):
    def __init__(self, line: int, column: int, message: str):
        super().__init__("line %d, column %d: %s" % (line, column, message))
        self.line = line
        self.column = column
        self.message = message


@dataclass(frozen=True)
class _Token:
    text: str
    line: int
    column: int

    def fail(self, message: str) -> ParseError:
        return ParseError(self.line, self.column, message)

    def as_int(self) -> int:
        try:
            return int(self.text)
        except ValueError:
            raise self.fail("expected an integer, got %r" % self.text)

    def as_flag(self) -> bool:
        if self.text in ("on", "true", "1"):
            return True
        if self.text in ("off", "false", "0"):
            return False
        raise self.fail("expected on or off, got %r" % self.text)


def _tokenize(text: str) -> list[list[_Token]]:
    lines = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        tokens = []
        column = 1
        for piece in body.split():
            column = body.index(piece, column - 1) + 1
            tokens.append(_Token(piece, line_no, column))
            column += len(piece)
        if tokens:
            lines.append(tokens)
    return lines


class _SectionReader:
    """Splits token lines into (header tokens, list of section blocks)."""

    def __init__(self, text: str, expected_header: str):
        lines = _tokenize(text)
        if not lines:
            raise ParseError(1, 1, "empty file, expected header %r" % expected_header)
        header = " ".join(token.text for token in lines[0])
        if header != expected_header:
            raise lines[0][0].fail(
                "bad header %r, expected %r" % (header, expected_header)
            )
        self.preamble: list[list[_Token]] = []
        self.sections: list[tuple[_Token, list[list[_Token]]]] = []
        current: list[list[_Token]] | None = None
        for tokens in lines[1:]:
            first = tokens[0]
            if first.text.startswith("["):
                if not (first.text.endswith("]") and len(tokens) == 1):
                    raise first.fail("malformed section header")
                current = []
                self.sections.append((first, current))
            elif current is None:
                self.preamble.append(tokens)
            else:
                current.append(tokens)


def _key_values(block: list[list[_Token]]) -> list[tuple[_Token, list[_Token]]]:
    pairs = []
    for tokens in block:
        if len(tokens) < 2:
            raise tokens[0].fail("expected 'key value...'")
        pairs.append((tokens[0], tokens[1:]))
    return pairs


def _single(values: list[_Token], key: _Token) -> _Token:
    if len(values) != 1:
        raise values[1].fail("unexpected extra value after %r" % key.text)
    return values[0]


def parse_policy_section(block: list[list[_Token]]) -> ReceiverPolicy:
    single_window = 16
    double_limit = 1 << 15
    rollback = None
    per_instruction = False
    timestamp_check = None
    learn_entry_explicit = True
    learn_exit = True
    learn_readd = ReaddMode.OVERWRITE
    for key, values in _key_values(block):
        if key.text == "single_window":
            single_window = _single(values, key).as_int()
        elif key.text == "double_window_limit":
            double_limit = _single(values, key).as_int()
        elif key.text == "rollback":
            if len(values) not in (2, 3):
                raise key.fail("rollback takes '<signals> strict|loose [<ms>]'")
            signals = values[0].as_int()
            if values[1].text not in ("strict", "loose"):
                raise values[1].fail("sequence must be strict or loose")
            timeframe = values[2].as_int() if len(values) == 3 else None
            rollback = RollbackProfile(
                signals_required=signals,
                sequence=SequenceMode(values[1].text),
                timeframe_ms=timeframe,
            )
        elif key.text == "per_instruction_counters":
            per_instruction = _single(values, key).as_flag()
        elif key.text == "timestamp_tolerance_ms":
            timestamp_check = TimestampCheck(_single(values, key).as_int())
        elif key.text == "learn_entry":
            mode = _single(values, key)
            if mode.text not in ("explicit", "auto"):
                raise mode.fail("learn_entry must be explicit or auto")
            learn_entry_explicit = mode.text == "explicit"
        elif key.text == "learn_exit":
            learn_exit = _single(values, key).as_flag()
        elif key.text == "learn_readd":
            mode = _single(values, key)
            if mode.text not in ("overwrite", "ignore"):
                raise mode.fail("learn_readd must be overwrite or ignore")
            learn_readd = ReaddMode(mode.text)
        else:
            raise key.fail("unknown receiver key %r" % key.text)
    try:
        return ReceiverPolicy(
            single_window=single_window,
            double_window_limit=double_limit,
            rollback=rollback,
            learn=LearnBehavior(
                explicit_entry_required=learn_entry_explicit,
                exit_after_success=learn_exit,
                readd_known_fob=learn_readd,
            ),
            per_instruction_counters=per_instruction,
            timestamp_check=timestamp_check,
        )
    except ValueError as exc:
        first = block[0][0] if block else _Token("", 1, 1)
        raise ParseError(first.line, first.column, str(exc))


def loads_policy(text: str, default_name: str = "policy") -> tuple[str, ReceiverPolicy]:
    reader = _SectionReader(text, POLICY_HEADER)
    name = default_name
    for key, values in _key_values(reader.preamble):
        if key.text == "name":
            name = _single(values, key).text
        else:
            raise key.fail("unknown top-level key %r" % key.text)
    receiver_blocks = [blk for tok, blk in reader.sections if tok.text == "[receiver]"]
    for token, _ in reader.sections:
        if token.text != "[receiver]":
            raise token.fail("policy files allow only a [receiver] section")
    if len(receiver_blocks) != 1:
        raise ParseError(1, 1, "policy file needs exactly one [receiver] section")
    return name, parse_policy_section(receiver_blocks[0])


def load_policy(path) -> tuple[str, ReceiverPolicy]:
    with open(path, "r", encoding="utf-8") as handle:
        text = handle.read()
    stem = str(path).rsplit("/", 1)[-1].rsplit(".", 1)[0]
    return loads_policy(text, default_name=stem)


def render_policy(name: str, policy: ReceiverPolicy) -> str:
    lines = [POLICY_HEADER, "name %s" % name, "", "[receiver]"]
    lines.append("single_window %d" % policy.single_window)
    lines.append("double_window_limit %d" % policy.double_window_limit)
    if policy.rollback is not None:
        entry = "rollback %d %s" % (
            policy.rollback.signals_required,
            policy.rollback.sequence.value,
        )
        if policy.rollback.timeframe_ms is not None:
            entry += " %d" % policy.rollback.timeframe_ms
        lines.append(entry)
    if policy.per_instruction_counters:
        lines.append("per_instruction_counters on")
    if policy.timestamp_check is not None:
        lines.append("timestamp_tolerance_ms %d" % policy.timestamp_check.tolerance_ms)
    learn = policy.learn
    if not learn.explicit_entry_required:
        lines.append("learn_entry auto")
    if not learn.exit_after_success:
        lines.append("learn_exit off")
    if learn.readd_known_fob is not ReaddMode.OVERWRITE:
        lines.append("learn_readd %s" % learn.readd_known_fob.value)
    return "\n".join(lines) + "\n"


def _parse_fob_section(block: list[list[_Token]]) -> FobDef:
    serial = None
    counter = 0
    key_bytes = None
    skew = 0
    timestamps = False
    learned = True
    receiver_counter = None
    for key, values in _key_values(block):
        if key.text == "serial":
            serial = _single(values, key).as_int()
        elif key.text == "counter":
            counter = _single(values, key).as_int()
        elif key.text == "key":
            token = _single(values, key)
            try:
                key_bytes = bytes.fromhex(token.text)
            except ValueError:
                raise token.fail("key must be hex")
        elif key.text == "clock_skew_ms":
            skew = _single(values, key).as_int()
        elif key.text == "timestamps":
            timestamps = _single(values, key).as_flag()
        elif key.text == "learned":
            learned = _single(values, key).as_flag()
        elif key.text == "receiver_counter":
            receiver_counter = _single(values, key).as_int()
        else:
            raise key.fail("unknown fob key %r" % key.text)
    if serial is None:
        first = block[0][0] if block else _Token("", 1, 1)
        raise ParseError(first.line, first.column, "fob section needs a serial")
    return FobDef(
        serial=serial,
        initial_counter=counter,
        key=key_bytes,
        clock_skew_ms=skew,
        emit_timestamps=timestamps,
        learned=learned,
        receiver_counter=receiver_counter,
    )


def _parse_attacker_section(block: list[list[_Token]]) -> AttackerDef:
    kind = None
    jam_first = True
    signals = 2
    for key, values in _key_values(block):
        if key.text == "strategy":
            kind = _single(values, key).text
        elif key.text == "jam_first":
            jam_first = _single(values, key).as_flag()
        elif key.text == "signals_to_capture":
            signals = _single(values, key).as_int()
        else:
            raise key.fail("unknown attacker key %r" % key.text)
    if kind is None:
        first = block[0][0] if block else _Token("", 1, 1)
        raise ParseError(first.line, first.column, "attacker section needs a strategy")
    return AttackerDef(kind=kind, jam_first=jam_first, signals_to_capture=signals)


def _parse_event_line(tokens: list[_Token]) -> ScenarioEvent:
    at = tokens[0].as_int()
    if len(tokens) < 2:
        raise tokens[0].fail("event needs an action verb")
    verb = tokens[1]
    rest = tokens[2:]
    if verb.text == "press":
        if len(rest) < 2:
            raise verb.fail("press takes '<serial> lock|unlock [flags]'")
        serial = rest[0].as_int()
        if rest[1].text not in ("lock", "unlock"):
            raise rest[1].fail("button must be lock or unlock")
        button = Instruction(rest[1].text)
        out_of_range = False
        in_attacker_range = True
        for flag in rest[2:]:
            if flag.text == "out_of_range":
                out_of_range = True
            elif flag.text == "no_capture":
                in_attacker_range = False
            else:
                raise flag.fail("unknown press flag %r" % flag.text)
        action = VictimPress(
            fob_serial=serial,
            button=button,
            out_of_range=out_of_range,
            fob_in_attacker_range=in_attacker_range,
        )
    elif verb.text == "attacker":
        if not rest:
            raise verb.fail("attacker event needs a phase name")
        params: dict = {}
        for token in rest[1:]:
            if token.text == "relock":
                params["relock"] = True
            elif "=" in token.text:
                name, _, value = token.text.partition("=")
                if name == "indices":
                    try:
                        params["indices"] = [int(x) for x in value.split(",")]
                    except ValueError:
                        raise token.fail("indices must be comma-separated integers")
                elif name == "gap_ms":
                    try:
                        params["gap_ms"] = int(value)
                    except ValueError:
                        raise token.fail("gap_ms must be an integer")
                else:
                    raise token.fail("unknown exploit parameter %r" % name)
            else:
                raise token.fail("unknown attacker argument %r" % token.text)
        action = AttackerPhase(name=rest[0].text, params=params)
    elif verb.text == "learn_mode":
        action = LearnModeEntry()
    elif verb.text == "advance":
        action = AdvanceClock()
    else:
        raise verb.fail("unknown event verb %r" % verb.text)
    return ScenarioEvent(at=at, action=action)


def loads_scenario(text: str, default_name: str = "scenario") -> Scenario:
    reader = _SectionReader(text, SCENARIO_HEADER)
    name = default_name
    seed = 0
    for key, values in _key_values(reader.preamble):
        if key.text == "name":
            name = _single(values, key).text
        elif key.text == "seed":
            seed = _single(values, key).as_int()
        else:
            raise key.fail("unknown top-level key %r" % key.text)

    fobs: list[FobDef] = []
    policy = None
    attacker = None
    events: list[ScenarioEvent] = []
    for token, block in reader.sections:
        if token.text == "[fob]":
            fobs.append(_parse_fob_section(block))
        elif token.text == "[receiver]":
            if policy is not None:
                raise token.fail("duplicate [receiver] section")
            policy = parse_policy_section(block)
        elif token.text == "[attacker]":
            if attacker is not None:
                raise token.fail("duplicate [attacker] section")
            attacker = _parse_attacker_section(block)
        elif token.text == "[events]":
            for tokens in block:
                events.append(_parse_event_line(tokens))
        else:
            raise token.fail("unknown section %r" % token.text)
    if policy is None:
        raise ParseError(1, 1, "scenario needs a [receiver] section")
    if not fobs:
        raise ParseError(1, 1, "scenario needs at least one [fob] section")
    return Scenario(
        name=name,
        seed=seed,
        fobs=tuple(fobs),
        policy=policy,
        attacker=attacker,
        events=tuple(events),
    )


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as handle:
        text = handle.read()
    stem = str(path).rsplit("/", 1)[-1].rsplit(".", 1)[0]
    return loads_scenario(text, default_name=stem)
