"""Black-box policy classification.

``classify`` treats a receiver policy as a sealed unit: it synthesizes
a fob, feeds the receiver a transcript of legitimate presses, then
probes replay sequences of growing length, two shapes (a consecutive
run and an ascending run with gaps) and a grid of inter-replay gaps.
The verdict is either NotVulnerable or the minimal working variant
(#signals, sequence mode, timeframe).

``exhaustive_search`` is the independent oracle: over small bounds it
enumerates every ascending subsequence of the transcript at every probe
gap and every starting counter, driving the receiver directly, and
returns the subset-minimal successful sequences.  The two must agree.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .attacks import DirectTarget, ExploitSpec, execute_exploit
from .channel import CaptureLog
from .codebook import Instruction, derive_key, master_from_seed
from .fob import FobState, press
from .receiver import (
    Door,
    ReceiverPolicy,
    SequenceMode,
    new_receiver_state,
    receive,
    register_fob,
)

UNBOUNDED_GAP_MS = 10**9
DEFAULT_GAP_PROBES_MS = tuple(range(1000, 10001, 1000)) + (UNBOUNDED_GAP_MS,)

_PROBE_SEED = 0x5EED
_PROBE_SERIAL = 101
_PRESS_SPACING_MS = 10_000
_EXPLOIT_DELAY_MS = 100 * 24 * 3600 * 1000  # replays start 100 days later


class SearchBoundsError(Exception):
    """Requested exhaustive search exceeds the supported bounds."""


@dataclass(frozen=True)
class ProbeBudget:
    max_signals: int = 6
    gap_probes_ms: tuple[int, ...] = DEFAULT_GAP_PROBES_MS

    def __post_init__(self) -> None:
        if self.max_signals < 2:
            raise ValueError("max_signals must be at least 2")
        if not self.gap_probes_ms:
            raise ValueError("at least one gap probe is required")
        if list(self.gap_probes_ms) != sorted(self.gap_probes_ms):
            raise ValueError("gap probes must be sorted ascending")


@dataclass(frozen=True)
class VariantSignature:
    """Classifier verdict; ``notation`` renders the conventional name."""

    vulnerable: bool
    signals: int | None = None
    sequence: SequenceMode | None = None
    timeframe_ms: int | None = None
    incomplete: bool = False
    witness_indices: tuple[int, ...] | None = None
    witness_gap_ms: int | None = None

    def notation(self) -> str:
        if not self.vulnerable:
            return "NOT VULNERABLE"
        frame = "⊗" if self.timeframe_ms is None else _render_seconds(self.timeframe_ms)
        return "RollBack^%s_%s(%d)" % (
            self.sequence.value.capitalize(),
            frame,
            self.signals,
        )


def _render_seconds(ms: int) -> str:
    seconds = ms / 1000
    return "%g" % seconds


@dataclass(frozen=True)
class OracleFinding:
    """One subset-minimal successful replay sequence from the oracle."""

    indices: tuple[int, ...]
    counter_steps: tuple[int, ...]   # counter deltas between replayed frames
    passing_gaps: tuple[int, ...]


class _Probe:
    """Synthetic fob + receiver pair with a captured press transcript."""

    def __init__(self, policy: ReceiverPolicy, transcript_len: int, start_counter: int = 0):
        master = master_from_seed(_PROBE_SEED)
        key = derive_key(master, _PROBE_SERIAL)
        fob = FobState(
            serial=_PROBE_SERIAL,
            key=key,
            counter=start_counter,
            emit_timestamps=policy.timestamp_check is not None,
        )
        state = new_receiver_state(policy, master)
        register_fob(state, _PROBE_SERIAL, key, start_counter)
        self.policy = policy
        self.captures = CaptureLog()
        now = 0
        for _ in range(transcript_len):
            now += _PRESS_SPACING_MS
            fob, transmission = press(fob, Instruction.UNLOCK, now)
            receive(state, policy, transmission, now)
            self.captures.append(transmission, now)
        self.base_state = state
        self.transcript_end = now

    def fresh_target(self) -> DirectTarget:
        state = self.base_state.clone()
        state.door = Door.LOCKED  # vehicle parked and locked before the replay
        return DirectTarget(state, self.policy)

    def replay_succeeds(self, indices: tuple[int, ...], gap_ms: int) -> bool:
        target = self.fresh_target()
        outcome = execute_exploit(
            ExploitSpec(signal_indices=indices, inter_replay_gap_ms=gap_ms),
            self.captures,
            target,
            self.transcript_end + _EXPLOIT_DELAY_MS,
        )
        return outcome.success


def classify(policy: ReceiverPolicy, budget: ProbeBudget = ProbeBudget()) -> VariantSignature:
    """Search replay space for the minimal working attack on a policy.

    Probes sequence lengths from 2 up to the budget, refines the first
    success by shape (consecutive vs gapped) and by the largest passing
    replay gap.  A policy surviving the whole budget is NotVulnerable.
    """
    gaps = budget.gap_probes_ms
    probe = _Probe(policy, transcript_len=2 * budget.max_signals)

    for k in range(2, budget.max_signals + 1):
        consecutive = tuple(range(k))
        gapped = tuple(range(0, 2 * k, 2))
        consecutive_pass = [g for g in gaps if probe.replay_succeeds(consecutive, g)]
        gapped_pass = [g for g in gaps if probe.replay_succeeds(gapped, g)]
        if not consecutive_pass and not gapped_pass:
            continue
        sequence = SequenceMode.LOOSE if gapped_pass else SequenceMode.STRICT
        passing = sorted(set(consecutive_pass) | set(gapped_pass))
        timeframe_ms, incomplete = _timeframe_from_gaps(passing, gaps)
        witness = gapped if gapped_pass else consecutive
        witness_gap = max(gapped_pass) if gapped_pass else max(consecutive_pass)
        return VariantSignature(
            vulnerable=True,
            signals=k,
            sequence=sequence,
            timeframe_ms=timeframe_ms,
            incomplete=incomplete,
            witness_indices=witness,
            witness_gap_ms=witness_gap,
        )
    return VariantSignature(vulnerable=False)


def _timeframe_from_gaps(
    passing: list[int], gaps: tuple[int, ...]
) -> tuple[int | None, bool]:
    """Reported timeframe: largest passing probe gap, or unbounded.

    When every finite probe passes but the unbounded sentinel fails, the
    true bound lies beyond the grid; the signature is flagged incomplete.
    """
    if passing and passing[-1] == gaps[-1]:
        return None, False
    finite = [g for g in gaps if g != gaps[-1]]
    best = max(passing)
    boundary_seen = any(g > best for g in finite)
    return best, not boundary_seen


def exhaustive_search(
    policy: ReceiverPolicy,
    counter_bits: int,
    transcript_len: int,
    gap_probes_ms: tuple[int, ...] = DEFAULT_GAP_PROBES_MS,
) -> list[OracleFinding]:
    """Enumerate every replay subsequence over every starting counter.

    Returns the subset-minimal successful sequences (by capture index),
    each with the full set of passing probe gaps.  Success must be
    identical for every starting counter; results are merged by union.
    """
    if counter_bits > 8 or transcript_len > 8:
        raise SearchBoundsError(
            "bounds exceeded: ~%d candidate replays"
            % ((1 << counter_bits) * (1 << transcript_len) * len(gap_probes_ms))
        )
    index_sets = [
        combo
        for length in range(1, transcript_len + 1)
        for combo in itertools.combinations(range(transcript_len), length)
    ]
    success_gaps: dict[tuple[int, ...], set[int]] = {}
    for start_counter in range(1 << counter_bits):
        probe = _Probe(policy, transcript_len, start_counter=start_counter)
        for indices in index_sets:
            probe_gaps = gap_probes_ms if len(indices) > 1 else gap_probes_ms[:1]
            for gap in probe_gaps:
                if _direct_replay(probe, indices, gap):
                    success_gaps.setdefault(indices, set()).add(gap)
    findings = []
    minimal = _subset_minimal(list(success_gaps))
    for indices in sorted(minimal, key=lambda seq: (len(seq), seq)):
        steps = tuple(b - a for a, b in itertools.pairwise(indices))
        gaps = tuple(sorted(success_gaps[indices]))
        if len(indices) == 1:
            gaps = tuple(gap_probes_ms)  # gap is meaningless for one replay
        findings.append(
            OracleFinding(indices=indices, counter_steps=steps, passing_gaps=gaps)
        )
    return findings


def _direct_replay(probe: _Probe, indices: tuple[int, ...], gap_ms: int) -> bool:
    # Drives the receiver straight through receive(); deliberately does
    # not share the execute_exploit code path it is meant to check.
    state = probe.base_state.clone()
    state.door = Door.LOCKED
    now = probe.transcript_end + _EXPLOIT_DELAY_MS
    entries = probe.captures.entries
    for idx in indices:
        receive(state, probe.policy, entries[idx].transmission, now)
        now += gap_ms
    return state.door is Door.UNLOCKED


def _subset_minimal(sequences: list[tuple[int, ...]]) -> list[tuple[int, ...]]:
    ordered = sorted(sequences, key=len)
    minimal: list[tuple[int, ...]] = []
    for candidate in ordered:
        candidate_set = set(candidate)
        if not any(set(kept) <= candidate_set for kept in minimal):
            minimal.append(candidate)
    return minimal


def signature_from_findings(
    findings: list[OracleFinding],
    gap_probes_ms: tuple[int, ...] = DEFAULT_GAP_PROBES_MS,
) -> VariantSignature:
    """Collapse oracle findings into the signature they imply."""
    if not findings:
        return VariantSignature(vulnerable=False)
    signals = min(len(f.indices) for f in findings)
    shortest = [f for f in findings if len(f.indices) == signals]
    loose = any(any(step != 1 for step in f.counter_steps) for f in shortest)
    passing = sorted({gap for f in shortest for gap in f.passing_gaps})
    timeframe_ms, incomplete = _timeframe_from_gaps(passing, gap_probes_ms)
    return VariantSignature(
        vulnerable=True,
        signals=signals,
        sequence=SequenceMode.LOOSE if loose else SequenceMode.STRICT,
        timeframe_ms=timeframe_ms,
        incomplete=incomplete,
    )
