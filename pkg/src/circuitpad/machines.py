"""Minimal adaptive-padding state machines scheduled over circuit timelines.

A machine is a set of states with event-driven transitions.  Entering a state
samples its delay distribution to arm a single pending timer; when the timer
fires the state's padding pattern is emitted onto the circuit.  Machines run
one instance per circuit, never communicate, and own their random stream, so
runs over distinct circuits are independent and reproducible.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .cells import (
    Cell,
    CircuitPurpose,
    CircuitTrace,
    RequestKind,
    inject_cells,
    request_pattern,
)


@dataclass(frozen=True)
class DelayDistribution:
    """Fixed, exponential or uniform delay in seconds."""

    kind: str  # "fixed" | "exponential" | "uniform"
    value: float = 0.0  # fixed delay
    rate: float = 1.0  # events/second for exponential
    lo: float = 0.0
    hi: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("fixed", "exponential", "uniform"):
            raise ValueError(f"unknown delay kind {self.kind!r}")
        if self.kind == "fixed" and self.value < 0:
            raise ValueError("fixed delay must be >= 0")
        if self.kind == "exponential" and self.rate <= 0:
            raise ValueError("rate must be > 0")
        if self.kind == "uniform" and self.lo > self.hi:
            raise ValueError("uniform delay needs lo <= hi")

    @classmethod
    def fixed(cls, value: float) -> "DelayDistribution":
        return cls(kind="fixed", value=value)

    @classmethod
    def exponential(cls, rate: float) -> "DelayDistribution":
        return cls(kind="exponential", rate=rate)

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "DelayDistribution":
        return cls(kind="uniform", lo=lo, hi=hi)

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "fixed":
            return self.value
        if self.kind == "exponential":
            return float(rng.exponential(1.0 / self.rate))
        return float(rng.uniform(self.lo, self.hi))

    def to_config(self) -> dict:
        if self.kind == "fixed":
            return {"kind": "fixed", "value": self.value}
        if self.kind == "exponential":
            return {"kind": "exponential", "rate": self.rate}
        return {"kind": "uniform", "lo": self.lo, "hi": self.hi}

    @classmethod
    def from_config(cls, cfg: dict) -> "DelayDistribution":
        return cls(**cfg)


class MachineEvent(enum.Enum):
    CIRCUIT_CREATED = "CircuitCreated"
    REAL_CELL_SENT = "RealCellSent"
    REAL_CELL_RECEIVED = "RealCellReceived"
    TIMER_FIRED = "TimerFired"
    CONNECTION_ARRIVED = "ConnectionArrived"
    CIRCUIT_CLOSED = "CircuitClosed"


@dataclass(frozen=True)
class MachineStateSpec:
    """One padding state: what to emit on timer expiry and when.

    `pattern` is a request kind or a raw cell layout (relative times, padding
    flags preset).  `pattern_spacing` controls how a request kind is rendered
    at emission: None uses request-reply timing with `pattern_rtt`, 0 renders
    the whole pattern as an atomic burst at the firing instant.  `repeat`
    re-arms the timer after emission; `closes_circuit` ends the circuit when
    the state's timer fires.
    """

    state_id: str
    pattern: RequestKind | tuple[Cell, ...] | None = None
    delay: DelayDistribution | None = None
    repeat: bool = False
    pattern_rtt: float = 0.05
    pattern_spacing: float | None = 0.0
    closes_circuit: bool = False


@dataclass(frozen=True)
class MachineSpec:
    """States plus (state, event) -> state transitions and a start state."""

    states: tuple[MachineStateSpec, ...]
    transitions: dict[tuple[str, MachineEvent], str]
    start_state: str
    applies_to: tuple[CircuitPurpose, ...] = ()
    name: str = "machine"

    def __post_init__(self) -> None:
        by_id = {s.state_id: s for s in self.states}
        if self.states and self.start_state not in by_id:
            raise ValueError(f"start state {self.start_state!r} not defined")
        for (src, _event), dst in self.transitions.items():
            if src not in by_id or dst not in by_id:
                raise ValueError(f"transition {src!r}->{dst!r} uses unknown state")
        object.__setattr__(self, "_by_id", by_id)

    def state(self, state_id: str) -> MachineStateSpec:
        return self._by_id[state_id]

    def to_config(self) -> dict:
        states = []
        for s in self.states:
            entry: dict = {"id": s.state_id, "repeat": s.repeat}
            if isinstance(s.pattern, RequestKind):
                entry["pattern"] = s.pattern.value
            if s.delay is not None:
                entry["delay"] = s.delay.to_config()
            if s.pattern_spacing != 0.0:
                entry["pattern_spacing"] = s.pattern_spacing
            if s.pattern_rtt != 0.05:
                entry["pattern_rtt"] = s.pattern_rtt
            if s.closes_circuit:
                entry["closes_circuit"] = True
            states.append(entry)
        return {
            "name": self.name,
            "start_state": self.start_state,
            "applies_to": [p.value for p in self.applies_to],
            "states": states,
            "transitions": [
                {"from": src, "event": ev.value, "to": dst}
                for (src, ev), dst in sorted(
                    self.transitions.items(), key=lambda kv: (kv[0][0], kv[0][1].value)
                )
            ],
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "MachineSpec":
        states = []
        for entry in cfg.get("states", []):
            pattern = entry.get("pattern")
            states.append(
                MachineStateSpec(
                    state_id=entry["id"],
                    pattern=RequestKind(pattern) if pattern else None,
                    delay=(
                        DelayDistribution.from_config(entry["delay"])
                        if "delay" in entry
                        else None
                    ),
                    repeat=entry.get("repeat", False),
                    pattern_rtt=entry.get("pattern_rtt", 0.05),
                    pattern_spacing=entry.get("pattern_spacing", 0.0),
                    closes_circuit=entry.get("closes_circuit", False),
                )
            )
        transitions = {
            (t["from"], MachineEvent(t["event"])): t["to"]
            for t in cfg.get("transitions", [])
        }
        return cls(
            states=tuple(states),
            transitions=transitions,
            start_state=cfg["start_state"],
            applies_to=tuple(CircuitPurpose(p) for p in cfg.get("applies_to", [])),
            name=cfg.get("name", "machine"),
        )


@dataclass(frozen=True)
class MachineState:
    """Runtime cursor of one machine instance."""

    current: str
    pending_timer: float | None = None
    emitted: int = 0  # padding cells emitted so far
    closed_at: float | None = None  # set when a closing state's timer fires


def _render(state: MachineStateSpec, now: float) -> tuple[Cell, ...]:
    if state.pattern is None:
        return ()
    if isinstance(state.pattern, RequestKind):
        return request_pattern(
            state.pattern,
            now,
            state.pattern_rtt,
            is_padding=True,
            spacing=state.pattern_spacing,
        )
    return tuple(
        Cell(now + c.time, c.direction, c.command, True) for c in state.pattern
    )


def _enter(
    spec: MachineSpec, state: MachineState, target: str, now: float,
    rng: np.random.Generator,
) -> MachineState:
    st = spec.state(target)
    pending = now + st.delay.sample(rng) if st.delay is not None else None
    return MachineState(target, pending, state.emitted, state.closed_at)


def step(
    spec: MachineSpec,
    state: MachineState,
    event: MachineEvent,
    now: float,
    rng: np.random.Generator,
) -> tuple[MachineState, tuple[Cell, ...]]:
    """Advance the machine by one event; returns new state and emitted cells.

    Undefined (state, event) pairs are no-ops.  A timer expiry emits the
    current state's pattern timestamped at `now`, then either follows a
    TimerFired transition, re-arms (repeat states) or disarms.
    """
    if not spec.states:
        return state, ()
    st = spec.state(state.current)
    if event is MachineEvent.TIMER_FIRED:
        if state.pending_timer is None:
            return state, ()
        cells = _render(st, now)
        emitted = state.emitted + len(cells)
        if st.closes_circuit:
            return MachineState(st.state_id, None, emitted, now), cells
        target = spec.transitions.get((st.state_id, event))
        if target is not None:
            mid = MachineState(st.state_id, None, emitted, state.closed_at)
            return _enter(spec, mid, target, now, rng), cells
        if st.repeat and st.delay is not None:
            pending = now + st.delay.sample(rng)
            return MachineState(st.state_id, pending, emitted, state.closed_at), cells
        return MachineState(st.state_id, None, emitted, state.closed_at), cells
    target = spec.transitions.get((st.state_id, event))
    if target is None:
        return state, ()
    return _enter(spec, state, target, now, rng), ()


def run_machine(
    spec: MachineSpec,
    trace: CircuitTrace,
    stop_time: float,
    rng: np.random.Generator,
) -> CircuitTrace:
    """Drive a machine over a circuit's merged event/timer timeline.

    Existing cells generate sent/received events at their own times; pending
    timers interleave in time order.  The run ends at stop_time, at a circuit
    close event, or when a closing state fires.  Emitted padding is merged
    into the trace; pre-existing cell times are never modified.
    """
    if stop_time < trace.created_at:
        raise ValueError("stop_time precedes circuit creation")
    if not spec.states:
        return trace
    events: list[tuple[float, MachineEvent]] = [
        (trace.created_at, MachineEvent.CIRCUIT_CREATED)
    ]
    for c in trace.cells:
        kind = (
            MachineEvent.REAL_CELL_SENT
            if c.direction < 0
            else MachineEvent.REAL_CELL_RECEIVED
        )
        events.append((c.time, kind))
    if trace.closed_at <= stop_time:
        events.append((trace.closed_at, MachineEvent.CIRCUIT_CLOSED))
    events.sort(key=lambda e: e[0])

    state = MachineState(current=spec.start_state)
    emitted: list[Cell] = []
    i = 0
    while True:
        next_time = events[i][0] if i < len(events) else None
        timer = state.pending_timer
        if timer is not None and timer <= stop_time and (
            next_time is None or timer <= next_time
        ):
            state, cells = step(spec, state, MachineEvent.TIMER_FIRED, timer, rng)
            emitted.extend(cells)
            if state.closed_at is not None:
                break
            continue
        if next_time is None or next_time > stop_time:
            break
        state, cells = step(spec, state, events[i][1], next_time, rng)
        emitted.extend(cells)
        if events[i][1] is MachineEvent.CIRCUIT_CLOSED:
            break
        i += 1

    out = inject_cells(trace, emitted)
    if state.closed_at is not None:
        last = out.cells[-1].time if out.cells else out.created_at
        out = replace(out, closed_at=max(state.closed_at, last))
    return out


def machine_applies(spec: MachineSpec, trace: CircuitTrace) -> bool:
    return not spec.applies_to or trace.purpose in spec.applies_to
