"""Cells, circuits, and the deterministic protocol patterns of Tor-like traffic.

A circuit is an ordered sequence of fixed-size cells, each carrying a relay
command, a direction (client outgoing / incoming) and a timestamp.  The
adversary never sees commands or padding flags, only directions and times;
both are kept here as ground truth for evaluation.

Protocol patterns are deterministic: the exit and rendezvous circuit
handshakes (6 and 9 relay cells respectively), and the three request
patterns used both for real traffic and for padding-generated dummies
(directory fetch: 37 cells, introduction handshake: 4 cells, rendezvous
handshake: 3 cells).  Dummy and real requests are rendered by the same
generator, so their shape is identical by construction.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from typing import Iterable, NamedTuple, Sequence, TextIO

# Spacing between back-to-back cells within one reply burst.  Replies to an
# outgoing cell arrive one round trip later; extra cells of the same reply
# follow at this fixed gap.
INTRA_REPLY_GAP = 0.001

# Number of bulk DATA cells in a directory descriptor fetch.  Fixed: the
# fetch pattern is treated as deterministic, with no size variation.
HSDIR_BULK_DATA_CELLS = 30


class CellDirection(enum.IntEnum):
    """Direction of a cell as seen from the client; serializes to -1/+1."""

    OUTGOING = -1
    INCOMING = +1


class RelayCommand(enum.Enum):
    EXTEND2 = "EXTEND2"
    EXTENDED = "EXTENDED"
    BEGIN = "BEGIN"
    BEGIN_DIR = "BEGIN_DIR"
    CONNECTED = "CONNECTED"
    DATA = "DATA"
    END = "END"
    ESTABLISH_REND = "ESTABLISH_REND"
    REND_ESTABLISHED = "REND_ESTABLISHED"
    REND2 = "REND2"
    INTRODUCE1 = "INTRODUCE1"
    INTRO_ACK = "INTRO_ACK"
    APP_DATA = "APP_DATA"


class CircuitPurpose(enum.Enum):
    EXIT = "Exit"
    HSDIR = "HSDir"
    INTRO = "Intro"
    REND = "Rend"
    FAKE_HSDIR = "FakeHSDir"
    FAKE_INTRO = "FakeIntro"
    PADDED_EXIT = "PaddedExit"
    PREEMPTIVE = "Preemptive"


class RequestKind(enum.Enum):
    HSDIR_FETCH = "HsdirFetch"
    INTRO_HANDSHAKE = "IntroHandshake"
    REND_HANDSHAKE = "RendHandshake"


class HandshakeKind(enum.Enum):
    EXIT_CIRCUIT = "ExitCircuit"
    REND_CIRCUIT = "RendCircuit"


class Cell(NamedTuple):
    """One protocol cell. `command` and `is_padding` are ground truth only."""

    time: float
    direction: CellDirection
    command: RelayCommand
    is_padding: bool = False


@dataclass(frozen=True)
class CircuitTrace:
    """An ordered cell sequence on one circuit.

    Cells are sorted by time with ties broken by insertion order; closed_at
    is the circuit teardown instant and is never visible to the adversary.
    """

    circuit_id: str
    purpose: CircuitPurpose
    cells: tuple[Cell, ...]
    created_at: float
    closed_at: float

    def __post_init__(self) -> None:
        if self.cells:
            prev = self.created_at
            for c in self.cells:
                if c.time < prev:
                    raise ValueError("cells must be sorted and not precede creation")
                prev = c.time
            if self.closed_at < prev:
                raise ValueError("closed_at precedes last cell")

    @property
    def duration(self) -> float:
        """Time between the first and last cell (0 for <= 1 cell)."""
        if len(self.cells) < 2:
            return 0.0
        return self.cells[-1].time - self.cells[0].time

    @property
    def lifetime(self) -> float:
        return self.closed_at - self.created_at

    def directions(self) -> tuple[int, ...]:
        return tuple(int(c.direction) for c in self.cells)


# Command/direction layout of each pattern.  Outgoing cells advance nothing;
# the first incoming cell of a reply arrives one rtt after the outgoing cell
# that triggered it, subsequent cells of the same reply follow at the intra
# reply gap.
_OUT = CellDirection.OUTGOING
_IN = CellDirection.INCOMING
_C = RelayCommand

_PATTERNS: dict[object, tuple[tuple[RelayCommand, CellDirection], ...]] = {
    HandshakeKind.EXIT_CIRCUIT: (
        (_C.EXTEND2, _OUT),
        (_C.EXTENDED, _IN),
        (_C.EXTEND2, _OUT),
        (_C.EXTENDED, _IN),
        (_C.BEGIN, _OUT),
        (_C.CONNECTED, _IN),
    ),
    HandshakeKind.REND_CIRCUIT: (
        (_C.EXTEND2, _OUT),
        (_C.EXTENDED, _IN),
        (_C.EXTEND2, _OUT),
        (_C.EXTENDED, _IN),
        (_C.ESTABLISH_REND, _OUT),
        (_C.REND_ESTABLISHED, _IN),
        (_C.REND2, _IN),
        (_C.BEGIN, _OUT),
        (_C.CONNECTED, _IN),
    ),
    RequestKind.HSDIR_FETCH: (
        (_C.EXTEND2, _OUT),
        (_C.EXTENDED, _IN),
        (_C.BEGIN_DIR, _OUT),
        (_C.DATA, _OUT),
        (_C.CONNECTED, _IN),
        (_C.DATA, _IN),
    )
    + ((_C.DATA, _IN),) * HSDIR_BULK_DATA_CELLS
    + ((_C.END, _IN),),
    RequestKind.INTRO_HANDSHAKE: (
        (_C.EXTEND2, _OUT),
        (_C.EXTENDED, _IN),
        (_C.INTRODUCE1, _OUT),
        (_C.INTRO_ACK, _IN),
    ),
    RequestKind.REND_HANDSHAKE: (
        (_C.ESTABLISH_REND, _OUT),
        (_C.REND_ESTABLISHED, _IN),
        (_C.REND2, _IN),
    ),
}

# Two-hop circuit construction as observed on the wire: two extend/extended
# exchanges.  Used for directory/introduction circuits and for preemptive
# circuits before they are assigned a role.
TWO_HOP_SETUP: tuple[tuple[RelayCommand, CellDirection], ...] = (
    (_C.EXTEND2, _OUT),
    (_C.EXTENDED, _IN),
    (_C.EXTEND2, _OUT),
    (_C.EXTENDED, _IN),
)


def render_pattern(
    layout: Sequence[tuple[RelayCommand, CellDirection]],
    base_time: float,
    rtt: float,
    *,
    is_padding: bool = False,
    spacing: float | None = None,
) -> tuple[Cell, ...]:
    """Timestamp a command/direction layout starting at base_time.

    With the default request-reply timing, an incoming cell directly after an
    outgoing one arrives rtt later, and consecutive incoming cells are spaced
    by the intra-reply gap.  When `spacing` is given, all cells are instead
    laid out at that fixed step from base_time (0 renders an atomic burst).
    """
    cells = []
    if spacing is not None:
        for i, (cmd, direction) in enumerate(layout):
            cells.append(Cell(base_time + i * spacing, direction, cmd, is_padding))
        return tuple(cells)
    now = base_time
    prev_dir = None
    for cmd, direction in layout:
        if direction is _IN:
            now += rtt if prev_dir is not _IN else INTRA_REPLY_GAP
        cells.append(Cell(now, direction, cmd, is_padding))
        prev_dir = direction
    return tuple(cells)


def circuit_handshake(
    kind: HandshakeKind, base_time: float, rtt: float
) -> tuple[Cell, ...]:
    """The relay-cell sequence a circuit emits before application traffic.

    Exit circuits use 6 cells, rendezvous circuits 9; each outgoing cell's
    reply arrives one rtt later and times start at base_time.
    """
    if rtt <= 0:
        raise ValueError("rtt must be positive")
    return render_pattern(_PATTERNS[kind], base_time, rtt)


def request_pattern(
    kind: RequestKind,
    base_time: float,
    rtt: float,
    *,
    is_padding: bool,
    spacing: float | None = None,
) -> tuple[Cell, ...]:
    """A directory fetch, introduction or rendezvous request pattern.

    The same layout serves real requests and machine-injected dummies, so
    the two are indistinguishable in shape by construction.
    """
    if rtt <= 0:
        raise ValueError("rtt must be positive")
    return render_pattern(
        _PATTERNS[kind], base_time, rtt, is_padding=is_padding, spacing=spacing
    )


def dummy_request(kind: RequestKind, base_time: float, rtt: float) -> tuple[Cell, ...]:
    """A padding-generated request pattern; every cell is flagged as padding."""
    return request_pattern(kind, base_time, rtt, is_padding=True)


def two_hop_setup(
    base_time: float, rtt: float, *, is_padding: bool = False
) -> tuple[Cell, ...]:
    return render_pattern(TWO_HOP_SETUP, base_time, rtt, is_padding=is_padding)


def inject_cells(trace: CircuitTrace, cells: Iterable[Cell]) -> CircuitTrace:
    """Merge extra cells into a trace, re-sorting stably by time.

    Existing cells keep their exact time values (padding never delays real
    traffic); injected cells may not precede the circuit's creation.
    """
    extra = list(cells)
    if not extra:
        return trace
    for c in extra:
        if c.time < trace.created_at:
            raise ValueError(
                f"cell at t={c.time} precedes circuit creation ({trace.created_at})"
            )
    merged = sorted(
        list(trace.cells) + extra, key=lambda c: c.time
    )  # sorted() is stable: ties keep insertion order
    closed = max(trace.closed_at, merged[-1].time)
    return replace(trace, cells=tuple(merged), closed_at=closed)


# --- trace file format -------------------------------------------------------
#
# Ground-truth view, one JSON record per cell:
#   {run_id, session_id, circuit_id, purpose, t, dir, cmd, pad}
# Field order is fixed, dir is "+1"/"-1", pad is 0/1, UTF-8, LF endings.


def cell_record(
    run_id: str, session_id: str, circuit: CircuitTrace, cell: Cell
) -> str:
    rec = {
        "run_id": run_id,
        "session_id": session_id,
        "circuit_id": circuit.circuit_id,
        "purpose": circuit.purpose.value,
        "t": cell.time,
        "dir": "+1" if cell.direction is _IN else "-1",
        "cmd": cell.command.value,
        "pad": 1 if cell.is_padding else 0,
    }
    return json.dumps(rec, separators=(", ", ": "))


def write_circuit(
    fh: TextIO, run_id: str, session_id: str, circuit: CircuitTrace
) -> None:
    for cell in circuit.cells:
        fh.write(cell_record(run_id, session_id, circuit, cell))
        fh.write("\n")


def parse_cell_record(line: str) -> dict:
    rec = json.loads(line)
    rec["dir"] = CellDirection.INCOMING if rec["dir"] == "+1" else CellDirection.OUTGOING
    rec["cmd"] = RelayCommand(rec["cmd"])
    rec["purpose"] = CircuitPurpose(rec["purpose"])
    return rec
