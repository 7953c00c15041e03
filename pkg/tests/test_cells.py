import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from circuitpad.cells import (
    Cell,
    CellDirection,
    CircuitPurpose,
    CircuitTrace,
    HandshakeKind,
    RelayCommand,
    RequestKind,
    cell_record,
    circuit_handshake,
    dummy_request,
    inject_cells,
    parse_cell_record,
    request_pattern,
    two_hop_setup,
)


def dirs(cells):
    return "".join("-" if c.direction < 0 else "+" for c in cells)


def test_exit_handshake_shape():
    cells = circuit_handshake(HandshakeKind.EXIT_CIRCUIT, 0.0, 0.1)
    assert len(cells) == 6
    assert dirs(cells) == "-+-+-+"
    assert [c.command for c in cells] == [
        RelayCommand.EXTEND2,
        RelayCommand.EXTENDED,
        RelayCommand.EXTEND2,
        RelayCommand.EXTENDED,
        RelayCommand.BEGIN,
        RelayCommand.CONNECTED,
    ]
    assert not any(c.is_padding for c in cells)


def test_rend_handshake_shape():
    cells = circuit_handshake(HandshakeKind.REND_CIRCUIT, 0.0, 0.1)
    assert len(cells) == 9
    assert dirs(cells) == "-+-+-++-+"
    assert cells[4].command == RelayCommand.ESTABLISH_REND
    assert cells[6].command == RelayCommand.REND2


def test_handshake_times_scale_with_rtt():
    cells = circuit_handshake(HandshakeKind.EXIT_CIRCUIT, 5.0, 0.2)
    assert cells[0].time == 5.0
    assert cells[-1].time == pytest.approx(5.0 + 3 * 0.2)


@pytest.mark.parametrize(
    "kind,total,outgoing",
    [
        (RequestKind.HSDIR_FETCH, 37, 3),
        (RequestKind.INTRO_HANDSHAKE, 4, 2),
        (RequestKind.REND_HANDSHAKE, 3, 1),
    ],
)
def test_dummy_request_counts(kind, total, outgoing):
    cells = dummy_request(kind, 0.0, 0.1)
    assert len(cells) == total
    assert sum(1 for c in cells if c.direction < 0) == outgoing
    assert all(c.is_padding for c in cells)


def test_dummy_rend_directions_and_start():
    cells = dummy_request(RequestKind.REND_HANDSHAKE, 2.0, 0.1)
    assert dirs(cells) == "-++"
    assert cells[0].time == 2.0


@settings(max_examples=50)
@given(
    base=st.floats(min_value=0.0, max_value=1e5),
    rtt=st.floats(min_value=1e-4, max_value=2.0),
)
def test_pattern_cardinalities_for_all_timings(base, rtt):
    assert len(dummy_request(RequestKind.HSDIR_FETCH, base, rtt)) == 37
    assert len(dummy_request(RequestKind.INTRO_HANDSHAKE, base, rtt)) == 4
    assert len(dummy_request(RequestKind.REND_HANDSHAKE, base, rtt)) == 3
    assert len(circuit_handshake(HandshakeKind.EXIT_CIRCUIT, base, rtt)) == 6
    assert len(circuit_handshake(HandshakeKind.REND_CIRCUIT, base, rtt)) == 9


def test_dummy_matches_real_request_exactly():
    for kind in RequestKind:
        real = request_pattern(kind, 1.5, 0.07, is_padding=False)
        fake = request_pattern(kind, 1.5, 0.07, is_padding=True)
        assert [(c.time, c.direction) for c in real] == [
            (c.time, c.direction) for c in fake
        ]


def test_rend_cannot_be_reduced_to_exit_by_padding():
    # Padding only adds cells: a 9-cell handshake can never be turned into a
    # 6-cell one, while the exit order embeds into the rend order.
    exit_cmds = [c.command for c in circuit_handshake(HandshakeKind.EXIT_CIRCUIT, 0, 0.1)]
    rend_cmds = [c.command for c in circuit_handshake(HandshakeKind.REND_CIRCUIT, 0, 0.1)]
    assert len(rend_cmds) > len(exit_cmds)

    def embeds(short, long):
        it = iter(long)
        return all(x in it for x in short)

    assert embeds(exit_cmds, rend_cmds)  # exit + additions -> rend order
    assert not embeds(rend_cmds, exit_cmds)  # rend can never shrink to exit
    assert exit_cmds[:4] == rend_cmds[:4]


def make_trace(cells, created=0.0):
    cells = tuple(cells)
    closed = cells[-1].time if cells else created
    return CircuitTrace("c0", CircuitPurpose.EXIT, cells, created, closed)


def test_inject_empty_is_identity():
    trace = make_trace(circuit_handshake(HandshakeKind.EXIT_CIRCUIT, 0.0, 0.1))
    assert inject_cells(trace, []) is trace


def test_inject_preserves_existing_times():
    trace = make_trace(circuit_handshake(HandshakeKind.EXIT_CIRCUIT, 0.0, 0.1))
    extra = dummy_request(RequestKind.REND_HANDSHAKE, 0.05, 0.01)
    out = inject_cells(trace, extra)
    assert len(out.cells) == len(trace.cells) + 3
    original = [c for c in out.cells if not c.is_padding]
    assert original == list(trace.cells)


def test_inject_batches_equal_concatenation():
    trace = make_trace(circuit_handshake(HandshakeKind.EXIT_CIRCUIT, 0.0, 0.1))
    a = dummy_request(RequestKind.REND_HANDSHAKE, 0.02, 0.01)
    b = dummy_request(RequestKind.INTRO_HANDSHAKE, 0.21, 0.01)
    two_steps = inject_cells(inject_cells(trace, a), b)
    one_step = inject_cells(trace, a + b)
    assert two_steps == one_step


def test_inject_rejects_cells_before_creation():
    trace = make_trace(circuit_handshake(HandshakeKind.EXIT_CIRCUIT, 1.0, 0.1), created=1.0)
    bad = [Cell(0.5, CellDirection.OUTGOING, RelayCommand.DATA, True)]
    with pytest.raises(ValueError):
        inject_cells(trace, bad)


def test_trace_validation():
    good = circuit_handshake(HandshakeKind.EXIT_CIRCUIT, 0.0, 0.1)
    with pytest.raises(ValueError):
        CircuitTrace("x", CircuitPurpose.EXIT, tuple(reversed(good)), 0.0, 1.0)
    with pytest.raises(ValueError):
        CircuitTrace("x", CircuitPurpose.EXIT, good, 0.0, 0.0)  # closes early


def test_duration():
    cells = circuit_handshake(HandshakeKind.EXIT_CIRCUIT, 2.0, 0.1)
    trace = make_trace(cells, created=2.0)
    assert trace.duration == pytest.approx(0.3)
    single = make_trace(cells[:1], created=2.0)
    assert single.duration == 0.0


def test_two_hop_setup():
    cells = two_hop_setup(0.0, 0.1)
    assert dirs(cells) == "-+-+"
    assert [c.command for c in cells] == [
        RelayCommand.EXTEND2,
        RelayCommand.EXTENDED,
        RelayCommand.EXTEND2,
        RelayCommand.EXTENDED,
    ]


def test_cell_record_format_and_roundtrip():
    trace = make_trace(circuit_handshake(HandshakeKind.EXIT_CIRCUIT, 0.0, 0.1))
    line = cell_record("r1", "s1", trace, trace.cells[0])
    rec = json.loads(line)
    assert list(rec.keys()) == [
        "run_id", "session_id", "circuit_id", "purpose", "t", "dir", "cmd", "pad",
    ]
    assert rec["dir"] == "-1"
    assert rec["pad"] == 0
    parsed = parse_cell_record(line)
    assert parsed["cmd"] is RelayCommand.EXTEND2
    assert parsed["dir"] is CellDirection.OUTGOING
    assert parsed["t"] == trace.cells[0].time
