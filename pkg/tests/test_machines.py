import numpy as np
import pytest

from circuitpad.cells import (
    CircuitPurpose,
    CircuitTrace,
    RequestKind,
    circuit_handshake,
    HandshakeKind,
)
from circuitpad.machines import (
    DelayDistribution,
    MachineEvent,
    MachineSpec,
    MachineState,
    MachineStateSpec,
    run_machine,
    step,
)


def bare_circuit(purpose=CircuitPurpose.INTRO, base=0.0, rtt=0.05, far_close=False):
    cells = circuit_handshake(HandshakeKind.EXIT_CIRCUIT, base, rtt)[:4]
    closed = base + 1e9 if far_close else cells[-1].time
    return CircuitTrace("m0", purpose, cells, base, closed)


def repeat_machine(rate, pattern=RequestKind.REND_HANDSHAKE):
    return MachineSpec(
        states=(
            MachineStateSpec("idle"),
            MachineStateSpec(
                "pad",
                pattern=pattern,
                delay=DelayDistribution.exponential(rate),
                repeat=True,
            ),
        ),
        transitions={("idle", MachineEvent.CIRCUIT_CREATED): "pad"},
        start_state="idle",
    )


def test_delay_distribution_validation():
    with pytest.raises(ValueError):
        DelayDistribution.exponential(0.0)
    with pytest.raises(ValueError):
        DelayDistribution.uniform(2.0, 1.0)
    with pytest.raises(ValueError):
        DelayDistribution.fixed(-1.0)
    with pytest.raises(ValueError):
        DelayDistribution(kind="weird")


def test_delay_samples_respect_support():
    rng = np.random.default_rng(0)
    assert DelayDistribution.fixed(2.5).sample(rng) == 2.5
    u = DelayDistribution.uniform(1.0, 2.0)
    assert all(1.0 <= u.sample(rng) <= 2.0 for _ in range(100))
    e = DelayDistribution.exponential(4.0)
    assert all(e.sample(rng) >= 0.0 for _ in range(100))


def test_undefined_transition_is_noop():
    spec = repeat_machine(1.0)
    state = MachineState(current="idle")
    out, cells = step(spec, state, MachineEvent.CONNECTION_ARRIVED, 1.0, np.random.default_rng(0))
    assert out == state
    assert cells == ()


def test_timer_emits_pattern_at_now():
    spec = repeat_machine(1.0)
    rng = np.random.default_rng(0)
    state, _ = step(
        spec, MachineState(current="idle"), MachineEvent.CIRCUIT_CREATED, 0.0, rng
    )
    assert state.current == "pad"
    assert state.pending_timer is not None
    state, cells = step(spec, state, MachineEvent.TIMER_FIRED, 3.0, rng)
    assert len(cells) == 3
    assert all(c.is_padding for c in cells)
    assert cells[0].time == 3.0
    assert [int(c.direction) for c in cells] == [-1, 1, 1]


def test_repeat_rearms_with_exponential_delay():
    rate = 4.0
    spec = repeat_machine(rate)
    rng = np.random.default_rng(1)
    state, _ = step(
        spec, MachineState(current="idle"), MachineEvent.CIRCUIT_CREATED, 0.0, rng
    )
    gaps = []
    now = 0.0
    for _ in range(100_000):
        now = state.pending_timer
        state, _ = step(spec, state, MachineEvent.TIMER_FIRED, now, rng)
        gaps.append(state.pending_timer - now)
    mean = float(np.mean(gaps))
    assert mean == pytest.approx(1.0 / rate, rel=0.02)


def test_empty_spec_is_identity():
    spec = MachineSpec(states=(), transitions={}, start_state="none")
    trace = bare_circuit()
    assert run_machine(spec, trace, 100.0, np.random.default_rng(0)) == trace


def test_run_machine_deterministic():
    spec = repeat_machine(5.0)
    trace = bare_circuit(far_close=True)
    a = run_machine(spec, trace, 4.0, np.random.default_rng(9))
    b = run_machine(spec, trace, 4.0, np.random.default_rng(9))
    assert a == b
    assert len(a.cells) > len(trace.cells)


def test_run_machine_non_interference():
    spec = repeat_machine(10.0)
    trace = bare_circuit(far_close=True)
    out = run_machine(spec, trace, 3.0, np.random.default_rng(3))
    real = tuple(c for c in out.cells if not c.is_padding)
    assert real == trace.cells


def test_run_machine_stops_at_stop_time():
    spec = repeat_machine(10.0)
    trace = bare_circuit(far_close=True)
    out = run_machine(spec, trace, 2.0, np.random.default_rng(3))
    assert all(c.time <= 2.0 for c in out.cells)


def test_emission_rate_matches_expectation():
    # Expected patterns over a window equal rate x duration; the mean over
    # many runs must land within 3%.
    rate, stop = 5.0, 2.0
    spec = repeat_machine(rate)
    counts = []
    for i in range(10_000):
        trace = bare_circuit(far_close=True)
        out = run_machine(spec, trace, stop, np.random.default_rng(1000 + i))
        counts.append(sum(1 for c in out.cells if c.is_padding) / 3)
    expected = rate * stop  # machine arms at circuit creation time 0.0
    assert np.mean(counts) == pytest.approx(expected, rel=0.03)


def test_closing_state_sets_lifetime():
    lifetime = DelayDistribution.uniform(600.0, 660.0)
    spec = MachineSpec(
        states=(
            MachineStateSpec("idle"),
            MachineStateSpec("linger", delay=lifetime, closes_circuit=True),
        ),
        transitions={("idle", MachineEvent.CIRCUIT_CREATED): "linger"},
        start_state="idle",
    )
    trace = bare_circuit(far_close=True)
    out = run_machine(spec, trace, 1e9, np.random.default_rng(11))
    # replay the single uniform draw the machine consumed
    expected = trace.created_at + lifetime.sample(np.random.default_rng(11))
    assert out.closed_at == expected


def test_spec_validation():
    with pytest.raises(ValueError):
        MachineSpec(
            states=(MachineStateSpec("a"),),
            transitions={},
            start_state="missing",
        )
    with pytest.raises(ValueError):
        MachineSpec(
            states=(MachineStateSpec("a"),),
            transitions={("a", MachineEvent.TIMER_FIRED): "ghost"},
            start_state="a",
        )


def test_machine_spec_config_roundtrip():
    spec = repeat_machine(2.5)
    cfg = spec.to_config()
    back = MachineSpec.from_config(cfg)
    assert back.start_state == spec.start_state
    assert back.transitions == spec.transitions
    assert [s.state_id for s in back.states] == [s.state_id for s in spec.states]
    assert back.state("pad").delay == spec.state("pad").delay
    assert back.state("pad").pattern is RequestKind.REND_HANDSHAKE


def test_pending_timer_never_in_past():
    spec = repeat_machine(3.0)
    rng = np.random.default_rng(2)
    state, _ = step(
        spec, MachineState(current="idle"), MachineEvent.CIRCUIT_CREATED, 5.0, rng
    )
    assert state.pending_timer >= 5.0
