"""The three padding defenses as transformations over vanilla sessions.

All defenses honour a common output contract: they may add circuits and
padding cells, but a circuit's real traffic keeps its exact content.  Only
the high-latency strawman is allowed to shift real cells later in time; the
in-framework defenses never delay real traffic.

* ``prop999``: reshapes introduction circuits toward the directory-fetch
  pattern, pads the rendezvous handshake toward the exit shape as far as
  cell addition permits, and extends both circuits' lifetimes to exit-like
  draws.  A faithful-shape reimplementation driven by padding machines.
* ``strawman``: on each clearnet connection, runs a fake directory fetch and
  a fake introduction on two extra two-hop circuits, injects one dummy
  rendezvous handshake into the exit circuit before the application data,
  and delays the real traffic by the dummy round-trip time.
* ``pcp`` (preemptive circuit padding): builds a triplet of two-hop
  preemptive circuits before the connection exists and repeats synchronized
  dummy request triplets on them at exponential rate lambda_d = phi *
  lambda_u until the connection arrives, then carries the real traffic on
  the same circuits with zero added delay.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .cells import (
    Cell,
    CellDirection,
    CircuitPurpose,
    CircuitTrace,
    INTRA_REPLY_GAP,
    RelayCommand,
    RequestKind,
    request_pattern,
    two_hop_setup,
)
from .machines import (
    DelayDistribution,
    MachineEvent,
    MachineSpec,
    MachineStateSpec,
    run_machine,
)
from .traffic import ConnectionType, SessionTrace, session_rng


class StrategyKind(enum.Enum):
    PROP999 = "prop999"
    STRAWMAN = "strawman"
    PCP = "pcp"


@dataclass(frozen=True)
class StrategyConfig:
    kind: StrategyKind = StrategyKind.PCP
    phi: float = 1.0  # dummy-rate to user-rate ratio lambda_d / lambda_u
    lambda_u_estimate: float = 4.0
    prop999_lifetime: DelayDistribution = DelayDistribution.uniform(600.0, 660.0)
    rtt: float = 0.05

    def __post_init__(self) -> None:
        if self.phi < 0:
            raise ValueError("phi must be >= 0")
        if self.lambda_u_estimate <= 0:
            raise ValueError("lambda_u_estimate must be > 0")
        if self.rtt <= 0:
            raise ValueError("rtt must be > 0")

    @property
    def lambda_d(self) -> float:
        return self.phi * self.lambda_u_estimate


@dataclass(frozen=True)
class PaddedSession:
    """A defended session: final circuit set plus defense ground truth."""

    base: SessionTrace
    circuits: tuple[CircuitTrace, ...]
    added_circuits: tuple[CircuitTrace, ...]
    dummy_triplet_count: int = 0
    delay_added: float = 0.0
    arrival_time: float = 0.0

    def __post_init__(self) -> None:
        if self.dummy_triplet_count < 0:
            raise ValueError("dummy triplet count must be >= 0")

    @property
    def connection_type(self) -> ConnectionType:
        return self.base.connection_type

    @property
    def site_id(self) -> str:
        return self.base.site_id

    @property
    def session_id(self) -> str:
        return self.base.session_id

    @property
    def think_time(self) -> float:
        return self.base.think_time


def _passthrough(session: SessionTrace) -> PaddedSession:
    return PaddedSession(
        base=session,
        circuits=session.circuits,
        added_circuits=(),
        dummy_triplet_count=0,
        delay_added=0.0,
        arrival_time=session.arrival_time,
    )


def _circuit(session: SessionTrace, purpose: CircuitPurpose) -> CircuitTrace:
    for c in session.circuits:
        if c.purpose is purpose:
            return c
    raise ValueError(f"session {session.session_id} has no {purpose.value} circuit")


def _shift(cells: tuple[Cell, ...], offset: float) -> tuple[Cell, ...]:
    if offset == 0.0:
        return cells
    return tuple(Cell(c.time + offset, c.direction, c.command, c.is_padding) for c in cells)


def _rebase(
    cells: tuple[Cell, ...], new_anchor: float, old_anchor: float
) -> tuple[Cell, ...]:
    """Re-anchor cells so each keeps its exact offset from the anchor."""
    return tuple(
        Cell(new_anchor + (c.time - old_anchor), c.direction, c.command, c.is_padding)
        for c in cells
    )


# --- prop999 ------------------------------------------------------------------

# Incoming padding mimicking the tail of a directory fetch (the reply burst
# a real descriptor download would produce), appended to introduction
# circuits to grow them to directory-fetch size.
_INTRO_SHAPING_TAIL = tuple(
    Cell(i * INTRA_REPLY_GAP, CellDirection.INCOMING, RelayCommand.DATA, True)
    for i in range(33)
)

# Minimal handshake-region padding attempt on rendezvous circuits.  The
# rendezvous handshake is longer than the exit one, so no amount of added
# cells can unify the two shapes; the attempt pads anyway.
_REND_SHAPING_PAIR = (
    Cell(0.0, CellDirection.OUTGOING, RelayCommand.DATA, True),
    Cell(INTRA_REPLY_GAP, CellDirection.INCOMING, RelayCommand.DATA, True),
)


@lru_cache(maxsize=64)
def intro_shaping_machine(rtt: float, lifetime: DelayDistribution) -> MachineSpec:
    """Three-state machine: wait for the handshake, pad, then linger."""
    return MachineSpec(
        name="prop999-intro",
        states=(
            MachineStateSpec("idle"),
            MachineStateSpec(
                "shape",
                pattern=_INTRO_SHAPING_TAIL,
                delay=DelayDistribution.fixed(4 * rtt + INTRA_REPLY_GAP),
            ),
            MachineStateSpec("linger", delay=lifetime, closes_circuit=True),
        ),
        transitions={
            ("idle", MachineEvent.CIRCUIT_CREATED): "shape",
            ("shape", MachineEvent.TIMER_FIRED): "linger",
        },
        start_state="idle",
        applies_to=(CircuitPurpose.INTRO,),
    )


@lru_cache(maxsize=64)
def rend_shaping_machine(rtt: float, lifetime: DelayDistribution) -> MachineSpec:
    return MachineSpec(
        name="prop999-rend",
        states=(
            MachineStateSpec("idle"),
            MachineStateSpec(
                "shape",
                pattern=_REND_SHAPING_PAIR,
                delay=DelayDistribution.fixed(2 * rtt + INTRA_REPLY_GAP),
            ),
            MachineStateSpec("linger", delay=lifetime, closes_circuit=True),
        ),
        transitions={
            ("idle", MachineEvent.CIRCUIT_CREATED): "shape",
            ("shape", MachineEvent.TIMER_FIRED): "linger",
        },
        start_state="idle",
        applies_to=(CircuitPurpose.REND,),
    )


_NEVER = 1e9  # far-future close while the machine holds the circuit open


def apply_prop999(
    session: SessionTrace, config: StrategyConfig, rng: np.random.Generator
) -> PaddedSession:
    """Handshake-shaping and lifetime extension on onion circuits only.

    The natural close-after-use of intro/rend circuits is suppressed; the
    shaping machine keeps each circuit open and closes it at the sampled
    exit-like lifetime.
    """
    if session.connection_type is ConnectionType.CLEARNET:
        return _passthrough(session)
    intro_machine = intro_shaping_machine(config.rtt, config.prop999_lifetime)
    rend_machine = rend_shaping_machine(config.rtt, config.prop999_lifetime)
    out = []
    for circ in session.circuits:
        if circ.purpose is CircuitPurpose.INTRO:
            machine = intro_machine
        elif circ.purpose is CircuitPurpose.REND:
            machine = rend_machine
        else:
            out.append(circ)
            continue
        held_open = replace(circ, closed_at=circ.created_at + _NEVER)
        out.append(run_machine(machine, held_open, circ.created_at + _NEVER, rng))
    return PaddedSession(
        base=session,
        circuits=tuple(out),
        added_circuits=(),
        dummy_triplet_count=0,
        delay_added=0.0,
        arrival_time=session.arrival_time,
    )


# --- strawman -----------------------------------------------------------------


def apply_strawman(
    session: SessionTrace, config: StrategyConfig, rng: np.random.Generator
) -> PaddedSession:
    """One dummy triplet per clearnet connection, delaying the real traffic.

    Two fresh two-hop circuits carry a fake directory fetch and a fake
    introduction; the exit circuit is then built and a dummy rendezvous
    handshake is injected after its construction, before the stream opens.
    All real cells from the stream open onward shift later by the time the
    dummy requests consume.  Onion traffic is not modified at all.
    """
    if session.connection_type is ConnectionType.ONION:
        return _passthrough(session)
    rtt = config.rtt
    arrival = session.arrival_time
    sid = session.session_id

    fake_setup = two_hop_setup(arrival, rtt, is_padding=True)
    fake_hsdir_cells = fake_setup + request_pattern(
        RequestKind.HSDIR_FETCH, fake_setup[-1].time, rtt, is_padding=True
    )
    fake_intro_cells = fake_setup + request_pattern(
        RequestKind.INTRO_HANDSHAKE, fake_setup[-1].time, rtt, is_padding=True
    )
    fakes_done = max(fake_hsdir_cells[-1].time, fake_intro_cells[-1].time)
    fake_hsdir = CircuitTrace(
        circuit_id=f"{sid}-fakehsdir",
        purpose=CircuitPurpose.FAKE_HSDIR,
        cells=fake_hsdir_cells,
        created_at=arrival,
        closed_at=fake_hsdir_cells[-1].time,
    )
    fake_intro = CircuitTrace(
        circuit_id=f"{sid}-fakeintro",
        purpose=CircuitPurpose.FAKE_INTRO,
        cells=fake_intro_cells,
        created_at=arrival,
        closed_at=fake_intro_cells[-1].time,
    )

    exit_circ = _circuit(session, CircuitPurpose.EXIT)
    setup, tail = exit_circ.cells[:4], exit_circ.cells[4:]
    # The exit circuit waits for the fake requests, then its construction
    # replays at the original pace.
    start_shift = fakes_done - arrival
    setup = _shift(setup, start_shift)
    dummy_rend = request_pattern(
        RequestKind.REND_HANDSHAKE, setup[-1].time, rtt, is_padding=True
    )
    # Real traffic resumes at the dummy handshake's final cell, exactly as
    # the stream open rides the last handshake reply on a rendezvous
    # circuit; rebasing on that instant keeps the two shapes' timing equal.
    resume = dummy_rend[-1].time
    tail0 = tail[0].time
    tail = tuple(
        Cell(resume + (c.time - tail0), c.direction, c.command, c.is_padding)
        for c in tail
    )
    delay_added = resume - tail0
    padded_exit = CircuitTrace(
        circuit_id=exit_circ.circuit_id,
        purpose=CircuitPurpose.PADDED_EXIT,
        cells=setup + dummy_rend + tail,
        created_at=setup[0].time,
        closed_at=exit_circ.closed_at + delay_added,
    )
    return PaddedSession(
        base=session,
        circuits=(fake_hsdir, fake_intro, padded_exit),
        added_circuits=(fake_hsdir, fake_intro),
        dummy_triplet_count=1,
        delay_added=delay_added,
        arrival_time=arrival,
    )


# --- pcp ----------------------------------------------------------------------

_ROLE_PATTERN = {
    CircuitPurpose.HSDIR: RequestKind.HSDIR_FETCH,
    CircuitPurpose.INTRO: RequestKind.INTRO_HANDSHAKE,
    CircuitPurpose.REND: RequestKind.REND_HANDSHAKE,
}


@lru_cache(maxsize=64)
def preemptive_machine(role_pattern: RequestKind, lambda_d: float) -> MachineSpec:
    """Repeat one dummy request at exponential rate once the circuit is built.

    The machine arms after the second extend completes (two received cells),
    so the dummy stream runs exactly over the idle window between circuit
    construction and connection arrival.  Patterns are emitted as atomic
    bursts: the firing instant carries the whole request, which keeps
    distinct requests from interleaving at any rate.
    """
    return MachineSpec(
        name=f"pcp-{role_pattern.value}",
        states=(
            MachineStateSpec("building"),
            MachineStateSpec("half_built"),
            MachineStateSpec(
                "burst",
                pattern=role_pattern,
                delay=DelayDistribution.exponential(lambda_d),
                repeat=True,
                pattern_spacing=0.0,
            ),
            MachineStateSpec("done"),
        ),
        transitions={
            ("building", MachineEvent.REAL_CELL_RECEIVED): "half_built",
            ("half_built", MachineEvent.REAL_CELL_RECEIVED): "burst",
            ("burst", MachineEvent.CONNECTION_ARRIVED): "done",
        },
        start_state="building",
        applies_to=(CircuitPurpose.PREEMPTIVE,),
    )


def build_preemptive_triplet(
    session_id: str, rtt: float
) -> tuple[CircuitTrace, CircuitTrace, CircuitTrace]:
    """Three dormant two-hop circuits built at time zero, one per role.

    Dormant circuits stay open until a connection assigns them a role, so
    their close time is a far-future sentinel until then.
    """
    out = []
    for role in ("hsdir", "intro", "rend"):
        cells = two_hop_setup(0.0, rtt, is_padding=True)
        out.append(
            CircuitTrace(
                circuit_id=f"{session_id}-pre-{role}",
                purpose=CircuitPurpose.PREEMPTIVE,
                cells=cells,
                created_at=0.0,
                closed_at=_NEVER,
            )
        )
    return tuple(out)


def _pattern_count(circ: CircuitTrace, kind: RequestKind) -> int:
    sizes = {
        RequestKind.HSDIR_FETCH: 37,
        RequestKind.INTRO_HANDSHAKE: 4,
        RequestKind.REND_HANDSHAKE: 3,
    }
    n_pad = sum(1 for c in circ.cells if c.is_padding) - 4  # minus setup
    return n_pad // sizes[kind]


def apply_pcp(
    session: SessionTrace, config: StrategyConfig, rng: np.random.Generator
) -> PaddedSession:
    """Preemptive circuit padding; never delays real traffic.

    A preemptive triplet is created when the previous one is used, so the
    session's think time is exactly the idle window the dummy stream covers.
    Dummy triplets fire synchronously on the three role circuits (the
    machines share one random stream).  On arrival the role circuits carry
    the real requests and application data at the same offsets from arrival
    as the vanilla session.
    """
    rtt = config.rtt
    base_arrival = session.arrival_time
    # Role circuits are built preemptively at t=0; the connection arrives one
    # think time after they are ready.
    arrival = 2 * rtt + session.think_time
    roles = build_preemptive_triplet(session.session_id, rtt)

    # One shared stream state: the three role machines replay identical
    # exponential draws, so dummy triplets fire synchronously across roles.
    shared = np.random.PCG64(int(rng.integers(0, 2**63 - 1)))
    shared_state = shared.state
    padded_roles = []
    for role_purpose, circ in zip(
        (CircuitPurpose.HSDIR, CircuitPurpose.INTRO, CircuitPurpose.REND), roles
    ):
        if config.lambda_d <= 0:
            padded_roles.append(circ)
            continue
        machine = preemptive_machine(_ROLE_PATTERN[role_purpose], config.lambda_d)
        bitgen = np.random.PCG64()
        bitgen.state = shared_state
        padded_roles.append(run_machine(machine, circ, arrival, np.random.Generator(bitgen)))
    hsdir_role, intro_role, rend_role = padded_roles
    d_count = _pattern_count(rend_role, RequestKind.REND_HANDSHAKE)

    shift = arrival - base_arrival  # maps vanilla close times onto this timeline
    circuits: list[CircuitTrace] = []
    added: list[CircuitTrace] = []
    if session.connection_type is ConnectionType.CLEARNET:
        exit_circ = _circuit(session, CircuitPurpose.EXIT)
        # Real cells keep their exact offsets from connection arrival.
        real_tail = _rebase(exit_circ.cells[4:], arrival, base_arrival)
        cells = rend_role.cells + real_tail
        padded_exit = CircuitTrace(
            circuit_id=f"{session.session_id}-exit",
            purpose=CircuitPurpose.PADDED_EXIT,
            cells=cells,
            created_at=0.0,
            closed_at=max(exit_circ.closed_at + shift, cells[-1].time),
        )
        fake_hsdir = replace(
            hsdir_role,
            circuit_id=f"{session.session_id}-fakehsdir",
            purpose=CircuitPurpose.FAKE_HSDIR,
            closed_at=max(arrival, hsdir_role.cells[-1].time),
        )
        fake_intro = replace(
            intro_role,
            circuit_id=f"{session.session_id}-fakeintro",
            purpose=CircuitPurpose.FAKE_INTRO,
            closed_at=max(arrival, intro_role.cells[-1].time),
        )
        circuits = [fake_hsdir, fake_intro, padded_exit]
        added = [fake_hsdir, fake_intro]
    else:
        for role_circ, purpose, vanilla_purpose in (
            (hsdir_role, CircuitPurpose.HSDIR, CircuitPurpose.HSDIR),
            (intro_role, CircuitPurpose.INTRO, CircuitPurpose.INTRO),
            (rend_role, CircuitPurpose.REND, CircuitPurpose.REND),
        ):
            vanilla = _circuit(session, vanilla_purpose)
            real_tail = _rebase(vanilla.cells[4:], arrival, base_arrival)
            cells = role_circ.cells + real_tail
            circuits.append(
                CircuitTrace(
                    circuit_id=vanilla.circuit_id,
                    purpose=purpose,
                    cells=cells,
                    created_at=0.0,
                    closed_at=max(vanilla.closed_at + shift, cells[-1].time),
                )
            )
    return PaddedSession(
        base=session,
        circuits=tuple(circuits),
        added_circuits=tuple(added),
        dummy_triplet_count=d_count,
        delay_added=0.0,
        arrival_time=arrival,
    )


# --- estimator-style wrappers -------------------------------------------------

_APPLY = {
    StrategyKind.PROP999: apply_prop999,
    StrategyKind.STRAWMAN: apply_strawman,
    StrategyKind.PCP: apply_pcp,
}


def apply_strategy(
    session: SessionTrace, config: StrategyConfig, rng: np.random.Generator
) -> PaddedSession:
    return _APPLY[config.kind](session, config, rng)


class PaddingDefense:
    """sklearn-style transformer applying one defense over session datasets.

    Stateless: ``fit`` only validates parameters.  ``transform`` maps each
    session through the defense with an independently derived random
    substream, so results do not depend on batching or ordering.
    """

    def __init__(
        self,
        kind: str = "pcp",
        phi: float = 1.0,
        lambda_u_estimate: float = 4.0,
        rtt: float = 0.05,
        prop999_lifetime: DelayDistribution = DelayDistribution.uniform(600.0, 660.0),
        seed: int = 0,
    ):
        self.kind = kind
        self.phi = phi
        self.lambda_u_estimate = lambda_u_estimate
        self.rtt = rtt
        self.prop999_lifetime = prop999_lifetime
        self.seed = seed

    def _config(self) -> StrategyConfig:
        return StrategyConfig(
            kind=StrategyKind(self.kind),
            phi=self.phi,
            lambda_u_estimate=self.lambda_u_estimate,
            prop999_lifetime=self.prop999_lifetime,
            rtt=self.rtt,
        )

    def get_params(self, deep: bool = True) -> dict:
        return {
            "kind": self.kind,
            "phi": self.phi,
            "lambda_u_estimate": self.lambda_u_estimate,
            "rtt": self.rtt,
            "prop999_lifetime": self.prop999_lifetime,
            "seed": self.seed,
        }

    def set_params(self, **params) -> "PaddingDefense":
        for k, v in params.items():
            if not hasattr(self, k):
                raise ValueError(f"unknown parameter {k!r}")
            setattr(self, k, v)
        return self

    def fit(self, X=None, y=None) -> "PaddingDefense":
        self._config()  # validates
        return self

    def transform_one(self, session: SessionTrace, index: int = 0) -> PaddedSession:
        rng = session_rng(self.seed, index, lane=1)
        return apply_strategy(session, self._config(), rng)

    def transform(self, sessions) -> list[PaddedSession]:
        return [self.transform_one(s, i) for i, s in enumerate(sessions)]


class RateEstimator:
    """Exponential moving average of the user's connection rate.

    Optional online replacement for a configured lambda_u estimate; disabled
    by default in all strategies.
    """

    def __init__(self, alpha: float = 0.2, initial_rate: float = 4.0):
        if not 0 < alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        self.alpha = alpha
        self.mean_gap = 1.0 / initial_rate

    def observe(self, think_time: float) -> None:
        if think_time <= 0:
            return
        self.mean_gap = (1 - self.alpha) * self.mean_gap + self.alpha * think_time

    @property
    def rate(self) -> float:
        return 1.0 / self.mean_gap
