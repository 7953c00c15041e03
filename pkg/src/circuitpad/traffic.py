"""Vanilla (undefended) session generation.

A session is one user connection: a think time drawn from an exponential
distribution, a Bernoulli draw for the connection type, and the resulting
circuit set.  Clearnet sessions open a single exit circuit; onion sessions
open a directory (HSDir), an introduction and a rendezvous circuit, all
created at connection arrival.  Application traffic is a per-site template of
request/response cell bursts, identical across connection types unless the
asymmetric cell-packing mode is enabled.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .cells import (
    Cell,
    CellDirection,
    CircuitPurpose,
    CircuitTrace,
    HandshakeKind,
    INTRA_REPLY_GAP,
    RelayCommand,
    RequestKind,
    circuit_handshake,
    request_pattern,
    two_hop_setup,
)
from .machines import DelayDistribution

# Gap between one response burst ending and the next request burst.
INTER_BURST_GAP = 0.01

# Request/response spacing inside application traffic.  Constant across
# connection types so that identical-mode sequences match exactly.
_APP_RTT = 0.05


class ConnectionType(enum.Enum):
    CLEARNET = "Clearnet"
    ONION = "Onion"


class PackingMode(enum.Enum):
    IDENTICAL = "Identical"
    ASYMMETRIC = "Asymmetric"


@dataclass(frozen=True)
class UserModel:
    """Think-time rate and clearnet base rate of the simulated user."""

    lambda_u: float = 4.0  # connections/second
    clearnet_prob: float = 0.5  # base rate c

    def __post_init__(self) -> None:
        if self.lambda_u <= 0:
            raise ValueError("lambda_u must be > 0")
        if not 0.0 <= self.clearnet_prob <= 1.0:
            raise ValueError("clearnet_prob must be in [0, 1]")


@dataclass(frozen=True)
class SiteModel:
    """Traffic template of one destination site.

    `response_bursts` lists the incoming cell count of each response; every
    request burst is two outgoing cells.  `onion_cell_count` is the total
    application cell count under dense (onion-side) packing.  Clearnet
    packing in asymmetric mode inflates the total by a truncated-normal
    factor, which also raises its variance.
    """

    site_id: str
    response_bursts: tuple[int, ...]
    packing_inflation_mean: float = 1.15
    packing_inflation_sd: float = 0.08

    def __post_init__(self) -> None:
        if not self.response_bursts or any(r < 1 for r in self.response_bursts):
            raise ValueError("response bursts must be positive")
        if self.packing_inflation_mean < 1.0:
            raise ValueError("inflation mean must be >= 1")
        if self.packing_inflation_sd < 0.0:
            raise ValueError("inflation sd must be >= 0")

    @property
    def onion_cell_count(self) -> int:
        return sum(2 + r for r in self.response_bursts)


@dataclass(frozen=True)
class SessionTrace:
    """One user connection with its circuit set and ground-truth labels."""

    session_id: str
    connection_type: ConnectionType
    think_time: float
    circuits: tuple[CircuitTrace, ...]
    site_id: str

    def __post_init__(self) -> None:
        if self.think_time < 0:
            raise ValueError("think_time must be >= 0")

    @property
    def arrival_time(self) -> float:
        """Instant the user's connection request arrives."""
        return self.think_time


@dataclass(frozen=True)
class SimConfig:
    user: UserModel = UserModel()
    sites: tuple[SiteModel, ...] = ()
    rtt: float = 0.05
    n_sessions: int = 100
    packing_mode: PackingMode = PackingMode.IDENTICAL
    lifetime_exit: DelayDistribution = DelayDistribution.uniform(600.0, 660.0)
    # Rendezvous/intro/directory circuits close this long after their last
    # cell; exit circuits instead live for a lifetime_exit draw.
    linger_after_use: DelayDistribution = DelayDistribution.fixed(10.0)
    seed: int = 0
    # Optional latency-sensitive resource scheduling fingerprint: clearnet
    # response bursts are served in reversed order.  Off by default.
    scheduling_noise: bool = False

    def __post_init__(self) -> None:
        if self.n_sessions < 1:
            raise ValueError("n_sessions must be >= 1")
        if not self.sites:
            raise ValueError("sites must be non-empty")
        if self.rtt <= 0:
            raise ValueError("rtt must be > 0")


def make_sites(
    n: int,
    seed: int = 0,
    cell_count_range: tuple[int, int] = (24, 96),
    inflation_mean: float = 1.15,
    inflation_sd: float = 0.08,
) -> tuple[SiteModel, ...]:
    """Procedurally generate site traffic templates."""
    lo, hi = cell_count_range
    if lo < 6 or hi < lo:
        raise ValueError("cell count range must satisfy 6 <= lo <= hi")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x517E]))
    sites = []
    for i in range(n):
        target = int(rng.integers(lo, hi + 1))
        bursts = []
        remaining = target
        while remaining >= 6:
            resp = int(rng.integers(4, 15))
            resp = min(resp, remaining - 2)
            bursts.append(resp)
            remaining -= 2 + resp
        if not bursts:
            bursts = [max(1, target - 2)]
        sites.append(
            SiteModel(
                site_id=f"site{i:03d}",
                response_bursts=tuple(bursts),
                packing_inflation_mean=inflation_mean,
                packing_inflation_sd=inflation_sd,
            )
        )
    return tuple(sites)


def sample_think_time(user: UserModel, rng: np.random.Generator) -> float:
    """Exponential think time with rate lambda_u."""
    return float(rng.exponential(1.0 / user.lambda_u))


def _truncated_normal(
    rng: np.random.Generator, mean: float, sd: float, lower: float
) -> float:
    if sd == 0.0:
        return max(mean, lower)
    for _ in range(1000):
        g = rng.normal(mean, sd)
        if g >= lower:
            return float(g)
    return lower


def _inflated_bursts(
    site: SiteModel, g: float
) -> tuple[int, ...]:
    """Scale response bursts so the total hits round(onion_cell_count * g)."""
    target = int(round(site.onion_cell_count * g))
    base = site.onion_cell_count
    extra = max(0, target - base)
    bursts = list(site.response_bursts)
    i = 0
    while extra > 0:
        bursts[i % len(bursts)] += 1
        extra -= 1
        i += 1
    return tuple(bursts)


def app_traffic(
    site: SiteModel,
    conn: ConnectionType,
    mode: PackingMode,
    base_time: float,
    rng: np.random.Generator,
    scheduling_noise: bool = False,
) -> tuple[Cell, ...]:
    """Application cell bursts for one page fetch.

    Identical mode produces the same count and direction pattern for both
    connection types.  Asymmetric mode inflates the clearnet cell count by a
    truncated-normal factor (lower bound 1.0), modelling looser, higher
    variance packing at the exit node.
    """
    bursts = site.response_bursts
    if mode is PackingMode.ASYMMETRIC and conn is ConnectionType.CLEARNET:
        g = _truncated_normal(
            rng, site.packing_inflation_mean, site.packing_inflation_sd, 1.0
        )
        bursts = _inflated_bursts(site, g)
    if scheduling_noise and conn is ConnectionType.CLEARNET:
        bursts = tuple(reversed(bursts))
    cells = []
    now = base_time
    out = CellDirection.OUTGOING
    inc = CellDirection.INCOMING
    for resp in bursts:
        cells.append(Cell(now, out, RelayCommand.APP_DATA))
        now += INTRA_REPLY_GAP
        cells.append(Cell(now, out, RelayCommand.APP_DATA))
        now += _APP_RTT
        for _ in range(resp):
            cells.append(Cell(now, inc, RelayCommand.APP_DATA))
            now += INTRA_REPLY_GAP
        now += INTER_BURST_GAP
    return tuple(cells)


def _close_after(
    cells: tuple[Cell, ...], created_at: float, linger: DelayDistribution,
    rng: np.random.Generator,
) -> float:
    last = cells[-1].time if cells else created_at
    return last + linger.sample(rng)


def simulate_session(
    config: SimConfig,
    site: SiteModel,
    rng: np.random.Generator,
    session_id: str = "s0",
    force_type: ConnectionType | None = None,
) -> SessionTrace:
    """Generate one vanilla session.

    The connection type is Bernoulli(clearnet_prob) unless forced.  Circuits
    are freshly built at connection arrival; onion sessions create their
    directory, introduction and rendezvous circuits concurrently.
    """
    think = sample_think_time(config.user, rng)
    if force_type is not None:
        conn = force_type
    else:
        conn = (
            ConnectionType.CLEARNET
            if rng.random() < config.user.clearnet_prob
            else ConnectionType.ONION
        )
    arrival = think
    rtt = config.rtt
    circuits: list[CircuitTrace] = []
    if conn is ConnectionType.CLEARNET:
        handshake = circuit_handshake(HandshakeKind.EXIT_CIRCUIT, arrival, rtt)
        app = app_traffic(
            site, conn, config.packing_mode, handshake[-1].time, rng,
            config.scheduling_noise,
        )
        cells = handshake + app
        lifetime = config.lifetime_exit.sample(rng)
        circuits.append(
            CircuitTrace(
                circuit_id=f"{session_id}-exit",
                purpose=CircuitPurpose.EXIT,
                cells=cells,
                created_at=arrival,
                closed_at=max(arrival + lifetime, cells[-1].time),
            )
        )
    else:
        setup = two_hop_setup(arrival, rtt)
        hsdir_cells = setup + request_pattern(
            RequestKind.HSDIR_FETCH, setup[-1].time, rtt, is_padding=False
        )
        circuits.append(
            CircuitTrace(
                circuit_id=f"{session_id}-hsdir",
                purpose=CircuitPurpose.HSDIR,
                cells=hsdir_cells,
                created_at=arrival,
                closed_at=_close_after(hsdir_cells, arrival, config.linger_after_use, rng),
            )
        )
        intro_cells = setup + request_pattern(
            RequestKind.INTRO_HANDSHAKE, setup[-1].time, rtt, is_padding=False
        )
        circuits.append(
            CircuitTrace(
                circuit_id=f"{session_id}-intro",
                purpose=CircuitPurpose.INTRO,
                cells=intro_cells,
                created_at=arrival,
                closed_at=_close_after(intro_cells, arrival, config.linger_after_use, rng),
            )
        )
        handshake = circuit_handshake(HandshakeKind.REND_CIRCUIT, arrival, rtt)
        app = app_traffic(
            site, conn, config.packing_mode, handshake[-1].time, rng,
            config.scheduling_noise,
        )
        rend_cells = handshake + app
        circuits.append(
            CircuitTrace(
                circuit_id=f"{session_id}-rend",
                purpose=CircuitPurpose.REND,
                cells=rend_cells,
                created_at=arrival,
                closed_at=_close_after(rend_cells, arrival, config.linger_after_use, rng),
            )
        )
    return SessionTrace(
        session_id=session_id,
        connection_type=conn,
        think_time=think,
        circuits=tuple(circuits),
        site_id=site.site_id,
    )


def session_rng(seed: int, index: int, lane: int = 0) -> np.random.Generator:
    """Independent per-session random substream, stable under partitioning."""
    return np.random.default_rng(np.random.SeedSequence([seed, lane, index]))


def iter_sessions(
    config: SimConfig,
    force_type: ConnectionType | None = None,
    start: int = 0,
    count: int | None = None,
):
    """Yield sessions with round-robin site assignment and derived streams.

    Sessions are independent of each other and of iteration order, so
    partitions of the index range can run on separate workers and merge in
    session-id order with identical results.
    """
    n = config.n_sessions if count is None else count
    for i in range(start, start + n):
        site = config.sites[i % len(config.sites)]
        rng = session_rng(config.seed, i)
        yield simulate_session(
            config, site, rng, session_id=f"s{i:06d}", force_type=force_type
        )


def simulate_dataset(
    config: SimConfig, force_type: ConnectionType | None = None
) -> list[SessionTrace]:
    """Generate n_sessions fresh sessions, deterministic under the seed."""
    return list(iter_sessions(config, force_type=force_type))
