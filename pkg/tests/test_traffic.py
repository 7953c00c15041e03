import numpy as np
import pytest

from circuitpad.cells import CircuitPurpose, RelayCommand
from circuitpad.traffic import (
    ConnectionType,
    PackingMode,
    SimConfig,
    SiteModel,
    UserModel,
    app_traffic,
    make_sites,
    sample_think_time,
    session_rng,
    simulate_dataset,
    simulate_session,
)


@pytest.fixture(scope="module")
def sites():
    return make_sites(5, seed=11)


def small_config(sites, **kw):
    defaults = dict(
        user=UserModel(lambda_u=4.0, clearnet_prob=0.5),
        sites=sites,
        rtt=0.05,
        n_sessions=50,
        seed=123,
    )
    defaults.update(kw)
    return SimConfig(**defaults)


def test_think_time_mean():
    user = UserModel(lambda_u=4.0)
    rng = np.random.default_rng(0)
    draws = np.array([sample_think_time(user, rng) for _ in range(200_000)])
    # large-n mean check against 1/lambda_u
    assert draws.mean() == pytest.approx(0.25, rel=0.01)
    assert (draws >= 0).all()


def test_think_time_rate_scaling():
    # identical underlying uniforms: halving the scale exactly halves draws
    a = sample_think_time(UserModel(lambda_u=4.0), np.random.default_rng(42))
    b = sample_think_time(UserModel(lambda_u=8.0), np.random.default_rng(42))
    assert a == pytest.approx(2.0 * b, rel=1e-12)


def test_app_traffic_identical_mode(sites):
    site = sites[0]
    rng = np.random.default_rng(1)
    clear = app_traffic(site, ConnectionType.CLEARNET, PackingMode.IDENTICAL, 0.0, rng)
    onion = app_traffic(site, ConnectionType.ONION, PackingMode.IDENTICAL, 0.0, rng)
    assert len(clear) == len(onion) == site.onion_cell_count
    assert [c.direction for c in clear] == [c.direction for c in onion]
    assert [c.time for c in clear] == [c.time for c in onion]
    assert all(c.command is RelayCommand.APP_DATA for c in clear)


def test_app_traffic_degenerate_inflation():
    site = SiteModel("s", (10, 10), packing_inflation_mean=1.0, packing_inflation_sd=0.0)
    rng = np.random.default_rng(2)
    clear = app_traffic(site, ConnectionType.CLEARNET, PackingMode.ASYMMETRIC, 0.0, rng)
    onion = app_traffic(site, ConnectionType.ONION, PackingMode.ASYMMETRIC, 0.0, rng)
    assert len(clear) == len(onion)


def test_app_traffic_asymmetric_statistics():
    site = SiteModel("s", (12, 12, 12), packing_inflation_mean=1.2, packing_inflation_sd=0.1)
    rng = np.random.default_rng(3)
    clear_counts = []
    onion_counts = []
    for _ in range(10_000):
        clear_counts.append(
            len(app_traffic(site, ConnectionType.CLEARNET, PackingMode.ASYMMETRIC, 0.0, rng))
        )
        onion_counts.append(
            len(app_traffic(site, ConnectionType.ONION, PackingMode.ASYMMETRIC, 0.0, rng))
        )
    clear_counts = np.array(clear_counts)
    onion_counts = np.array(onion_counts)
    ratio = clear_counts.mean() / onion_counts.mean()
    assert ratio == pytest.approx(1.2, abs=0.02)
    assert clear_counts.var() > onion_counts.var()


def test_session_type_forced_by_base_rate(sites):
    all_clear = small_config(sites, user=UserModel(4.0, clearnet_prob=1.0), n_sessions=20)
    for s in simulate_dataset(all_clear):
        assert s.connection_type is ConnectionType.CLEARNET
        assert len(s.circuits) == 1
        assert s.circuits[0].purpose is CircuitPurpose.EXIT
    all_onion = small_config(sites, user=UserModel(4.0, clearnet_prob=0.0), n_sessions=20)
    for s in simulate_dataset(all_onion):
        assert s.connection_type is ConnectionType.ONION
        assert [c.purpose for c in s.circuits] == [
            CircuitPurpose.HSDIR,
            CircuitPurpose.INTRO,
            CircuitPurpose.REND,
        ]


def test_base_rate_fraction():
    # empirical clearnet fraction tracks the configured base rate
    cfg = small_config(
        make_sites(1, seed=3, cell_count_range=(8, 8)),
        user=UserModel(4.0, clearnet_prob=0.93),
        n_sessions=100_000,
    )
    clear = sum(
        1 for s in simulate_dataset(cfg) if s.connection_type is ConnectionType.CLEARNET
    )
    assert clear / cfg.n_sessions == pytest.approx(0.93, abs=0.01)


def test_vanilla_circuit_count_law(sites):
    cfg = small_config(sites, n_sessions=200)
    for s in simulate_dataset(cfg):
        expected = 1 if s.connection_type is ConnectionType.CLEARNET else 3
        assert len(s.circuits) == expected


def test_identical_mode_app_sequences_match_across_types(sites):
    cfg = small_config(sites)
    rng_a = session_rng(5, 0)
    rng_b = session_rng(5, 0)
    site = sites[2]
    clear = simulate_session(cfg, site, rng_a, "a", force_type=ConnectionType.CLEARNET)
    onion = simulate_session(cfg, site, rng_b, "b", force_type=ConnectionType.ONION)
    clear_app = [
        int(c.direction)
        for c in clear.circuits[0].cells
        if c.command is RelayCommand.APP_DATA
    ]
    rend = onion.circuits[2]
    onion_app = [
        int(c.direction) for c in rend.cells if c.command is RelayCommand.APP_DATA
    ]
    assert clear_app == onion_app


def test_exit_lifetimes_dominate_rend(sites):
    cfg = small_config(sites, n_sessions=300)
    exit_lifetimes, rend_lifetimes = [], []
    for s in simulate_dataset(cfg):
        for c in s.circuits:
            if c.purpose is CircuitPurpose.EXIT:
                exit_lifetimes.append(c.lifetime)
            elif c.purpose is CircuitPurpose.REND:
                rend_lifetimes.append(c.lifetime)
    assert exit_lifetimes and rend_lifetimes
    # under defaults the supports are disjoint: strict stochastic dominance
    assert min(exit_lifetimes) > max(rend_lifetimes)


def test_dataset_deterministic_under_seed(sites):
    cfg = small_config(sites, n_sessions=30)
    assert simulate_dataset(cfg) == simulate_dataset(cfg)


def test_scheduling_noise_breaks_identical_equality(sites):
    site = next(s for s in sites if len(set(s.response_bursts)) > 1)
    cfg = small_config((site,), scheduling_noise=True)
    clear = simulate_session(
        cfg, site, session_rng(5, 0), "a", force_type=ConnectionType.CLEARNET
    )
    onion = simulate_session(
        cfg, site, session_rng(5, 0), "b", force_type=ConnectionType.ONION
    )
    clear_app = [
        int(c.direction)
        for c in clear.circuits[0].cells
        if c.command is RelayCommand.APP_DATA
    ]
    onion_app = [
        int(c.direction)
        for c in onion.circuits[2].cells
        if c.command is RelayCommand.APP_DATA
    ]
    assert clear_app != onion_app


def test_config_validation(sites):
    with pytest.raises(ValueError):
        UserModel(lambda_u=0.0)
    with pytest.raises(ValueError):
        UserModel(lambda_u=1.0, clearnet_prob=1.5)
    with pytest.raises(ValueError):
        SimConfig(sites=())
    with pytest.raises(ValueError):
        small_config(sites, n_sessions=0)
    with pytest.raises(ValueError):
        SiteModel("s", ())


def test_site_generation_bounds():
    sites = make_sites(50, seed=2, cell_count_range=(24, 96))
    for s in sites:
        assert 6 <= s.onion_cell_count <= 96 + 16
        assert all(r >= 1 for r in s.response_bursts)
