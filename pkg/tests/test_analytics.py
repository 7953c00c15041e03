import numpy as np
import pytest

from circuitpad.analytics import (
    PcpParams,
    accuracy_oracle,
    bayes_accuracy_on_joint,
    dummy_count_pmf,
    enumerate_deterministic_classifiers,
    fit_geometric,
    leakage,
    optimal_accuracy,
    simulate_dummy_counts,
)

GRID_PHI = (0.25, 0.5, 1.0, 2.0, 4.0)
GRID_C = (0.5, 0.7, 0.9)


def test_params_validation():
    p = PcpParams(phi=1.0, c=0.5)
    assert p.p == 0.5
    with pytest.raises(ValueError):
        PcpParams(phi=-0.5, c=0.5)
    with pytest.raises(ValueError):
        PcpParams(phi=1.0, c=1.5)


def test_pmf_against_monte_carlo_oracle():
    # independent oracle: think time exponential, dummies as a Poisson count
    rng = np.random.default_rng(7)
    counts = simulate_dummy_counts(1.0, 10**6, rng, lambda_u=4.0)
    assert dummy_count_pmf(0, 1.0) == 0.5
    assert dummy_count_pmf(1, 1.0) == 0.25
    assert np.mean(counts == 0) == pytest.approx(0.5, abs=0.005)
    assert np.mean(counts == 1) == pytest.approx(0.25, abs=0.005)


def test_pmf_degenerate_and_tail():
    assert dummy_count_pmf(0, 0.0) == 1.0
    assert dummy_count_pmf(3, 0.0) == 0.0
    partial = sum(dummy_count_pmf(k, 4.0) for k in range(51))
    assert partial >= 0.9999
    with pytest.raises(ValueError):
        dummy_count_pmf(-1, 1.0)


def test_optimal_accuracy_values():
    assert optimal_accuracy(0.0, 0.5) == 1.0
    assert optimal_accuracy(1.0, 0.7) == pytest.approx(0.7)
    assert optimal_accuracy(1.0, 0.5) == pytest.approx(0.75)


def test_oracle_matches_closed_form_on_grid():
    for phi in GRID_PHI:
        for c in GRID_C:
            assert accuracy_oracle(phi, c) == pytest.approx(
                optimal_accuracy(phi, c), abs=1e-6
            )


def test_oracle_limits():
    assert accuracy_oracle(0.0, 0.6, k_max=50) == pytest.approx(1.0, abs=1e-9)
    assert optimal_accuracy(1e6, 0.5) == pytest.approx(0.5, abs=1e-5)
    with pytest.raises(ValueError):
        accuracy_oracle(4.0, 0.5, k_max=10)  # tail too heavy for truncation


def test_leakage_values():
    assert leakage(1.0, 0.7) == pytest.approx(0.0, abs=1e-12)
    assert leakage(0.0, 0.5) == pytest.approx(0.5)
    # non-increasing in phi at fixed c, never negative
    for c in GRID_C:
        values = [leakage(phi, c) for phi in np.arange(0.0, 8.25, 0.25)]
        assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
        assert all(v >= -1e-12 for v in values)


def test_accuracy_bounds_and_case_split():
    for phi in GRID_PHI:
        p = 1.0 / (1.0 + phi)
        for c in GRID_C:
            acc = optimal_accuracy(phi, c)
            assert acc >= c - 1e-12
            if c >= 1.0 - c * (1.0 - p):
                assert acc == pytest.approx(c)
            else:
                assert acc > c


def test_bayes_rule_dominates_all_deterministic_classifiers():
    for phi in GRID_PHI:
        for c in GRID_C:
            best = enumerate_deterministic_classifiers(phi, c, k_cap=8)
            bayes = bayes_accuracy_on_joint(phi, c)
            assert bayes >= best - 1e-12
            assert best == pytest.approx(optimal_accuracy(phi, c), abs=1e-6)


def test_fit_geometric_self_consistency():
    rng = np.random.default_rng(3)
    p = 0.5
    samples = rng.geometric(p, size=100_000) - 1  # support {0, 1, ...}
    assert fit_geometric(samples, 1.0) < 0.01


def test_fit_geometric_point_mass():
    samples = np.zeros(10_000, dtype=int)
    assert fit_geometric(samples, 1.0) == pytest.approx(0.5, abs=1e-3)


def test_fit_geometric_detects_mismatch():
    rng = np.random.default_rng(4)
    samples = rng.geometric(0.5, size=50_000) - 1
    assert fit_geometric(samples, 4.0) > 0.2
