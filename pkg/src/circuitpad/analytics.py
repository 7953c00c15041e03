"""Closed-form results for preemptive padding, with brute-force oracles.

With user think times exponential at rate lambda_u and dummy triplets fired
at rate lambda_d = phi * lambda_u, the number of dummy triplets D per
connection is geometric with parameter p = 1/(1+phi).  An optimal classifier
predicting the connection type from the observable triplet count N (N = D
for clearnet, N = D + 1 for onion) achieves accuracy max{c, 1 - c*phi/(phi+1)}
at clearnet base rate c.  The oracles here recompute both results by direct
summation/enumeration so the closed forms and the simulator can be validated
against something independent of either.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

TAIL_EPS = 1e-9  # geometric tail mass below which truncation is accepted


@dataclass(frozen=True)
class PcpParams:
    """Defense/evaluation operating point (phi, c) with derived p."""

    phi: float
    c: float

    def __post_init__(self) -> None:
        if self.phi < 0:
            raise ValueError("phi must be >= 0")
        if not 0.0 <= self.c <= 1.0:
            raise ValueError("c must be in [0, 1]")

    @property
    def p(self) -> float:
        return 1.0 / (1.0 + self.phi)


def dummy_count_pmf(k: int, phi: float) -> float:
    """P[D = k] = p (1-p)^k with p = 1/(1+phi)."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if phi < 0:
        raise ValueError("phi must be >= 0")
    p = 1.0 / (1.0 + phi)
    return p * (1.0 - p) ** k


def _joint(k: int, phi: float, c: float) -> tuple[float, float]:
    """Joint probabilities (P[clearnet, N=k], P[onion, N=k])."""
    p_clear = c * dummy_count_pmf(k, phi)
    p_onion = 0.0 if k == 0 else (1.0 - c) * dummy_count_pmf(k - 1, phi)
    return p_clear, p_onion


def optimal_accuracy(phi: float, c: float) -> float:
    """Accuracy of the optimal classifier predicting the type from N."""
    PcpParams(phi, c)  # validates
    return max(c, 1.0 - c * phi / (phi + 1.0))


def leakage(phi: float, c: float) -> float:
    """Optimal accuracy minus the random-guessing baseline.

    The baseline is max(c, 1-c): for the clearnet-majority base rates the
    defense targets this equals c, and the extension to c < 0.5 keeps
    leakage non-negative.
    """
    return optimal_accuracy(phi, c) - max(c, 1.0 - c)


def accuracy_oracle(phi: float, c: float, k_max: int = 200) -> float:
    """Brute-force optimal accuracy from the truncated joint distribution.

    Sums max_s P[S=s, N=k] over k <= k_max, built only from the dummy-count
    pmf and the N = D / N = D + 1 relation.  Rejects a k_max whose geometric
    tail exceeds the truncation tolerance.
    """
    PcpParams(phi, c)
    p = 1.0 / (1.0 + phi)
    tail = (1.0 - p) ** (k_max + 1)
    if tail >= TAIL_EPS:
        raise ValueError(
            f"k_max={k_max} leaves geometric tail {tail:.3e} >= {TAIL_EPS}"
        )
    total = 0.0
    for k in range(k_max + 1):
        p_clear, p_onion = _joint(k, phi, c)
        total += max(p_clear, p_onion)
    return total


def enumerate_deterministic_classifiers(
    phi: float, c: float, k_cap: int, k_max: int = 200
) -> float:
    """Best accuracy over all deterministic maps {0..k_cap, rest} -> label.

    Exhausts every label assignment on small observations plus a single
    label for all larger ones; the maximum equals the Bayes accuracy, so
    this is the dominance oracle for the closed form.
    """
    joints = [_joint(k, phi, c) for k in range(k_max + 1)]
    tail_clear = sum(j[0] for j in joints[k_cap + 1 :])
    tail_onion = sum(j[1] for j in joints[k_cap + 1 :])
    best = 0.0
    for assignment in itertools.product((0, 1), repeat=k_cap + 2):
        acc = 0.0
        for k in range(k_cap + 1):
            acc += joints[k][assignment[k]]
        acc += tail_clear if assignment[-1] == 0 else tail_onion
        best = max(best, acc)
    return best


def bayes_accuracy_on_joint(phi: float, c: float, k_max: int = 200) -> float:
    """Accuracy of the N=0-clearnet / threshold rule on the exact joint."""
    p = 1.0 / (1.0 + phi)
    clear_everywhere = c >= 1.0 - c * (1.0 - p)
    total = 0.0
    for k in range(k_max + 1):
        p_clear, p_onion = _joint(k, phi, c)
        if k == 0 or clear_everywhere:
            total += p_clear
        else:
            total += p_onion
    return total


def simulate_dummy_counts(
    phi: float,
    n: int,
    rng: np.random.Generator,
    lambda_u: float = 4.0,
) -> np.ndarray:
    """Monte-Carlo oracle for the dummy-count law, independent of the
    event-driven simulator: draw the think time, then count the Poisson
    events a rate phi*lambda_u process produces within it."""
    think = rng.exponential(1.0 / lambda_u, size=n)
    return rng.poisson(phi * lambda_u * think)


def fit_geometric(samples, phi: float) -> float:
    """Total-variation distance between empirical counts and the closed form.

    The support is truncated where the geometric tail drops below 1e-6; the
    remaining mass on both sides is compared as a single bucket.
    """
    samples = np.asarray(samples)
    if len(samples) < 1:
        raise ValueError("need samples")
    p = 1.0 / (1.0 + phi)
    if p >= 1.0:
        k_cut = 1
    else:
        # smallest K with tail mass (1-p)^(K+1) < 1e-6
        k_cut = int(np.ceil(np.log(1e-6) / np.log(1.0 - p)))
    ks = np.arange(k_cut + 1)
    theory = p * (1.0 - p) ** ks
    counts = np.bincount(np.minimum(samples, k_cut + 1), minlength=k_cut + 2)
    empirical = counts / len(samples)
    tv = 0.5 * (
        np.abs(empirical[: k_cut + 1] - theory).sum()
        + abs(empirical[k_cut + 1] - (1.0 - theory.sum()))
    )
    return float(tv)


def accuracy_curve(
    phis, cs
) -> list[tuple[float, float, float, float]]:
    """Rows of (phi, c, accuracy, leakage) for the analytic curves CSV."""
    return [
        (phi, c, optimal_accuracy(phi, c), leakage(phi, c))
        for phi in phis
        for c in cs
    ]
