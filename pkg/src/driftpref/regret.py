"""Regret accounting for drifting-utility runs.

Per-step regret splits exactly into two parts measured against the true
utilities: the gap between the oracle action and the KL-regularized
comparator (the best policy reachable from the current reference), and the
gap between that comparator and the policy actually played. The first part
is the price of the reference, the second the price of estimation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


@dataclass
class RegretLedger:
    """Column-oriented per-step record of one run."""

    t: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    phase: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    bias: np.ndarray = field(default_factory=lambda: np.zeros(0))
    error: np.ndarray = field(default_factory=lambda: np.zeros(0))
    regret_step: np.ndarray = field(default_factory=lambda: np.zeros(0))
    regret_cum: np.ndarray = field(default_factory=lambda: np.zeros(0))
    oracle_arm: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    switch: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    COLUMNS = ("t", "phase", "bias", "error", "regret_step", "regret_cum",
               "oracle_arm", "switch")

    def __len__(self) -> int:
        return self.t.shape[0]

    def final_regret(self) -> float:
        return float(self.regret_cum[-1]) if len(self) else 0.0

    def cumulative_bias(self) -> float:
        return float(self.bias.sum())

    def cumulative_error(self) -> float:
        return float(self.error.sum())


def oracle_action(u: np.ndarray) -> int:
    """Index of the highest utility; ties resolve to the lowest index."""
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or u.shape[0] < 1:
        raise ContractError("utilities must be a nonempty row")
    return int(np.argmax(u))


def regret_decompose(
    u: np.ndarray,
    pi: np.ndarray,
    pi_kl: np.ndarray,
) -> tuple[float, float]:
    """Split one step's regret into (reference bias, learning error).

    bias = J(oracle) - J(comparator), error = J(comparator) - J(played);
    their sum is the plain per-step regret by construction.
    """
    u = np.asarray(u, dtype=float)
    best = float(u[oracle_action(u)])
    j_kl = float(np.asarray(pi_kl, dtype=float) @ u)
    j_pi = float(np.asarray(pi, dtype=float) @ u)
    return best - j_kl, j_kl - j_pi


def switch_flags(thetas: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Per-step oracle-change flags.

    Step t is a switch when the oracle under theta_t differs from the oracle
    under theta_{t-1}, both evaluated on step t's feature table. features is
    (T, K, d) or (K, d) for a shared context; the first step is never a switch.
    """
    thetas = np.asarray(thetas, dtype=float)
    features = np.asarray(features, dtype=float)
    T = thetas.shape[0]
    if features.ndim == 2:
        features = np.broadcast_to(features, (T,) + features.shape)
    if features.shape[0] != T:
        raise ContractError("features must cover every step")
    flags = np.zeros(T, dtype=int)
    for t in range(1, T):
        now = int(np.argmax(features[t] @ thetas[t]))
        prev = int(np.argmax(features[t] @ thetas[t - 1]))
        flags[t] = int(now != prev)
    return flags


def switching_count(thetas: np.ndarray, features: np.ndarray) -> int:
    """Number of oracle changes along the path (see switch_flags)."""
    return int(switch_flags(thetas, features).sum())


def min_margin(thetas: np.ndarray, features: np.ndarray) -> float:
    """Smallest top-two utility gap over switch-free steps.

    Steps flagged as switches are excluded: the gap crosses zero there by
    construction, so only stable steps inform the margin.
    """
    thetas = np.asarray(thetas, dtype=float)
    features = np.asarray(features, dtype=float)
    T = thetas.shape[0]
    if features.ndim == 2:
        features = np.broadcast_to(features, (T,) + features.shape)
    flags = switch_flags(thetas, features)
    best = np.inf
    for t in range(T):
        if flags[t]:
            continue
        u = np.sort(features[t] @ thetas[t])
        if u.shape[0] < 2:
            raise ContractError("margin needs at least two actions")
        best = min(best, float(u[-1] - u[-2]))
    return best


def nmr(expected_best: np.ndarray, expected_chosen: np.ndarray) -> float:
    """Negative mean regret on expected (noise-free) rewards; higher is better."""
    expected_best = np.asarray(expected_best, dtype=float)
    expected_chosen = np.asarray(expected_chosen, dtype=float)
    if expected_best.shape != expected_chosen.shape or expected_best.ndim != 1:
        raise ContractError("reward sequences must be equal-length rows")
    if expected_best.shape[0] == 0:
        raise ContractError("reward sequences must be nonempty")
    return float(-np.mean(expected_best - expected_chosen))


def slope_fit(horizons, values) -> float:
    """Least-squares slope of log(values) against log(horizons)."""
    horizons = np.asarray(horizons, dtype=float)
    values = np.asarray(values, dtype=float)
    if horizons.shape != values.shape or horizons.ndim != 1:
        raise ContractError("horizons and values must be equal-length rows")
    if horizons.shape[0] < 2:
        raise ContractError("slope fit needs at least two points")
    if np.any(horizons <= 0.0) or np.any(values <= 0.0):
        raise ContractError("slope fit needs strictly positive inputs")
    x = np.log(horizons)
    y = np.log(values)
    xc = x - x.mean()
    return float((xc @ (y - y.mean())) / (xc @ xc))
