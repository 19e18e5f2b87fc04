"""Non-stationary preference environment.

The hidden utility parameter lives on the unit sphere and performs a budgeted
random walk: each step adds a perturbation with uniform direction and uniform
magnitude, then projects back to the sphere. Total variation (the summed step
distances) is capped by a budget; a step that would overflow the remaining
budget is skipped, so once the budget runs out the parameter is frozen.

Action feature vectors are unit rows, utilities are inner products, and
pairwise preferences follow a Bradley-Terry draw on the utility difference.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ContractError
from .numerics import sigmoid

DRIFT_MODES = ("sphere-walk", "frozen")

# Unit-norm slack for preconditions on theta.
_NORM_TOL = 1e-9


@dataclass
class DriftConfig:
    """Per-step drift law plus the total-variation budget."""

    delta_min: float = 1.0
    delta_max: float = 5.0
    mode: str = "sphere-walk"
    tv_budget: float = 8000.0

    def __post_init__(self):
        if self.mode not in DRIFT_MODES:
            raise ConfigError(f"mode must be one of {DRIFT_MODES}, got {self.mode!r}")
        if not 0.0 <= self.delta_min <= self.delta_max:
            raise ConfigError(
                f"need 0 <= delta_min <= delta_max, got [{self.delta_min}, {self.delta_max}]"
            )
        if self.tv_budget < 0.0:
            raise ConfigError(f"tv_budget must be nonnegative, got {self.tv_budget}")


@dataclass
class ThetaPath:
    """A realized parameter trajectory with its variation accounting."""

    thetas: np.ndarray  # (T, d), unit rows
    tv_used: float
    tv_budget: float

    def __len__(self) -> int:
        return self.thetas.shape[0]


@dataclass
class FeatureSet:
    """Feature vectors for one context: K unit-norm action rows."""

    table: np.ndarray  # (K, d)
    phi_max: float = 1.0

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=float)
        if self.table.ndim != 2:
            raise ContractError("feature table must be 2-d (actions x dims)")
        norms = np.linalg.norm(self.table, axis=1)
        if np.any(norms > self.phi_max + _NORM_TOL):
            raise ContractError("feature rows exceed the stated norm bound")


@dataclass
class PreferenceLabel:
    """Outcome of one Bradley-Terry comparison between two actions."""

    winner_is_first: bool
    probability_used: float  # probability that the first action wins

    def __post_init__(self):
        if not 0.0 < self.probability_used < 1.0:
            raise ContractError(
                f"probability_used must lie in (0, 1), got {self.probability_used}"
            )


def _check_unit(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    n = np.linalg.norm(theta)
    if abs(n - 1.0) > _NORM_TOL:
        raise ContractError(f"theta must have unit norm, got norm {n!r}")
    return theta


def advance_theta(
    theta: np.ndarray,
    cfg: DriftConfig,
    rng: np.random.Generator,
    remaining_tv: float | None = None,
) -> np.ndarray:
    """One drift step. Returns the next unit-norm parameter.

    Frozen mode returns the input unchanged and consumes no randomness.
    When a remaining budget is given, a step whose displacement would exceed
    it is discarded (the draw is still consumed, keeping streams aligned).
    """
    theta = _check_unit(theta)
    if cfg.mode == "frozen":
        return theta.copy()
    d = theta.shape[0]
    direction = rng.standard_normal(d)
    norm = np.linalg.norm(direction)
    if norm == 0.0:  # measure-zero; retry once rather than divide by zero
        direction = rng.standard_normal(d)
        norm = np.linalg.norm(direction)
    direction /= norm
    magnitude = rng.uniform(cfg.delta_min, cfg.delta_max)
    proposal = theta + magnitude * direction
    pnorm = np.linalg.norm(proposal)
    if pnorm == 0.0:
        return theta.copy()
    proposal /= pnorm
    if remaining_tv is not None and np.linalg.norm(proposal - theta) > remaining_tv:
        return theta.copy()
    return proposal


def generate_path(
    horizon: int,
    dim: int,
    cfg: DriftConfig,
    rng: np.random.Generator,
    theta0: np.ndarray | None = None,
) -> ThetaPath:
    """Realize a full parameter trajectory of the given length."""
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    if theta0 is None:
        theta0 = rng.standard_normal(dim)
        theta0 /= np.linalg.norm(theta0)
    else:
        theta0 = _check_unit(theta0)
        if theta0.shape[0] != dim:
            raise ContractError("theta0 dimension does not match dim")
    thetas = np.empty((horizon, dim))
    thetas[0] = theta0
    tv_used = 0.0
    for t in range(1, horizon):
        remaining = cfg.tv_budget - tv_used
        thetas[t] = advance_theta(thetas[t - 1], cfg, rng, remaining_tv=remaining)
        tv_used += float(np.linalg.norm(thetas[t] - thetas[t - 1]))
    return ThetaPath(thetas=thetas, tv_used=tv_used, tv_budget=cfg.tv_budget)


def make_features(n_actions: int, dim: int, rng: np.random.Generator) -> FeatureSet:
    """Draw one context: n_actions feature rows, each normalized to unit length."""
    if n_actions < 2 or dim < 1:
        raise ConfigError(f"need n_actions >= 2 and dim >= 1, got {n_actions}, {dim}")
    rows = rng.standard_normal((n_actions, dim))
    norms = np.linalg.norm(rows, axis=1)
    while np.any(norms == 0.0):  # practically unreachable
        bad = norms == 0.0
        rows[bad] = rng.standard_normal((int(bad.sum()), dim))
        norms = np.linalg.norm(rows, axis=1)
    rows /= norms[:, None]
    return FeatureSet(table=rows, phi_max=1.0)


def utility(theta: np.ndarray, phi: np.ndarray) -> np.ndarray | float:
    """Inner-product utility; accepts a single row (d,) or a table (K, d)."""
    phi = np.asarray(phi, dtype=float)
    out = phi @ np.asarray(theta, dtype=float)
    if out.ndim == 0:
        return float(out)
    return out


def sample_preference(
    theta: np.ndarray,
    phi_first: np.ndarray,
    phi_second: np.ndarray,
    rng: np.random.Generator,
) -> PreferenceLabel:
    """Bradley-Terry comparison of two actions under the current utilities."""
    gap = float(utility(theta, phi_first)) - float(utility(theta, phi_second))
    p_first = float(sigmoid(gap))
    return PreferenceLabel(
        winner_is_first=bool(rng.uniform() < p_first),
        probability_used=p_first,
    )


def sample_reward(
    theta: np.ndarray,
    phi: np.ndarray,
    rng: np.random.Generator,
    noise_scale: float = 1.0,
) -> float:
    """Noisy scalar reward: utility plus Gaussian noise."""
    if noise_scale < 0.0:
        raise ConfigError(f"noise_scale must be nonnegative, got {noise_scale}")
    return float(utility(theta, phi)) + noise_scale * float(rng.standard_normal())


def spread_drift_limits(cfg: DriftConfig, horizon: int, dim: int) -> DriftConfig:
    """Rescale the per-step magnitude window so drift persists across the run.

    With the raw limits, the budget would be consumed within a few steps.
    Scaling both limits by a common factor spreads roughly 90% of the budget
    evenly over the horizon (first-order small-step approximation; the exact
    cap is still enforced by the budget check in advance_theta).
    """
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    mean_mag = 0.5 * (cfg.delta_min + cfg.delta_max)
    if mean_mag <= 0.0 or cfg.tv_budget <= 0.0:
        return replace(cfg)
    # E||P_perp u|| for a uniform direction u, to first order in the step size
    perp = np.sqrt(max(1.0 - 1.0 / dim, 1e-12))
    scale = 0.9 * cfg.tv_budget / (horizon * mean_mag * perp)
    scale = min(scale, 1.0)
    return replace(cfg, delta_min=cfg.delta_min * scale, delta_max=cfg.delta_max * scale)
