"""Threshold grid and the conformal loss used by every learner.

A threshold ``pi`` in ``[0, 1]`` defines the single-threshold conformal set
``{y : f(x, y) >= pi}``.  The loss of a threshold in one round depends only on
the threshold and whether the true label was excluded (the miscoverage bit):

    loss(pi, m) = d(m) + a(pi, m)

where ``d`` is the alpha-adaptive miscoverage term and ``a`` is a small
(decay-scaled) inefficiency term that favours larger thresholds among covering
arms and smaller ones among miscovering arms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GAIN_TOL = 1e-12


class DomainError(ValueError):
    """An input lies outside the domain of a grid/loss function."""


@dataclass(frozen=True)
class ThresholdGrid:
    """Ordered set of ``K`` candidate thresholds in ``[0, 1]`` (the arms)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("a threshold grid needs at least 2 values")
        if np.any(np.diff(v) <= 0):
            raise ValueError("grid values must be strictly increasing")
        if v[0] < 0.0 or v[-1] > 1.0:
            raise ValueError("grid values must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def uniform(cls, K: int) -> "ThresholdGrid":
        """``K`` evenly spaced thresholds ``i / (K - 1)``, both endpoints included."""
        if K < 2:
            raise ValueError(f"K must be >= 2, got {K}")
        return cls(np.arange(K, dtype=float) / (K - 1))

    @property
    def K(self) -> int:
        return self.values.size

    def __len__(self) -> int:
        return self.values.size

    def index_of(self, pi: float) -> int:
        """Index of the grid value equal to ``pi`` (exact match required)."""
        i = int(np.searchsorted(self.values, pi))
        if i >= self.K or self.values[i] != pi:
            raise KeyError(f"{pi} is not a grid value")
        return i

    def covered_count(self, f_star: float) -> int:
        """Number of arms that cover a label with score ``f_star`` (those with pi <= f_star)."""
        return int(np.searchsorted(self.values, f_star, side="right"))


def decay_scale(T: int, rho: float = 0.5) -> float:
    """Concrete decay factor ``T ** -rho`` multiplying the inefficiency term."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if rho <= 0:
        raise ValueError("rho must be positive")
    return float(T) ** (-rho)


@dataclass(frozen=True)
class LossParams:
    """Loss configuration: target level ``alpha``, trade-off ``c`` and decay ``scale``.

    ``loss_min``/``loss_max`` are derived once at construction and reused for
    every normalisation so gains are bit-stable across calls.
    """

    alpha: float
    c: float = 40.0
    scale: float = 1.0
    loss_min: float = field(init=False)
    loss_max: float = field(init=False)

    def __post_init__(self):
        a, c, s = self.alpha, self.c, self.scale
        if not 0.0 < a < 0.5:
            raise ValueError(f"alpha must lie in (0, 0.5), got {a}")
        if not c > 0:
            raise ValueError(f"c must be positive, got {c}")
        if not 0.0 < s <= 1.0:
            raise ValueError(f"scale must lie in (0, 1], got {s}")
        # Extremes are attained at pi = 1; evaluating the loss itself there
        # (instead of the closed forms) keeps every gain exactly inside [0, 1].
        object.__setattr__(self, "loss_max", float(_loss(1.0, 1, a, c * a * s)))
        object.__setattr__(self, "loss_min", float(_loss(1.0, 0, a, c * a * s)))

    @classmethod
    def for_horizon(cls, alpha: float, c: float, T: int, rho: float = 0.5) -> "LossParams":
        return cls(alpha=alpha, c=c, scale=decay_scale(T, rho))

    @property
    def loss_diff(self) -> float:
        return self.loss_max - self.loss_min


def _check_unit(name: str, x: float) -> None:
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"{name}={x} outside [0, 1]")


def miscoverage_bit(f_star: float, pi: float) -> int:
    """1 if a label with score ``f_star`` is excluded from the set at threshold ``pi``.

    Inclusion is ``f_star >= pi``, so ties count as covered.
    """
    _check_unit("f_star", f_star)
    _check_unit("pi", pi)
    return int(f_star < pi)


def miscoverage_row(f_star: float, grid: ThresholdGrid) -> np.ndarray:
    """Miscoverage bits of every grid arm for one true-label score."""
    return (f_star < grid.values).astype(np.int8)


def d_term(m: int, params: LossParams) -> float:
    a = params.alpha
    if m:
        return 1.0 - a * (1.0 - a)
    return a + a * (1.0 - a)


def _a(pi, m, alpha, cs):
    pi = np.asarray(pi, dtype=float)
    covered = -cs * (1.0 + pi * pi / (1.0 - alpha))
    missed = -cs / (1.0 + alpha * (1.0 - 2.0 * alpha) * pi)
    return np.where(np.asarray(m) != 0, missed, covered)


def _loss(pi, m, alpha, cs):
    d = np.where(np.asarray(m) != 0, 1.0 - alpha * (1.0 - alpha), alpha + alpha * (1.0 - alpha))
    return d + _a(pi, m, alpha, cs)


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def a_term(pi, m, params: LossParams):
    """Inefficiency term; always negative. Works elementwise on arrays."""
    return _scalar(_a(pi, m, params.alpha, params.c * params.alpha * params.scale))


def loss(pi, m, params: LossParams):
    """Per-round loss of threshold ``pi`` given its miscoverage bit ``m``."""
    return _scalar(_loss(pi, m, params.alpha, params.c * params.alpha * params.scale))


def loss_tables(grid: ThresholdGrid, params: LossParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-arm loss if covered and if miscovered, as two length-K arrays."""
    v = grid.values
    return loss(v, np.zeros(v.size, dtype=int), params), loss(v, np.ones(v.size, dtype=int), params)


def loss_row(f_star: float, grid: ThresholdGrid, params: LossParams) -> np.ndarray:
    covered, missed = loss_tables(grid, params)
    return np.where(f_star < grid.values, missed, covered)


def normalized_gain(loss_value, params: LossParams, tol: float = GAIN_TOL):
    """Affine map of a loss into ``[0, 1]``; 1 at ``loss_min``, 0 at ``loss_max``."""
    lv = np.asarray(loss_value, dtype=float)
    if np.any(lv < params.loss_min - tol) or np.any(lv > params.loss_max + tol):
        raise DomainError(
            f"loss {loss_value} outside [{params.loss_min}, {params.loss_max}]"
        )
    g = (params.loss_max - lv) / params.loss_diff
    return float(g) if g.ndim == 0 else g


def pseudo_loss(pi, params: LossParams):
    """Loss ``pi`` would incur if it miscovered, whatever the true label was."""
    return loss(pi, np.ones(np.shape(pi), dtype=int), params)


def pseudo_gain(pi, params: LossParams):
    """Gain an arm would earn had it miscovered; stands in for unobservable gains."""
    return normalized_gain(pseudo_loss(pi, params), params)


def gain_tables(grid: ThresholdGrid, params: LossParams) -> tuple[np.ndarray, np.ndarray]:
    """Normalised gains of every arm when covered and when miscovered."""
    covered, missed = loss_tables(grid, params)
    return normalized_gain(covered, params), normalized_gain(missed, params)
