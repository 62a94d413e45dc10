"""EXP3.P-style learners over the threshold grid.

All variants share the same strategy (exponential weights on cumulative
estimated gains, mixed with uniform exploration) and differ only in how the
per-round gain estimate is built from the feedback:

``exp3p`` / ``bandit``
    importance-weighted gain of the played arm plus a ``beta / p`` bonus.
``unlock``
    uses every arm whose miscoverage is inferable this round (the unlocking
    set), re-weighted by the probability mass of that set.
``unlock-plus``
    as ``unlock`` but with miscoverage-first weighting and pseudo-gains for the
    arms below a miscovering threshold.

The per-step arithmetic lives in small numba kernels; the public functions
are thin wrappers that validate and allocate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from numba import njit

from .grid_loss import LossParams, ThresholdGrid, gain_tables

VARIANTS = ("exp3p", "bandit", "unlock", "unlock-plus")
_CODES = {"exp3p": 0, "bandit": 0, "unlock": 1, "unlock-plus": 2}
GAMMA_CAP = 0.999


def variant_code(variant: str) -> int:
    try:
        return _CODES[variant]
    except KeyError:
        raise ValueError(f"unknown learner variant {variant!r}; choose from {VARIANTS}") from None


@dataclass(frozen=True)
class HyperParams:
    eta: float
    gamma: float
    beta: float
    clamped: bool = False

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")


def theorem_schedule(K: int, T: int) -> HyperParams:
    """Horizon-tuned ``beta``, ``gamma``, ``eta`` used by all regret guarantees.

    When the exploration formula exceeds ``GAMMA_CAP`` (small ``T``) it is
    clamped and ``clamped`` is set, so the run still has a valid mixture.
    """
    if K < 2 or T < 1:
        raise ValueError("need K >= 2 and T >= 1")
    lnk = math.log(K)
    beta = math.sqrt(lnk / (K * T))
    gamma = 1.05 * math.sqrt(K * lnk / T)
    eta = 0.95 * math.sqrt(lnk / (K * T))
    clamped = gamma > GAMMA_CAP
    if clamped:
        warnings.warn(f"gamma={gamma:.4g} for K={K}, T={T} clamped to {GAMMA_CAP}", stacklevel=2)
        gamma = GAMMA_CAP
    return HyperParams(eta=eta, gamma=gamma, beta=min(beta, 1.0), clamped=clamped)


@dataclass
class Feedback:
    """What the learner sees after playing an arm.

    The true label's score is revealed only when the played set covered it.
    """

    m: int
    f_star_revealed: Optional[float] = None

    def __post_init__(self):
        if self.m not in (0, 1):
            raise ValueError("m must be 0 or 1")
        if (self.m == 0) != (self.f_star_revealed is not None):
            raise ValueError("a score is revealed if and only if the label was covered")


# --------------------------------------------------------------------------
# kernels

@njit(cache=True)
def _strategy_into(cum_gain, eta, gamma, p, cdf):
    K = cum_gain.shape[0]
    zmax = eta * cum_gain[0]
    for i in range(1, K):
        z = eta * cum_gain[i]
        if z > zmax:
            zmax = z
    total = 0.0
    for i in range(K):
        w = math.exp(eta * cum_gain[i] - zmax)
        p[i] = w
        total += w
    floor = gamma / K
    acc = 0.0
    for i in range(K):
        p[i] = (1.0 - gamma) * p[i] / total + floor
        acc += p[i]
        cdf[i] = acc


@njit(cache=True)
def _inverse_cdf(p, cdf, u):
    K = p.shape[0]
    i = 0
    # first bucket whose upper edge reaches u; edge ties go to the lower bucket
    while i < K - 1 and cdf[i] < u:
        i += 1
    while i < K - 1 and p[i] == 0.0:
        i += 1
    while i > 0 and p[i] == 0.0:
        i -= 1
    return i


@njit(cache=True)
def _estimate_into(code, arm, m, n_covered, p, cdf, beta, g_cov, g_mis, singleton, out):
    """Fill ``out`` with the gain estimate of every arm.

    ``n_covered`` is the number of covered arms (a prefix of the grid) and is
    only meaningful when ``m == 0``.  ``singleton`` restricts the unlocking set
    to the played arm.
    """
    K = p.shape[0]
    if code == 0 or (code == 1 and singleton):
        for i in range(K):
            out[i] = beta / p[i]
        g = g_mis[arm] if m else g_cov[arm]
        out[arm] += g / p[arm]
        return
    if code == 1:
        for i in range(K):
            out[i] = beta / p[i]
        if m == 0:
            mass = cdf[n_covered - 1]
            for i in range(n_covered):
                out[i] += g_cov[i] / mass
        else:
            mass = 0.0
            for i in range(arm, K):
                mass += p[i]
            for i in range(arm, K):
                out[i] += g_mis[i] / mass
        return
    # unlock-plus
    if m == 0:
        mass = cdf[n_covered - 1]
        bonus = (1.0 + 1.0 / mass) * beta
        for i in range(n_covered):
            out[i] = g_cov[i] / mass + bonus
        for i in range(n_covered, K):
            out[i] = g_mis[i] + beta / cdf[i]
    else:
        for i in range(arm):
            out[i] = g_mis[i] + (1.0 + 1.0 / p[i]) * beta
        for i in range(arm, K):
            out[i] = g_mis[i] + beta / cdf[i]


@njit(cache=True)
def _covered_count(values, f_star):
    n = 0
    K = values.shape[0]
    while n < K and values[n] <= f_star:
        n += 1
    return n


# --------------------------------------------------------------------------
# public operations

def strategy(cum_gain, hyper: HyperParams) -> np.ndarray:
    """Mixed exponential-weights distribution ``(1-gamma) softmax(eta G) + gamma/K``."""
    G = np.ascontiguousarray(cum_gain, dtype=float)
    p = np.empty_like(G)
    cdf = np.empty_like(G)
    _strategy_into(G, hyper.eta, hyper.gamma, p, cdf)
    return p


def sample_arm(probs, rng_or_u) -> int:
    """Inverse-CDF draw in grid order from a single uniform.

    ``rng_or_u`` is either a ``numpy.random.Generator`` or an explicit uniform
    in ``[0, 1)``.
    """
    p = np.ascontiguousarray(probs, dtype=float)
    u = rng_or_u.random() if hasattr(rng_or_u, "random") else float(rng_or_u)
    return int(_inverse_cdf(p, np.cumsum(p), u))


def unlocking_set(arm: int, m: int, grid: ThresholdGrid) -> np.ndarray:
    """Arms whose miscoverage is inferable after playing ``arm``: all of them on
    coverage, otherwise the played arm and every larger threshold."""
    if not 0 <= arm < grid.K:
        raise IndexError(arm)
    if m == 0:
        return np.arange(grid.K)
    return np.arange(arm, grid.K)


def estimator_bandit(arm: int, gain: float, probs, beta: float) -> np.ndarray:
    p = np.ascontiguousarray(probs, dtype=float)
    g = np.zeros_like(p)
    g[arm] = gain
    out = np.empty_like(p)
    _estimate_into(0, arm, 0, 0, p, np.cumsum(p), beta, g, g, False, out)
    return out


def _prepare(arm, m, gains, probs, covered):
    p = np.ascontiguousarray(probs, dtype=float)
    g = np.ascontiguousarray(gains, dtype=float)
    n_cov = 0
    if m == 0:
        if covered is None:
            raise ValueError("the covered mask is required when m == 0")
        cov = np.asarray(covered, dtype=bool)
        n_cov = int(cov.sum())
        if n_cov == 0:
            raise RuntimeError("empty covered set: threshold 0 always covers")
        if not cov[:n_cov].all():
            raise ValueError("covered arms must form a prefix of the grid")
        if not cov[arm]:
            raise ValueError("played arm is not covered although m == 0")
    return p, g, n_cov


def estimator_unlock(arm: int, m: int, gains, probs, beta: float, covered=None) -> np.ndarray:
    """Unlock estimator; ``gains`` must hold true gains on the unlocking set.

    ``covered`` is the boolean mask of covering arms (required when ``m == 0``).
    """
    p, g, n_cov = _prepare(arm, m, gains, probs, covered)
    out = np.empty_like(p)
    _estimate_into(1, arm, m, n_cov, p, np.cumsum(p), beta, g, g, False, out)
    return out


def estimator_unlock_plus(arm: int, m: int, gains, pseudo_gains, probs, beta: float,
                          covered=None) -> np.ndarray:
    """Unlock+ estimator.

    ``gains`` holds true gains on the unlocking set; for ``m == 1`` the arms
    below ``arm`` are estimated from ``pseudo_gains`` instead.
    """
    p, g, n_cov = _prepare(arm, m, gains, probs, covered)
    q = np.ascontiguousarray(pseudo_gains, dtype=float)
    if m == 0:
        g_cov, g_mis = g, g
    else:
        g_mis = g.copy()
        g_mis[:arm] = q[:arm]
        g_cov = g_mis
    out = np.empty_like(p)
    _estimate_into(2, arm, m, n_cov, p, np.cumsum(p), beta, g_cov, g_mis, False, out)
    return out


@dataclass
class LearnerState:
    cum_gain: np.ndarray
    hyper: HyperParams
    variant: str = "unlock-plus"

    def __post_init__(self):
        variant_code(self.variant)

    @classmethod
    def initial(cls, K: int, hyper: HyperParams, variant: str = "unlock-plus") -> "LearnerState":
        return cls(np.zeros(K), hyper, variant)


def update(state: LearnerState, estimate) -> LearnerState:
    """New state with the estimate added to the cumulative gains."""
    est = np.asarray(estimate, dtype=float)
    if est.shape != state.cum_gain.shape:
        raise ValueError(f"estimate has shape {est.shape}, expected {state.cum_gain.shape}")
    if not np.all(np.isfinite(est)):
        raise ValueError("non-finite gain estimate")
    return replace(state, cum_gain=state.cum_gain + est)


class Learner:
    """Stateful learner used by the harness.

    Only ``observe`` receives information about the round, and only through a
    :class:`Feedback`; the learner never sees set sizes or other arms' losses.
    """

    def __init__(self, variant: str, grid: ThresholdGrid, params: LossParams, hyper: HyperParams,
                 force_singleton: bool = False):
        self.variant = variant
        self.code = variant_code(variant)
        self.grid = grid
        self.hyper = hyper
        self.force_singleton = bool(force_singleton)
        self.values = np.ascontiguousarray(grid.values)
        self.g_cov, self.g_mis = gain_tables(grid, params)
        K = grid.K
        self.cum_gain = np.zeros(K)
        self.p = np.empty(K)
        self.cdf = np.empty(K)
        self._est = np.empty(K)

    @property
    def state(self) -> LearnerState:
        return LearnerState(self.cum_gain.copy(), self.hyper, self.variant)

    def strategy(self) -> np.ndarray:
        _strategy_into(self.cum_gain, self.hyper.eta, self.hyper.gamma, self.p, self.cdf)
        return self.p

    def sample(self, u: float) -> int:
        return _inverse_cdf(self.p, self.cdf, u)

    def observe(self, arm: int, feedback: Feedback) -> np.ndarray:
        """Build the gain estimate for this round and accumulate it."""
        n_cov = 0
        if feedback.m == 0:
            n_cov = _covered_count(self.values, feedback.f_star_revealed)
        _estimate_into(self.code, arm, feedback.m, n_cov, self.p, self.cdf, self.hyper.beta,
                       self.g_cov, self.g_mis, self.force_singleton, self._est)
        self.cum_gain += self._est
        if not math.isfinite(self.cum_gain[arm]):
            raise FloatingPointError("non-finite cumulative gain")
        return self._est
