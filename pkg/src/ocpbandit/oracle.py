"""Brute-force references for the test suite.

Everything here is written for clarity on tiny instances (K <= 5, T <= 50):
explicit loops, no shared kernels with the production learners.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .environments import MemoryEnv, StepTruth, count_set_sizes, quantize_score
from .grid_loss import LossParams, ThresholdGrid, loss, normalized_gain
from .harness import miscoverage_rate, inefficiency, regret, run
from .learners import HyperParams, variant_code

MAX_K = 5
MAX_T = 50


@dataclass
class TinyInstance:
    grid: ThresholdGrid
    params: LossParams
    f_star: np.ndarray
    losses: np.ndarray  # T x K
    set_sizes: np.ndarray  # T x K

    def __post_init__(self):
        T, K = self.losses.shape
        if K > MAX_K or T > MAX_T:
            raise ValueError(f"tiny instances have K <= {MAX_K}, T <= {MAX_T}")
        lo, hi = self.params.loss_min, self.params.loss_max
        if np.any(self.losses < lo) or np.any(self.losses > hi):
            raise ValueError("loss entries outside [loss_min, loss_max]")
        for t in range(T):
            for i, pi in enumerate(self.grid.values):
                m = 1 if self.f_star[t] < pi else 0
                if self.losses[t, i] != loss(pi, m, self.params):
                    raise ValueError(f"loss[{t}, {i}] inconsistent with f_star")

    @property
    def T(self) -> int:
        return self.losses.shape[0]

    @property
    def K(self) -> int:
        return self.losses.shape[1]

    @classmethod
    def from_scores(cls, f_star, grid: ThresholdGrid, params: LossParams, set_sizes=None) -> "TinyInstance":
        f = np.asarray(f_star, dtype=float)
        rows = []
        for ft in f:
            rows.append([loss(pi, 1 if ft < pi else 0, params) for pi in grid.values])
        if set_sizes is None:
            set_sizes = np.array([count_set_sizes([ft], grid) for ft in f], dtype=np.int64)
        return cls(grid, params, f, np.array(rows, dtype=float), np.asarray(set_sizes, dtype=np.int64))

    @classmethod
    def random(cls, rng, K: Optional[int] = None, T: Optional[int] = None, alpha: Optional[float] = None,
               L: int = 6) -> "TinyInstance":
        K = int(rng.integers(2, MAX_K + 1)) if K is None else K
        T = int(rng.integers(1, MAX_T + 1)) if T is None else T
        alpha = float(rng.uniform(0.02, 0.48)) if alpha is None else alpha
        grid = ThresholdGrid.uniform(K)
        params = LossParams.for_horizon(alpha, 40.0, T)
        # the true label plus L - 1 decoys, all scored explicitly
        scores = quantize_score(rng.random((T, L)))
        f = scores[:, 0]
        sizes = np.array([count_set_sizes(row, grid) for row in scores])
        return cls.from_scores(f, grid, params, sizes)

    def truths(self) -> list[StepTruth]:
        return [StepTruth(t + 1, float(self.f_star[t]), self.set_sizes[t]) for t in range(self.T)]


def best_arm_bruteforce(instance) -> tuple[int, float]:
    """Exhaustive column sums; ties go to the smaller threshold."""
    losses = instance.losses if hasattr(instance, "losses") else np.asarray(instance, dtype=float)
    T, K = losses.shape
    best, best_sum = 0, None
    for i in range(K):
        total = 0.0
        for t in range(T):
            total += losses[t, i]
        if best_sum is None or total < best_sum:
            best, best_sum = i, total
    return best, best_sum


# --------------------------------------------------------------------------
# estimator expectations

def _estimate(kind: str, arm: int, m: int, n_cov: int, p, beta: float, g_cov, g_mis):
    """Straight-line estimator formulas, one arm at a time."""
    K = len(p)
    code = variant_code(kind)
    prefix = [sum(p[: j + 1]) for j in range(K)]
    out = [0.0] * K
    if code == 0:
        for j in range(K):
            out[j] = beta / p[j]
        out[arm] += (g_mis[arm] if m else g_cov[arm]) / p[arm]
        return out
    if code == 1:
        members = range(n_cov) if m == 0 else range(arm, K)
        mass = sum(p[j] for j in members)
        for j in range(K):
            out[j] = beta / p[j]
        for j in members:
            out[j] += (g_cov[j] if m == 0 else g_mis[j]) / mass
        return out
    if m == 0:
        mass = prefix[n_cov - 1]
        for j in range(K):
            if j < n_cov:
                out[j] = g_cov[j] / mass + (1.0 + 1.0 / mass) * beta
            else:
                out[j] = g_mis[j] + beta / prefix[j]
    else:
        for j in range(K):
            if j < arm:
                out[j] = g_mis[j] + (1.0 + 1.0 / p[j]) * beta
            else:
                out[j] = g_mis[j] + beta / prefix[j]
    return out


@dataclass
class ExpectationReport:
    expected: np.ndarray  # sum over played arms of p(arm) * estimate vector
    branch_inner: np.ndarray  # E_{pi ~ p} estimate(pi | arm) for each played arm
    branch_gain: np.ndarray  # true gain of the played arm
    branch_beta: np.ndarray  # part of branch_inner coming from beta terms
    C_t: np.ndarray  # per-branch constant in front of beta
    residual: np.ndarray  # branch_inner - gain - beta part bound, the scale-order slack
    spread: float  # largest gain difference within one miscoverage class


def gain_spread(params: LossParams) -> float:
    """Largest gap between two arms' gains that share a miscoverage bit.

    Gains only differ through the inefficiency term, so this is of the order
    of the decay scale; it bounds every residual the expectations leave.
    """
    a = params.alpha
    cs = params.c * a * params.scale
    return cs * (1.0 + 1.0 / (1.0 - a) - 1.0 / (1.0 + a * (1.0 - 2.0 * a))) / params.loss_diff


def estimator_expectation_exact(kind: str, probs, grid: ThresholdGrid, params: LossParams,
                                f_star: float, beta: float) -> ExpectationReport:
    """Enumerate every possible played arm and average the estimate.

    Gains come from full knowledge of ``f_star``; the learner-side pseudo-gain
    equals the miscovered gain, so one table serves both.
    """
    p = [float(x) for x in probs]
    K = len(p)
    g_cov = [normalized_gain(loss(pi, 0, params), params) for pi in grid.values]
    g_mis = [normalized_gain(loss(pi, 1, params), params) for pi in grid.values]
    n_cov = sum(1 for pi in grid.values if f_star >= pi)
    covered_mass = sum(p[:n_cov])
    ratio = (1.0 - covered_mass) / covered_mass
    expected = np.zeros(K)
    inner = np.zeros(K)
    gains = np.zeros(K)
    beta_part = np.zeros(K)
    C_t = np.zeros(K)
    for arm in range(K):
        m = 0 if arm < n_cov else 1
        est = _estimate(kind, arm, m, n_cov, p, beta, g_cov, g_mis)
        no_beta = _estimate(kind, arm, m, n_cov, p, 0.0, g_cov, g_mis)
        expected += p[arm] * np.asarray(est)
        inner[arm] = sum(p[j] * est[j] for j in range(K))
        beta_part[arm] = inner[arm] - sum(p[j] * no_beta[j] for j in range(K))
        gains[arm] = g_mis[arm] if m else g_cov[arm]
        if variant_code(kind) == 2:
            C_t[arm] = 1.0 + (1.0 if m == 0 else arm) + ratio
        else:
            C_t[arm] = float(K)
    residual = inner - gains - C_t * beta
    return ExpectationReport(expected, inner, gains, beta_part, C_t, residual, gain_spread(params))


# --------------------------------------------------------------------------
# dual-implementation cross-check

@dataclass
class CrossCheck:
    passed: bool
    first_diff: Optional[int] = None
    message: str = ""

    def __bool__(self):
        return self.passed


def micro_replay_crosscheck(instance: TinyInstance, variant: str, seed: int, reference: Callable,
                            hyper: Optional[HyperParams] = None, env=None, tol: float = 1e-12) -> CrossCheck:
    """Run the instance through the harness and through ``reference``.

    ``reference(instance, variant, hyper, seed)`` must return
    ``(arms, strategies, summary)`` where ``summary`` holds ``MC``, ``Ineff``
    and ``Reg``.  ``env`` replaces the in-memory stream (for replay files).
    """
    hyper = hyper or HyperParams(eta=0.1, gamma=0.2, beta=0.05)
    env = env if env is not None else MemoryEnv(instance.grid, instance.truths())
    log = run(env, variant, instance.grid, instance.params, hyper, instance.T, seed=seed, keep_strategies=True)
    arms, strategies, summary = reference(instance, variant, hyper, seed)
    for t in range(instance.T):
        if int(arms[t]) != int(log.arm[t]):
            return CrossCheck(False, t + 1, f"arm {log.arm[t]} vs reference {arms[t]}")
        if np.max(np.abs(np.asarray(strategies[t]) - log.strategies[t])) > tol:
            return CrossCheck(False, t + 1, "strategies differ")
    ours = {"MC": miscoverage_rate(log), "Ineff": inefficiency(log), "Reg": regret(log)}
    for key, val in ours.items():
        if abs(val - summary[key]) > tol * max(1.0, abs(val)):
            return CrossCheck(False, None, f"{key}: {val} vs reference {summary[key]}")
    return CrossCheck(True)
