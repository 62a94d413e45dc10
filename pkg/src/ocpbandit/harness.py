"""Run the sequential game, log trajectories and compute metrics and bound checks.

The harness is the only place with full knowledge of a round: it sees the
environment's :class:`StepTruth`, masks it into a :class:`Feedback` for the
learner, and keeps the true score so that every arm's loss (and hence the
regret) can be recomputed afterwards.
"""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .environments import Environment, EnvSpec, make_environment
from .grid_loss import LossParams, ThresholdGrid, a_term, loss_tables
from .learners import Feedback, HyperParams, Learner, _covered_count, variant_code

__all__ = [
    "Feedback", "StepRecord", "RunLog", "RunSummary", "Lemma1Result", "BoundReport",
    "run", "summarize", "miscoverage_rate", "inefficiency", "regret", "arm_losses",
    "best_arm", "regret_from_rows", "c_mc", "lemma1_check", "compute_C", "theorem_bound_rhs",
    "seed_streams", "write_step_log", "read_step_log", "write_summary", "write_aggregate",
    "aggregate_rows", "run_suite", "worker_count",
]

NUM_FMT = "%.9g"
STEP_HEADER = ("t", "arm", "pi", "m", "loss", "set_size", "mc_running", "ineff_running")
LEMMA_TOL = 1e-9


@dataclass(frozen=True)
class StepRecord:
    t: int
    arm: int
    pi: float
    m: int
    loss: float
    set_size: int
    f_star: float
    barrier: bool
    c_t: float
    loss_row: Optional[np.ndarray] = None


@dataclass
class RunLog:
    """Columnar trajectory of one run.

    ``f_star`` and ``n_covered`` are harness-only knowledge; ``barrier`` records
    that the learner-visible channel held no score on every miscovered round.
    """

    grid: ThresholdGrid
    params: LossParams
    t: np.ndarray
    arm: np.ndarray
    m: np.ndarray
    loss: np.ndarray
    set_size: np.ndarray
    f_star: np.ndarray
    n_covered: np.ndarray
    barrier: np.ndarray
    c_t: np.ndarray
    strategies: Optional[np.ndarray] = None

    @classmethod
    def empty(cls, grid, params, T, keep_strategies=False):
        return cls(
            grid, params,
            t=np.arange(1, T + 1, dtype=np.int64),
            arm=np.zeros(T, np.int64), m=np.zeros(T, np.int8), loss=np.zeros(T),
            set_size=np.zeros(T, np.int64), f_star=np.zeros(T), n_covered=np.zeros(T, np.int64),
            barrier=np.zeros(T, bool), c_t=np.zeros(T),
            strategies=np.zeros((T, grid.K)) if keep_strategies else None,
        )

    def __len__(self):
        return self.t.size

    @property
    def T(self) -> int:
        return self.t.size

    @property
    def pi(self) -> np.ndarray:
        return self.grid.values[self.arm]

    def loss_rows(self) -> np.ndarray:
        """Full ``T x K`` loss matrix, rebuilt from the logged true scores."""
        covered, missed = loss_tables(self.grid, self.params)
        mis = self.f_star[:, None] < self.grid.values[None, :]
        return np.where(mis, missed[None, :], covered[None, :])

    def records(self, with_rows: bool = False):
        rows = self.loss_rows() if with_rows else None
        pis = self.pi
        for i in range(self.T):
            yield StepRecord(
                int(self.t[i]), int(self.arm[i]), float(pis[i]), int(self.m[i]), float(self.loss[i]),
                int(self.set_size[i]), float(self.f_star[i]), bool(self.barrier[i]), float(self.c_t[i]),
                None if rows is None else rows[i],
            )

    def truncated(self, T: int) -> "RunLog":
        """The first ``T`` rounds (metrics of a prefix of the run)."""
        cut = {k: getattr(self, k)[:T] for k in
               ("t", "arm", "m", "loss", "set_size", "f_star", "n_covered", "barrier", "c_t")}
        strat = None if self.strategies is None else self.strategies[:T]
        return RunLog(self.grid, self.params, strategies=strat, **cut)


def seed_streams(seed: int):
    """Independent learner and environment generators for one run seed."""
    learner_ss, env_ss = np.random.SeedSequence(int(seed)).spawn(2)
    return np.random.default_rng(learner_ss), np.random.default_rng(env_ss)


def run(env, variant: str, grid: ThresholdGrid, params: LossParams, hyper: HyperParams, T: int,
        seed: int = 0, force_singleton: bool = False, initial_gain=None,
        keep_strategies: bool = False, observer: Optional[Callable] = None) -> RunLog:
    """Play ``T`` rounds of ``variant`` against ``env``.

    ``env`` is an :class:`EnvSpec` (built with the run's environment stream)
    or a ready :class:`Environment`.  ``observer(t, arm, probs, estimate,
    feedback)`` is called after every update; the arrays are reused buffers.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    learner_rng, env_rng = seed_streams(seed)
    if isinstance(env, EnvSpec):
        env = make_environment(env, grid, T, env_rng)
    if env.grid.K != grid.K:
        raise ValueError(f"environment has K={env.grid.K}, learner grid has K={grid.K}")
    learner = Learner(variant, grid, params, hyper, force_singleton=force_singleton)
    if initial_gain is not None:
        learner.cum_gain[:] = np.asarray(initial_gain, dtype=float)
    covered_loss, missed_loss = loss_tables(grid, params)
    values = np.ascontiguousarray(grid.values)
    log = RunLog.empty(grid, params, T, keep_strategies)
    arms = log.arm
    adaptive = env.adaptive
    u = np.empty(0)

    for i in range(T):
        t = i + 1
        if i % 1024 == 0:
            u = learner_rng.random(min(1024, T - i))
        p = learner.strategy()
        arm = learner.sample(u[i % 1024])
        truth = env.step(t, arms[:i] if adaptive else None)
        f = truth.f_star
        n_cov = _covered_count(values, f)
        m = 0 if arm < n_cov else 1
        fb = Feedback(0, f) if m == 0 else Feedback(1)
        # full-knowledge quantities are read before the learner moves on
        mass = learner.cdf[n_cov - 1]
        log.c_t[i] = 1.0 + (1.0 if m == 0 else arm) + (1.0 - mass) / mass
        if keep_strategies:
            log.strategies[i] = p
        est = learner.observe(arm, fb)
        if observer is not None:
            observer(t, arm, learner.p, est, fb)
        arms[i] = arm
        log.m[i] = m
        log.loss[i] = missed_loss[arm] if m else covered_loss[arm]
        log.set_size[i] = truth.set_sizes[arm]
        log.f_star[i] = f
        log.n_covered[i] = n_cov
        log.barrier[i] = fb.f_star_revealed is None if m else True
    return log


# --------------------------------------------------------------------------
# metrics

def _nonempty(log):
    if len(log) == 0:
        raise ValueError("empty log")


def miscoverage_rate(log) -> float:
    _nonempty(log)
    return float(np.mean(log.m))


def inefficiency(log) -> float:
    _nonempty(log)
    return float(np.mean(log.set_size))


def arm_losses(log) -> np.ndarray:
    """Cumulative loss of every fixed arm over the run.

    Arm ``i`` miscovers exactly on rounds whose true score is below
    ``values[i]``, so the sums reduce to per-arm miscoverage counts.
    """
    covered, missed = loss_tables(log.grid, log.params)
    K = log.grid.K
    # n_covered == j means arms j.. miscover
    hist = np.bincount(log.n_covered, minlength=K + 1)
    n_mis = np.cumsum(hist)[:K]
    return (log.T - n_mis) * covered + n_mis * missed


def best_arm(log) -> tuple[int, float]:
    """Hindsight-best fixed arm and its cumulative loss; ties go to the smaller threshold."""
    cum = arm_losses(log)
    i = int(np.argmin(cum))
    return i, float(cum[i])


def regret(log) -> float:
    _nonempty(log)
    return float(np.sum(log.loss) - best_arm(log)[1])


def regret_from_rows(played_losses, rows) -> float:
    """Regret from an explicit ``T x K`` loss matrix and the losses actually incurred."""
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ValueError("need a nonempty T x K loss matrix")
    return float(np.sum(played_losses) - rows.sum(axis=0).min())


def c_mc(log, params: LossParams) -> tuple[float, float]:
    """Coverage offset and the scaled tightness constant from the realized counts.

    Returns ``(C_mc, C_gap_scaled)``; ``C_gap_scaled`` is ``nan`` when no
    round miscovered.
    """
    _nonempty(log)
    T, a = log.T, params.alpha
    a_played = a_term(log.pi, log.m, params)
    c1 = (T * a_term(0.0, 0, params) - float(np.sum(a_played))) / T
    n1 = int(np.sum(log.m))
    n0 = T - n1
    if n1 == 0:
        return c1, float("nan")
    gap = (1.0 - a) / a - n0 / n1
    return c1 + (n1 * (1.0 - a) - a * n0) / T, gap


@dataclass(frozen=True)
class Lemma1Result:
    passed: bool
    slack: float
    seed: Optional[int] = None

    def __bool__(self):
        return self.passed


def lemma1_check(log, params: LossParams, seed: Optional[int] = None, tol: float = LEMMA_TOL) -> Lemma1Result:
    """``MC - alpha <= Reg/T + C_mc`` on the realized trajectory; slack is RHS - LHS."""
    lhs = miscoverage_rate(log) - params.alpha
    rhs = regret(log) / log.T + c_mc(log, params)[0]
    slack = rhs - lhs
    return Lemma1Result(slack >= -tol, slack, seed)


def compute_C(log) -> float:
    """``min(mean C_t, K)`` from the logged per-round constants."""
    return float(min(np.mean(log.c_t), log.grid.K))


@dataclass(frozen=True)
class BoundReport:
    rhs: float
    vacuous: bool
    C: float


def theorem_bound_rhs(variant: str, K: int, T: int, delta: float, params: LossParams, log) -> BoundReport:
    """High-probability upper bound on ``MC - alpha`` for the variant.

    Regret bound per round, times ``loss_diff``, plus ``C_mc``.  It is only a
    reporting value; ``vacuous`` is set when it is no smaller than the largest
    possible ``MC - alpha``.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    code = variant_code(variant)
    lnk = math.log(K)
    conf = math.sqrt(K / (T * lnk)) * math.log(1.0 / delta)
    C = compute_C(log)
    if code == 0:
        per_round = 5.15 * math.sqrt(K * lnk / T) + conf
    elif code == 1:
        per_round = 5.15 * math.sqrt(K * lnk / T) + conf + params.scale
    else:
        per_round = math.sqrt(C * lnk / T) + 4.15 * math.sqrt(K * lnk / T) + conf + 2 * params.scale
    rhs = params.loss_diff * per_round + c_mc(log, params)[0]
    return BoundReport(rhs, rhs >= 1.0 - params.alpha, C)


# --------------------------------------------------------------------------
# summaries

@dataclass
class RunSummary:
    seed: int
    variant: str
    env: str
    K: int
    T: int
    alpha: float
    c: float
    scale: float
    delta: float
    eta: float
    gamma: float
    beta: float
    gamma_clamped: bool
    MC: float
    Ineff: float
    Reg: float
    best_arm: int
    C1: float
    C_mc: float
    C_gap_scaled: float
    N0: int
    N1: int
    lemma1_pass: bool
    lemma1_slack: float
    C: float
    bound_rhs: float
    bound_vacuous: bool
    config_digest: str = ""
    arm_losses: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(log, variant: str, hyper: HyperParams, delta: float = 0.05, seed: int = 0,
              env_label: str = "", config_digest: str = "") -> RunSummary:
    params = log.params
    cmc, gap = c_mc(log, params)
    c1 = (log.T * a_term(0.0, 0, params) - float(np.sum(a_term(log.pi, log.m, params)))) / log.T
    lem = lemma1_check(log, params, seed)
    bound = theorem_bound_rhs(variant, log.grid.K, log.T, delta, params, log)
    arm, _ = best_arm(log)
    n1 = int(np.sum(log.m))
    return RunSummary(
        seed=int(seed), variant=variant, env=env_label, K=log.grid.K, T=log.T,
        alpha=params.alpha, c=params.c, scale=params.scale, delta=delta,
        eta=hyper.eta, gamma=hyper.gamma, beta=hyper.beta, gamma_clamped=hyper.clamped,
        MC=miscoverage_rate(log), Ineff=inefficiency(log), Reg=regret(log), best_arm=arm,
        C1=c1, C_mc=cmc, C_gap_scaled=gap, N0=log.T - n1, N1=n1,
        lemma1_pass=lem.passed, lemma1_slack=lem.slack, C=bound.C,
        bound_rhs=bound.rhs, bound_vacuous=bound.vacuous, config_digest=config_digest,
        arm_losses=[float(x) for x in arm_losses(log)],
    )


# --------------------------------------------------------------------------
# output files

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return NUM_FMT % x


def write_step_log(path, log: RunLog) -> None:
    T = log.T
    steps = np.arange(1, T + 1)
    mc_run = np.cumsum(log.m) / steps
    ineff_run = np.cumsum(log.set_size) / steps
    pis = log.pi
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(STEP_HEADER) + "\n")
        for i in range(T):
            fh.write(
                f"{log.t[i]},{log.arm[i]},{NUM_FMT % pis[i]},{log.m[i]},{NUM_FMT % log.loss[i]},"
                f"{log.set_size[i]},{NUM_FMT % mc_run[i]},{NUM_FMT % ineff_run[i]}\n"
            )


def read_step_log(path) -> dict:
    """Columns of a per-step CSV as numpy arrays."""
    with open(path, encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != STEP_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = list(reader)
    cols = list(zip(*rows)) if rows else [()] * len(STEP_HEADER)
    out = {}
    for name, col in zip(STEP_HEADER, cols):
        dtype = np.int64 if name in ("t", "arm", "m", "set_size") else float
        out[name] = np.array(col, dtype=dtype)
    return out


def _round_floats(obj):
    if isinstance(obj, float):
        return float(NUM_FMT % obj) if math.isfinite(obj) else None
    if isinstance(obj, list):
        return [_round_floats(x) for x in obj]
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    return obj


def write_summary(path, summary: RunSummary) -> None:
    doc = _round_floats(summary.to_dict())
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


AGG_FIELDS = ("MC", "Ineff", "Reg", "Reg_per_T", "C_mc", "C_gap_scaled", "lemma1_slack", "bound_rhs")


def aggregate_rows(summaries: Sequence[RunSummary]) -> list[list]:
    """Per-seed rows sorted by seed, then mean, min and max rows."""
    ordered = sorted(summaries, key=lambda s: s.seed)
    table = np.array([[s.MC, s.Ineff, s.Reg, s.Reg / s.T, s.C_mc, s.C_gap_scaled, s.lemma1_slack, s.bound_rhs]
                      for s in ordered], dtype=float).reshape(len(ordered), len(AGG_FIELDS))
    rows = [[s.seed, *table[i]] for i, s in enumerate(ordered)]
    if ordered:
        # nan-aware so runs without any miscoverage do not blank the gap column
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            rows.append(["mean", *np.nanmean(table, axis=0)])
            rows.append(["min", *np.nanmin(table, axis=0)])
            rows.append(["max", *np.nanmax(table, axis=0)])
    return rows


def write_aggregate(path, summaries: Sequence[RunSummary]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(("seed",) + AGG_FIELDS) + "\n")
        for row in aggregate_rows(summaries):
            fh.write(",".join([str(row[0])] + [NUM_FMT % x for x in row[1:]]) + "\n")


# --------------------------------------------------------------------------
# suites

def worker_count(n_jobs: int) -> int:
    cap = os.environ.get("OCP_THREADS")
    n = os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, min(n, n_jobs))


def run_suite(job: Callable[[int], object], seeds: Sequence[int]) -> list:
    """Apply ``job`` to every seed on a thread pool; results come back in seed order."""
    seeds = list(seeds)
    workers = worker_count(len(seeds))
    if workers == 1:
        return [job(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, seeds))
