"""Environments producing the per-round ground truth.

Each round the environment emits a :class:`StepTruth`: the true label's score
``f_star`` and the size of the conformal set at every grid threshold.  The
harness masks this into semi-bandit feedback before the learner sees it.

Classification-style streams (``iid``, ``exponent``, ``adaptive``) use a
universe of ``L`` labels: the true label plus ``L - 1`` decoys whose scores are
drawn independently.  Decoys are handled on the probability scale: a decoy
scores at or above threshold ``pi`` iff its uniform draw is at least the
score CDF at ``pi``, so no quantile function is ever evaluated.

The regression-style ``shift`` stream counts from explicit label scores on a
discretised response axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from numba import njit
from scipy import stats

from .grid_loss import DomainError, ThresholdGrid

SCORE_DIGITS = 9
DEFAULT_EXPONENTS = (1 / 6, 1 / 4, 1 / 2, 1 / 1.2, 1 / 3)
DEFAULT_BOUNDARIES = (10_000, 20_000, 30_000, 40_000)
ENV_KINDS = ("iid", "exponent", "shift", "adaptive", "replay")
REPLAY_HEADER = "t,f_star,set_sizes"
_CHUNK = 1024


class ReplayParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class EmptyStreamError(ValueError):
    pass


class EndOfStream(Exception):
    pass


@dataclass(frozen=True)
class StepTruth:
    t: int
    f_star: float
    set_sizes: np.ndarray

    def validate(self) -> "StepTruth":
        if not 0.0 <= self.f_star <= 1.0:
            raise DomainError(f"f_star={self.f_star} outside [0, 1]")
        s = self.set_sizes
        if np.any(s < 0) or np.any(np.diff(s) > 0):
            raise ValueError(f"set sizes must be nonnegative and nonincreasing: {s}")
        return self


def count_set_sizes(scores, grid: ThresholdGrid) -> np.ndarray:
    """``#{labels with score >= pi}`` for every grid threshold."""
    s = np.sort(np.asarray(scores, dtype=float))
    return (s.size - np.searchsorted(s, grid.values, side="left")).astype(np.int64)


def quantize_score(f):
    """Scores are carried with 9 fractional digits so replay files are exact."""
    return np.round(f, SCORE_DIGITS)


@njit(cache=True)
def _count_decoys(u, thresholds, phase, out):
    """``out[r, i] += #{j : u[r, j] >= thresholds[phase[r], i]}``.

    Each row of ``thresholds`` is nondecreasing in ``[0, 1]``.  A bucket table
    over ``[0, 1)`` locates each draw in O(1) on average.
    """
    n, m = u.shape
    P, K = thresholds.shape
    M = 4 * K
    start = np.empty((P, M + 1), np.int64)
    for q in range(P):
        k = 0
        for b in range(M + 1):
            edge = b / M
            while k < K and thresholds[q, k] <= edge:
                k += 1
            start[q, b] = k
    hist = np.zeros(K + 1, np.int64)
    for r in range(n):
        q = phase[r]
        c = thresholds[q]
        hist[:] = 0
        for j in range(m):
            x = u[r, j]
            b = int(x * M)
            k = start[q, b - 1] if b > 0 else 0
            while k < K and c[k] <= x:
                k += 1
            hist[k] += 1
        acc = 0
        for i in range(K - 1, -1, -1):
            acc += hist[i + 1]
            out[r, i] += acc


def _decoy_chain(rng, sizes, n_decoys, thr):
    # Top-down: given r decoys below c[i+1], each lands at or above c[i] with
    # probability (c[i+1] - c[i]) / c[i+1].  One binomial per threshold.
    n, K = thr.shape
    remaining = np.full(n, n_decoys, dtype=np.int64)
    acc = np.zeros(n, dtype=np.int64)
    upper = np.ones(n)
    for i in range(K - 1, -1, -1):
        c = thr[:, i]
        with np.errstate(invalid="ignore", divide="ignore"):
            q = np.where(upper > 0, (upper - c) / upper, 1.0)
        k = rng.binomial(remaining, np.clip(q, 0.0, 1.0))
        acc += k
        remaining -= k
        sizes[:, i] += acc
        upper = c


def add_decoys(rng, sizes: np.ndarray, n_decoys: int, thresholds: np.ndarray, phase=None) -> None:
    """Add ``n_decoys`` i.i.d. decoy labels per round to ``sizes`` in place.

    ``thresholds[q, i]`` is the probability that a decoy scores below grid
    threshold ``i`` in phase ``q``.  Counts are exact either way; with few
    thresholds relative to decoys a binomial chain over the thresholds is
    cheaper, otherwise every decoy is drawn and bucketed.
    """
    n, K = sizes.shape
    if n_decoys <= 0 or n == 0:
        return
    thr = np.ascontiguousarray(np.atleast_2d(thresholds), dtype=float)
    ph = np.zeros(n, np.int64) if phase is None else np.ascontiguousarray(phase, dtype=np.int64)
    if 8 * K <= n_decoys:
        _decoy_chain(rng, sizes, n_decoys, thr[ph])
    else:
        _count_decoys(rng.random((n, n_decoys)), thr, ph, sizes)


# --------------------------------------------------------------------------
# single-step generators (the batch forms below are what environments use)

def iid_batch(rng, n: int, grid: ThresholdGrid, L: int = 1000, a: float = 1.0, b: float = 1.0,
              exponent=1.0):
    """``n`` rounds of i.i.d. Beta(a, b) label scores, optionally powered by ``exponent``.

    ``exponent`` may be a scalar or a length-``n`` array (one per round).
    Returns ``(f_star, set_sizes)`` with shapes ``(n,)`` and ``(n, K)``.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    expo = np.broadcast_to(np.asarray(exponent, dtype=float), (n,))
    f = quantize_score(rng.beta(a, b, size=n) ** expo)
    sizes = (f[:, None] >= grid.values[None, :]).astype(np.int64)
    if L > 1 and n > 0:
        uniq, inverse = np.unique(expo, return_inverse=True)
        # P(score^e < pi) = P(score < pi^(1/e))
        thr = np.stack([stats.beta.cdf(grid.values ** (1.0 / e), a, b) for e in uniq])
        add_decoys(rng, sizes, L - 1, thr, inverse)
    return f, sizes


def iid_step(rng, grid: ThresholdGrid, L: int = 1000, a: float = 1.0, b: float = 1.0, t: int = 1) -> StepTruth:
    f, s = iid_batch(rng, 1, grid, L, a, b)
    return StepTruth(t, float(f[0]), s[0])


def exponent_for(t: int, exponents=DEFAULT_EXPONENTS, boundaries=DEFAULT_BOUNDARIES) -> float:
    """Phase exponent at 1-indexed round ``t``; phase k covers ``(b_{k-1}, b_k]``."""
    return exponents[int(np.searchsorted(boundaries, t, side="left"))]


def exponent_schedule_step(rng, t: int, grid: ThresholdGrid, exponents=DEFAULT_EXPONENTS,
                           boundaries=DEFAULT_BOUNDARIES, L: int = 1000, a: float = 1.0,
                           b: float = 1.0) -> StepTruth:
    f, s = iid_batch(rng, 1, grid, L, a, b, exponent=exponent_for(t, exponents, boundaries))
    return StepTruth(t, float(f[0]), s[0])


def shift_batch(rng, n: int, grid: ThresholdGrid, post: np.ndarray, L: int = 20,
                sigma_pre: float = 0.05, sigma_post: float = 0.15, residual_bound: float = 1.0):
    """Regression analogue: a prediction on a response axis of ``L`` bins.

    Each label (bin) is scored ``1 - |center - prediction| / residual_bound``
    (clipped to [0, 1]); the true response is the prediction plus Gaussian
    noise whose scale switches from ``sigma_pre`` to ``sigma_post`` where
    ``post`` is true.
    """
    centers = (np.arange(L) + 0.5) / L
    pred = rng.random(n)
    noise = rng.standard_normal(n)
    sigma = np.where(post, sigma_post, sigma_pre)
    y = np.clip(pred + sigma * noise, 0.0, 1.0)
    true_bin = np.minimum((y * L).astype(np.int64), L - 1)
    scores = quantize_score(np.clip(1.0 - np.abs(centers[None, :] - pred[:, None]) / residual_bound, 0.0, 1.0))
    f = scores[np.arange(n), true_bin]
    sizes = (scores[:, :, None] >= grid.values[None, None, :]).sum(axis=1)
    return f, sizes.astype(np.int64)


def covariate_shift_step(rng, t: int, T: int, grid: ThresholdGrid, shift: float = 1 / 3, **params) -> StepTruth:
    boundary = shift_boundary(T, shift)
    f, s = shift_batch(rng, 1, grid, np.array([t > boundary]), **params)
    return StepTruth(t, float(f[0]), s[0])


def shift_boundary(T: int, shift: float) -> int:
    """Last pre-shift round (1-indexed)."""
    if not 0.0 < shift < 1.0:
        raise ValueError("shift fraction must lie in (0, 1)")
    return int(round(shift * T))


def most_played(arms, K: int) -> int:
    """Most frequent arm in ``arms``; ties go to the smaller threshold."""
    return int(np.argmax(np.bincount(np.asarray(arms, dtype=np.int64), minlength=K)))


def default_margin(grid: ThresholdGrid) -> float:
    """0.01, or half the grid spacing when the grid is finer than that."""
    return min(0.01, float(np.min(np.diff(grid.values))) / 2)


def adaptive_step(history_arms, rng, t: int, grid: ThresholdGrid, L: int = 1000, window: int = 100,
                  eps: Optional[float] = None) -> StepTruth:
    """Threshold-tracking adversary.

    Puts the true label's score just below the learner's most played recent
    threshold, so every arm at or above that threshold miscovers.
    """
    recent = np.asarray(history_arms[-window:], dtype=np.int64) if len(history_arms) else ()
    if len(recent) == 0:
        return iid_step(rng, grid, L, t=t)
    if eps is None:
        eps = default_margin(grid)
    pi_hat = grid.values[most_played(recent, grid.K)]
    f = float(quantize_score(max(0.0, pi_hat - eps)))
    sizes = (f >= grid.values).astype(np.int64)[None, :]
    add_decoys(rng, sizes, L - 1, grid.values)
    return StepTruth(t, f, sizes[0])


# --------------------------------------------------------------------------
# environment objects

@dataclass
class EnvSpec:
    """Which stream to generate and its kind-specific parameters."""

    kind: str = "iid"
    params: dict = field(default_factory=dict)
    path: Optional[str] = None

    _ALLOWED = {
        "iid": {"L", "a", "b"},
        "exponent": {"L", "a", "b", "exponents", "boundaries"},
        "shift": {"L", "shift", "sigma_pre", "sigma_post", "residual_bound"},
        "adaptive": {"L", "window", "eps"},
        "replay": set(),
    }

    def __post_init__(self):
        if self.kind.startswith("replay:"):
            self.path = self.kind.split(":", 1)[1]
            self.kind = "replay"
        if self.kind not in ENV_KINDS:
            raise ValueError(f"unknown environment kind {self.kind!r}; choose from {ENV_KINDS}")
        extra = set(self.params) - self._ALLOWED[self.kind]
        if extra:
            raise ValueError(f"unknown parameters for {self.kind!r} environment: {sorted(extra)}")
        p = self.params
        if "L" in p and int(p["L"]) < 1:
            raise ValueError("L must be >= 1")
        if self.kind == "replay" and not self.path:
            raise ValueError("replay environment needs a path")
        if self.kind == "exponent":
            ex = p.get("exponents", DEFAULT_EXPONENTS)
            bd = p.get("boundaries", DEFAULT_BOUNDARIES)
            if len(ex) == 0 or len(ex) != len(bd) + 1 or list(bd) != sorted(bd):
                raise ValueError("exponent schedule needs len(boundaries) + 1 exponents and sorted boundaries")
        if self.kind == "shift":
            s = p.get("shift", 1 / 3)
            if not 0.0 < s < 1.0:
                raise ValueError("shift fraction must lie in (0, 1)")
        if self.kind == "adaptive" and p.get("eps") is not None and not 0.0 < p["eps"]:
            raise ValueError("eps must be positive")

    @property
    def label(self) -> str:
        return f"replay:{self.path}" if self.kind == "replay" else self.kind

    def to_dict(self) -> dict:
        return {"kind": self.label, "params": dict(self.params)}


class Environment:
    """Base class; ``step`` is called once per round with 1-indexed ``t``."""

    adaptive = False

    def __init__(self, grid: ThresholdGrid):
        self.grid = grid

    def step(self, t: int, history_arms=None) -> StepTruth:
        raise NotImplementedError


class _BufferedEnv(Environment):
    """Generates rounds in fixed-size chunks; the stream does not depend on T."""

    def __init__(self, grid: ThresholdGrid, rng):
        super().__init__(grid)
        self.rng = rng
        self._f = np.empty(0)
        self._sizes = np.empty((0, grid.K), dtype=np.int64)
        self._start = 1

    def _generate(self, t0: int, n: int):
        raise NotImplementedError

    def step(self, t: int, history_arms=None) -> StepTruth:
        i = t - self._start
        if i >= self._f.size:
            self._start = t
            self._f, self._sizes = self._generate(t, _CHUNK)
            i = 0
        return StepTruth(t, float(self._f[i]), self._sizes[i])


class IIDEnv(_BufferedEnv):
    def __init__(self, grid, rng, L=1000, a=1.0, b=1.0):
        super().__init__(grid, rng)
        self.L, self.a, self.b = int(L), float(a), float(b)

    def _generate(self, t0, n):
        return iid_batch(self.rng, n, self.grid, self.L, self.a, self.b)


class ExponentScheduleEnv(_BufferedEnv):
    def __init__(self, grid, rng, L=1000, a=1.0, b=1.0, exponents=DEFAULT_EXPONENTS,
                 boundaries=DEFAULT_BOUNDARIES):
        super().__init__(grid, rng)
        self.L, self.a, self.b = int(L), float(a), float(b)
        self.exponents = tuple(float(e) for e in exponents)
        self.boundaries = tuple(int(x) for x in boundaries)

    def _generate(self, t0, n):
        ts = np.arange(t0, t0 + n)
        expo = np.asarray(self.exponents)[np.searchsorted(self.boundaries, ts, side="left")]
        return iid_batch(self.rng, n, self.grid, self.L, self.a, self.b, exponent=expo)


class CovariateShiftEnv(_BufferedEnv):
    def __init__(self, grid, rng, T, L=20, shift=1 / 3, sigma_pre=0.05, sigma_post=0.15,
                 residual_bound=1.0):
        super().__init__(grid, rng)
        self.boundary = shift_boundary(T, shift)
        self.kw = dict(L=int(L), sigma_pre=sigma_pre, sigma_post=sigma_post, residual_bound=residual_bound)

    def _generate(self, t0, n):
        post = np.arange(t0, t0 + n) > self.boundary
        return shift_batch(self.rng, n, self.grid, post, **self.kw)


class AdaptiveEnv(Environment):
    """Stateful form of :func:`adaptive_step`.

    Decoy scores do not depend on the learner, so their counts are drawn in
    chunks ahead of time; only the true label's score reacts to the history.
    """

    adaptive = True

    def __init__(self, grid, rng, L=1000, window=100, eps=None):
        super().__init__(grid)
        spacing = float(np.min(np.diff(grid.values)))
        eps = default_margin(grid) if eps is None else eps
        if not 0.0 < eps < spacing:
            raise ValueError(f"eps must lie in (0, {spacing}) for this grid")
        self.rng, self.L, self.window, self.eps = rng, int(L), int(window), float(eps)
        self._decoys = np.empty((0, grid.K), dtype=np.int64)
        self._start = 1

    def _decoy_row(self, t):
        i = t - self._start
        if i >= self._decoys.shape[0]:
            self._start, i = t, 0
            self._decoys = np.zeros((_CHUNK, self.grid.K), dtype=np.int64)
            add_decoys(self.rng, self._decoys, self.L - 1, self.grid.values)
        return self._decoys[i]

    def step(self, t, history_arms=None):
        values = self.grid.values
        recent = () if history_arms is None else history_arms[-self.window:]
        if len(recent) == 0:
            f = float(quantize_score(self.rng.random()))
        else:
            pi_hat = values[most_played(recent, self.grid.K)]
            f = float(quantize_score(max(0.0, pi_hat - self.eps)))
        return StepTruth(t, f, self._decoy_row(t) + (f >= values))


# --------------------------------------------------------------------------
# replay files

def format_replay_row(truth: StepTruth) -> str:
    sizes = "|".join(str(int(s)) for s in truth.set_sizes)
    return f"{truth.t},{truth.f_star:.{SCORE_DIGITS}f},{sizes}"


def write_replay(path, truths) -> int:
    """Write a stream of :class:`StepTruth` rows; returns the number of rows."""
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(REPLAY_HEADER + "\n")
        for tr in truths:
            fh.write(format_replay_row(tr) + "\n")
            n += 1
    return n


def parse_replay_row(line: str, K: int, lineno: int) -> StepTruth:
    parts = line.rstrip("\n").split(",")
    if len(parts) != 3:
        raise ReplayParseError(lineno, f"expected 3 columns, got {len(parts)}")
    try:
        t = int(parts[0])
        f = float(parts[1])
        sizes = np.array([int(x) for x in parts[2].split("|")], dtype=np.int64)
    except ValueError as exc:
        raise ReplayParseError(lineno, f"non-numeric field ({exc})") from None
    if sizes.size != K:
        raise ReplayParseError(lineno, f"expected {K} set sizes, got {sizes.size}")
    if np.any(sizes < 0) or np.any(np.diff(sizes) > 0):
        raise ReplayParseError(lineno, "set sizes must be nonnegative and nonincreasing")
    if not math.isfinite(f) or not 0.0 <= f <= 1.0:
        raise DomainError(f"line {lineno}: f_star={parts[1]} outside [0, 1]")
    return StepTruth(t, f, sizes)


class ReplayReader:
    """Sequential reader over a replay file (or any text stream)."""

    def __init__(self, source, K: int):
        self.K = K
        self._fh = open(source, encoding="utf-8") if isinstance(source, (str, Path)) else source
        header = self._fh.readline()
        if header.strip() != REPLAY_HEADER:
            raise ReplayParseError(1, f"expected header {REPLAY_HEADER!r}")
        self.lineno = 1

    def next(self) -> StepTruth:
        while True:
            line = self._fh.readline()
            self.lineno += 1
            if not line:
                raise EndOfStream()
            if line.strip():
                return parse_replay_row(line, self.K, self.lineno)

    def close(self):
        self._fh.close()

    def __iter__(self):
        while True:
            try:
                yield self.next()
            except EndOfStream:
                return


def replay_step(reader: ReplayReader) -> StepTruth:
    return reader.next()


class ReplayEnv(Environment):
    def __init__(self, grid, source):
        super().__init__(grid)
        self.reader = ReplayReader(source, grid.K)
        try:
            self._first = self.reader.next()
        except EndOfStream:
            self.reader.close()
            raise EmptyStreamError("empty stream: replay file has no rows") from None

    def step(self, t, history_arms=None):
        if self._first is not None:
            tr, self._first = self._first, None
            return tr
        try:
            return self.reader.next()
        except EndOfStream:
            raise EndOfStream(f"replay stream ended before round {t}") from None


class MemoryEnv(Environment):
    """Replays an in-memory sequence of :class:`StepTruth`."""

    def __init__(self, grid, truths):
        super().__init__(grid)
        self.truths = list(truths)
        if not self.truths:
            raise EmptyStreamError("empty stream")

    def step(self, t, history_arms=None):
        return self.truths[t - 1]


def make_environment(spec: EnvSpec, grid: ThresholdGrid, T: int, rng) -> Environment:
    p = dict(spec.params)
    if spec.kind == "iid":
        return IIDEnv(grid, rng, **p)
    if spec.kind == "exponent":
        return ExponentScheduleEnv(grid, rng, **p)
    if spec.kind == "shift":
        return CovariateShiftEnv(grid, rng, T, **p)
    if spec.kind == "adaptive":
        return AdaptiveEnv(grid, rng, **p)
    return ReplayEnv(grid, spec.path)


def generate_stream(spec: EnvSpec, grid: ThresholdGrid, T: int, rng):
    """Materialise ``T`` rounds of a non-adaptive environment."""
    env = make_environment(spec, grid, T, rng)
    if env.adaptive:
        raise ValueError("an adaptive environment has no learner-free stream")
    for t in range(1, T + 1):
        yield env.step(t)
