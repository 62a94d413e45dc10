"""Watch the running miscoverage of OCP-Unlock+ settle toward the target level.

A single i.i.d. run at the default setting (K=200 thresholds, alpha=0.15).
Early on the learner explores heavily and miscovers far more often than
alpha; as the exponential weights concentrate, the running rate drifts down.

    python demos/01_coverage_over_time.py [T]
"""

import sys

import numpy as np

from ocpbandit import EnvSpec, LossParams, ThresholdGrid, run, theorem_schedule

T = int(sys.argv[1]) if len(sys.argv) > 1 else 20_000
alpha, K = 0.15, 200

grid = ThresholdGrid.uniform(K)
params = LossParams.for_horizon(alpha, 40, T)
hyper = theorem_schedule(K, T)
log = run(EnvSpec("iid"), "unlock-plus", grid, params, hyper, T, seed=0)

running_mc = np.cumsum(log.m) / np.arange(1, T + 1)
running_size = np.cumsum(log.set_size) / np.arange(1, T + 1)
print(f"target alpha = {alpha}, K = {K}, T = {T}")
print(f"{'t':>8} {'MC(t)':>8} {'Ineff(t)':>9} {'pi_t':>6}")
for t in np.unique(np.geomspace(10, T, 12).astype(int)):
    print(f"{t:>8} {running_mc[t - 1]:8.4f} {running_size[t - 1]:9.1f} {log.pi[t - 1]:6.3f}")

# where has the learner put its mass by the end?
arms, counts = np.unique(log.arm[-T // 10:], return_counts=True)
top = arms[np.argsort(counts)[::-1][:5]]
print("most played thresholds in the last 10%:", np.round(grid.values[top], 3))
