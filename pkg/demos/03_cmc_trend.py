"""The coverage offset C_mc(T) shrinks as the horizon grows.

The coverage guarantee reads MC(T) - alpha <= Reg(T)/T + C_mc(T).  C_mc is
built from the penalty part of the loss, which is scaled by T^(-1/2), so over
longer horizons the regret term carries the bound.  Here we simply measure
it, along with the slack of the inequality on each run.

    python demos/03_cmc_trend.py
"""

import numpy as np

from ocpbandit import RunConfig
from ocpbandit.cli import run_one

seeds = range(5)
print(f"{'T':>7} {'C_mc':>9} {'Reg/T':>8} {'MC-alpha':>9} {'min slack':>10}")
for T in (5_000, 10_000, 20_000, 40_000):
    out = [run_one(RunConfig(K=20, T=T, alpha=0.1), s)[1] for s in seeds]
    cmc = np.mean([s.C_mc for s in out])
    reg = np.mean([s.Reg / T for s in out])
    gap = np.mean([s.MC - s.alpha for s in out])
    print(f"{T:>7} {cmc:9.4f} {reg:8.4f} {gap:9.4f} {min(s.lemma1_slack for s in out):10.4f}")
