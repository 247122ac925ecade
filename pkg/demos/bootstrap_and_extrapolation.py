"""
How reliable is a fitted law?
=============================

Two checks on a noisy synthetic grid: a bootstrapped MRE (refit on resampled
runs, score on the full grid) and extrapolation (fit on small models and short
runs, score on the held-out large ones).
"""

import time

from scalelab import surrogate
from scalelab.core import l0_table
from scalelab.evaluation import SETUPS, BootstrapConfig, bootstrap_mre, extrapolation_mre, split_extrapolation

runs = surrogate.gen_grid(surrogate.spec_for_domain("arxiv", noise_sigma=0.005, seed=1))
l0 = l0_table()

# A full assessment uses 128 repetitions; 8 are enough to see the scale here.
# Repetition i always draws the same indices for a given seed, so adding more
# repetitions later leaves the first eight untouched.
for family in ("multiplicative_ft", "forgetting_mult"):
    t0 = time.perf_counter()
    res = bootstrap_mre(family, runs, bs_config=BootstrapConfig(repetitions=8, seed=0), l0=l0)
    per = ", ".join(f"{100 * v:.2f}" for v in res.per_rep)
    print(f"{family:18s} bootstrap MRE {100 * res.mean:.3f}%  [{per}]  ({time.perf_counter() - t0:.1f} s)")

# Setup A holds out the largest model and the longest finetuning budget;
# B holds out the two largest models and the two longest budgets. A run is
# held out if it matches either exclusion.
print()
for tag, setup in SETUPS.items():
    train, test = split_extrapolation(runs, setup)
    errs = {f: extrapolation_mre(f, runs, setup, l0=l0) for f in ("multiplicative_ft", "forgetting_mult")}
    print(f"setup {tag}: fit on {len(train)}, predict {len(test)}  "
          + "  ".join(f"{f} {100 * e:.2f}%" for f, e in errs.items()))
