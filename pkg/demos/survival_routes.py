"""Four routes to P(Z_n > 0) and where each one stops working.

The naive particle estimator, the quenched mean, and the tilted estimator
(plain and defensive-mixture) are unbiased for the same number. At small n
they agree to Monte Carlo noise; past n ~ 25 the naive route runs out of
surviving paths while the tilted routes keep a stable relative error at
any horizon. Runs in about half a minute.
"""
import numpy as np

from bpre import (DEFAULT_PARAMS, ISConfig, as_table, survival_naive,
                  survival_quenched_mean, survival_tilted)
from bpre.quenched import load_path_csv, quenched_profile, sample_env_path, save_path_csv
from bpre.streams import stream

table = as_table(DEFAULT_PARAMS)
SAMPLES = 100_000

print(f"model: m = {table.m:.6f}, rho = {table.params.rho}, "
      f"beta = {table.params.beta}")
print(f"{'n':>4s} {'naive':>12s} {'quenched':>12s} {'tilted':>12s} "
      f"{'tilted+mix':>12s}")
for n in (3, 5, 8, 12):
    routes = [
        survival_naive(table, n, SAMPLES, seed=1),
        survival_quenched_mean(table, n, SAMPLES, seed=2),
        survival_tilted(table, n, SAMPLES, seed=3),
        survival_tilted(table, n, SAMPLES, is_config=ISConfig(), seed=4),
    ]
    cells = " ".join(f"{r.value:12.3e}" for r in routes)
    print(f"{n:4d} {cells}")

# relative stderr tells the real story: naive degrades like the target
# probability itself, tilted stays flat
print("\nrelative stderr, naive vs tilted")
for n in (5, 10, 15, 20):
    nv = survival_naive(table, n, SAMPLES, seed=1)
    tl = survival_tilted(table, n, SAMPLES, seed=3)
    print(f"  n={n:3d}  naive {nv.stderr / nv.value:8.3f}   "
          f"tilted {tl.stderr / tl.value:8.3f}")

# the quenched kernel behind the curtain: one fixed environment, exact
# survival, and a CSV round trip of the path itself
rng = stream(11, "demo-path")
path = sample_env_path(table, 10, rng)
prof = quenched_profile(path, s_values=(0.0, 0.5))
print(f"\none quenched path: P(Z_10 > 0 | env) = {prof.survival_q[0]:.6f}")

save_path_csv(path, "/tmp/demo_path.csv")
again = load_path_csv("/tmp/demo_path.csv")
back = quenched_profile(again, s_values=(0.0, 0.5))
print(f"after csv round trip:              {back.survival_q[0]:.6f}")
assert np.allclose(prof.survival_q, back.survival_q)
