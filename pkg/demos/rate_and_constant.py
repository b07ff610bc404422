"""Extracting the decay rate and the constant in P(Z_n>0) ~ C0 m^n b_n.

Two independent routes to C0: rescale the tilted survival estimate by
m^n b_n at increasing n (c0_direct), or sum the series of per-index
contributions (c0_series). The direct route moves through a pronounced
pre-asymptotic bump before settling; at the default parameters the
crossover sits near n ~ 200, where survival stops being carried by
ordinary diffusive environments and starts being carried by one big
jump. Takes a couple of minutes at these sample sizes.
"""
import math

from bpre import DEFAULT_PARAMS, ISConfig, as_table, c0_direct, c0_series, survival_tilted
from bpre.env_model import tail_normalizer

table = as_table(DEFAULT_PARAMS)
MIX = ISConfig()

print(f"log m = {table.log_m:.6f}")
print("\nrate: log P(Z_n>0) / n")
for n in (10, 20, 40, 80):
    est = survival_tilted(table, n, 150_000, is_config=MIX, seed=2)
    rate = math.log(est.value) / n
    print(f"  n={n:3d}  {rate:+.4f}   gap to log m {rate - table.log_m:+.4f}")
print("  the gap is the b_n prefactor: -(beta+1) log(a n)/n, slow to die")

print("\nconstant, direct route: P(Z_n>0) / (m^n b_n)")
for n in (30, 60, 120, 240):
    est = c0_direct(table, n, 150_000, is_config=MIX, seed=21)
    bn = tail_normalizer(table, n)
    print(f"  n={n:3d}  c0 = {est.value:8.2f} +- {est.stderr:6.2f}"
          f"   (b_n = {bn:.3e})")

series = c0_series(table, j_max=20, samples=3000, seed=41)
print(f"\nconstant, series route: {series.value:.3f} +- {series.stderr:.3f}"
      f"  (stopped at j = {series.j_stop}, last-term share "
      f"{series.last_share:.4f})")
print("the direct ladder descends toward the series value past n ~ 240;")
print("at n <= 120 the diffusive channel inflates it by an order of magnitude")
