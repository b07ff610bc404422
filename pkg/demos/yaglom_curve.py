"""Conditional-law transform on a grid, two horizons side by side.

Omega(s) is the pgf-like transform of Z_n given survival. Endpoints are
exact by construction; the interior is jackknifed. The two curves still
differ visibly at n = 60 vs 120: the conditional law keeps drifting until
the big-jump regime takes over.
"""
import numpy as np

from bpre import DEFAULT_PARAMS, ISConfig, as_table, yaglom_omega

table = as_table(DEFAULT_PARAMS)
grid = np.linspace(0.0, 1.0, 11)
MIX = ISConfig()

curves = {n: yaglom_omega(table, grid, n, 200_000, is_config=MIX, seed=25)
          for n in (60, 120)}

print(f"{'s':>5s} {'omega(60)':>12s} {'se':>8s} {'omega(120)':>12s} "
      f"{'se':>8s} {'diff':>8s}")
for i, s in enumerate(grid):
    a, b = curves[60][i], curves[120][i]
    print(f"{s:5.1f} {a.value:12.4f} {a.stderr:8.4f} "
          f"{b.value:12.4f} {b.stderr:8.4f} {b.value - a.value:+8.4f}")

sup = max(abs(curves[60][i].value - curves[120][i].value)
          for i in range(len(grid)))
print(f"\nsup difference {sup:.4f}")

# crude shape check: the transform of a geometric-like limit is concave
# in s; successive increments should shrink
inc = np.diff([e.value for e in curves[120]])
print("increments at n=120:", np.array2string(inc, precision=3))
