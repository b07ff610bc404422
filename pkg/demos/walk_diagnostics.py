"""Ladder structure of the tilted walk and the boundary functionals.

U and V are the renewal-type functions of the descending/ascending ladder
structure; the boundary functionals E[e^{+-lam S_n}; one-sided] / b_n
approach integrals of e^{-lam z} against them. This demo estimates both
sides of that statement and shows how slowly the functionals travel: at
n = 30 or 60 they are still an order of magnitude above the limit. A few
minutes at these sample sizes.
"""
import numpy as np

from bpre import DEFAULT_PARAMS, as_table, lemma1_ratio, two_jump_prob
from bpre.walk import lemma1_quadrature, renewal_curve, union_bound_two_jumps

table = as_table(DEFAULT_PARAMS)

zs = np.array([0.0, 1.0, 2.0, 5.0, 10.0])
for kind in ("u", "v"):
    vals, se = renewal_curve(table, zs, kind, samples=8000, seed=5)
    cells = " ".join(f"{v:8.3f}" for v in vals)
    print(f"{kind.upper()}(z) on z = {zs.tolist()}: {cells}")

lim_u = lemma1_quadrature(table, lam=1.0, kind="u", samples=8000, seed=5)
lim_v = lemma1_quadrature(table, lam=1.0, kind="v", samples=8000, seed=5)
print(f"\nquadrature limits at lam=1: max side {lim_u:.3f}, "
      f"min side {lim_v:.3f}")

print("\nboundary functionals / b_n (bigjump proposal)")
for n in (10, 30, 60):
    mx, mn = lemma1_ratio(table, lam=1.0, n=n, samples=100_000, seed=44)
    print(f"  n={n:3d}  max {mx.value:8.2f} +- {mx.stderr:5.2f}   "
          f"min {mn.value:8.2f} +- {mn.stderr:5.2f}")
print("  both sides decay toward the limits only past n ~ 200")

# sanity at a horizon the naive strategy can still reach
nv = lemma1_ratio(table, lam=1.0, n=10, samples=100_000, strategy="naive",
                  seed=42)
bj = lemma1_ratio(table, lam=1.0, n=10, samples=100_000, seed=43)
for side, a, b in (("max", nv[0], bj[0]), ("min", nv[1], bj[1])):
    z = abs(a.value - b.value) / np.hypot(a.stderr, b.stderr)
    print(f"naive vs bigjump, {side} side at n=10: {a.value:.2f} vs "
          f"{b.value:.2f}  ({z:.1f} sigma)")

print("\ntwo-jump paths (windowed), normalized by b_n")
for n in (20, 40):
    p = two_jump_prob(table, n, samples=100_000, seed=0)
    ub = union_bound_two_jumps(table, n, delta=0.5)
    print(f"  n={n:3d}  estimate {p.value:6.2f} +- {p.stderr:4.2f}   "
          f"union bound {ub:6.2f}")
print("  at beta=3 the union bound is n-constant; the observed decrease")
print("  comes from the terminal window shrinking like n^(-1/2)")
