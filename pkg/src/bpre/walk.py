"""Functionals of the tilted log-mean walk and one-big-jump diagnostics.

The walk S_k is the prefix-sum sequence of an environment path. This module
provides exact per-path statistics (minimum, maximum, first argmin), Monte
Carlo estimates of the renewal-type series U and V, the boundary
functionals E[e^{lam S_n}; max < 0] and E[e^{-lam S_n}; min >= 0] scaled by
the tail normalizer, and a two-jump probe that quantifies how rare a second
large increment is.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .env_model import as_table, params_hash, tail_normalizer, tilted_tail
from .errors import DomainError, EmptyPath, InfeasibleNaiveWarning
from .mixture import Estimate, ISConfig, mc_mean, sample_paths
from .quenched import EnvPath

# least naive hits before the boundary-functional estimate is considered
# adequately resolved
NAIVE_HIT_FLOOR = 100


@dataclass(frozen=True)
class WalkStats:
    """Exact extrema of one walk: min, max, first argmin, terminal value."""

    l_n: float
    m_n: float
    tau_n: int
    s_n: float


@dataclass(frozen=True)
class RenewalEstimate:
    """Truncated-series Monte Carlo value of U or V at one argument."""

    x: float
    value: float
    stderr: float
    k_truncation: int
    tail_bound: float

    def __post_init__(self):
        if self.value < 1.0:
            raise DomainError("renewal series value cannot drop below 1")


def stats(path: EnvPath) -> WalkStats:
    """Exact scan of one walk.

    The minimum l_n runs over k in [1, n]. tau_n is the first index in
    [0, n] whose walk value equals l_n, so index 0 claims it exactly when
    l_n == 0.0 (bitwise), otherwise the first attaining index in [1, n].
    """
    if len(path) == 0:
        raise EmptyPath("walk statistics need at least one step")
    inner = path.s[1:]
    l = float(inner.min())
    m = float(inner.max())
    tau = 0 if l == 0.0 else int(np.argmin(inner)) + 1
    return WalkStats(l_n=l, m_n=m, tau_n=tau, s_n=float(path.s[-1]))


def tau_rows(s: np.ndarray) -> np.ndarray:
    """Vectorized first argmin over k in [0, n] for a prefix-sum matrix."""
    inner = s[:, 1:]
    tau = np.argmin(inner, axis=1) + 1
    tau[inner.min(axis=1) == 0.0] = 0
    return tau


# ---------------------------------------------------------------------------
# renewal-type series U and V

def _anchor(hits, total):
    """Largest k (1-based) still holding >= 25 empirical hits, with its
    frequency; falls back to a rule-of-three proxy when nothing resolves."""
    idx = np.flatnonzero(hits >= 25.0)
    if idx.size:
        return int(idx[-1]) + 1, float(hits[idx[-1]] / total)
    return None, 3.0 / total


def _u_tail_bound(table, x: float, k_max: int, hits, total) -> float:
    """Bound on sum_{k>k_max} P(S_k >= -x) from an empirical anchor.

    P(S_k >= -x) is measured at the largest well-resolved k and carried
    past the truncation point along the one-jump envelope k*tail(ak - x),
    whose integral has a closed form. An anchor sitting above the envelope
    (diffusive regime) inflates the bound; it never shrinks below the
    measured decay.
    """
    p = table.params
    w_t = tilted_tail(table, p.x0)
    u0 = table.a * k_max - x
    if u0 <= p.x0:
        raise DomainError("k_max too small for the tail bound at this x")
    b = p.beta
    envelope_integral = (w_t * p.x0 ** b / table.a ** 2) * (
        u0 ** (2.0 - b) / (b - 2.0) + x * u0 ** (1.0 - b) / (b - 1.0)
    )
    k_star, p_star = _anchor(hits, total)
    if k_star is None:
        k_star = k_max
    env_at_anchor = k_star * tilted_tail(
        table, max(table.a * k_star - x, p.x0)
    )
    return p_star * envelope_integral / env_at_anchor


def estimate_u(params, x: float, k_max: int = 200, samples: int = 10_000,
               seed: int = 0, batches: int = 1) -> RenewalEstimate:
    """Monte Carlo of U(x) = 1 + sum_k P(-S_k <= x, max_k < 0), truncated.

    One path of length k_max contributes every k term. U(0) = 1 exactly:
    no term event is satisfiable at x = 0.
    """
    table = as_table(params)
    if x < 0.0:
        raise DomainError(f"argument must be nonnegative, got {x}")

    def fn(rng, size):
        _, _, s = _tilted_matrix(table, size, k_max, rng)
        inner = s[:, 1:]
        run_max = np.maximum.accumulate(inner, axis=1)
        out = np.empty((size, 1 + k_max))
        out[:, 0] = ((run_max < 0.0) & (inner >= -x)).sum(axis=1)
        out[:, 1:] = inner >= -x
        return out

    mean, stderr, total = mc_mean(seed, "renewal-u", samples, fn, batches)
    return RenewalEstimate(
        x=x, value=1.0 + float(mean[0]), stderr=float(stderr[0]),
        k_truncation=k_max,
        tail_bound=_u_tail_bound(table, x, k_max, mean[1:] * total, total),
    )


def estimate_v(params, x: float, k_max: int = 200, samples: int = 10_000,
               seed: int = 0, batches: int = 1) -> RenewalEstimate:
    """Monte Carlo of V(x) = 1 + sum_k P(-S_k > x, min_k >= 0), truncated.

    The truncation tail rides on P(min_k >= 0), anchored at the largest k
    that still collects enough empirical hits and extrapolated with the
    known polynomial big-jump decay k^{-beta}.
    """
    table = as_table(params)
    if x > 0.0:
        raise DomainError(f"argument must be nonpositive, got {x}")

    def fn(rng, size):
        _, _, s = _tilted_matrix(table, size, k_max, rng)
        inner = s[:, 1:]
        run_min = np.minimum.accumulate(inner, axis=1)
        out = np.empty((size, 1 + k_max))
        out[:, 0] = ((run_min >= 0.0) & (inner < -x)).sum(axis=1)
        out[:, 1:] = run_min >= 0.0
        return out

    mean, stderr, total = mc_mean(seed, "renewal-v", samples, fn, batches)
    b = table.params.beta
    k_star, p_star = _anchor(mean[1:] * total, total)
    if k_star is None:
        k_star = 1
    tail = p_star * k_star ** b * k_max ** (1.0 - b) / (b - 1.0)
    return RenewalEstimate(
        x=x, value=1.0 + float(mean[0]), stderr=float(stderr[0]),
        k_truncation=k_max, tail_bound=tail,
    )


def renewal_curve(params, zs, kind: str, k_max: int = 200,
                  samples: int = 10_000, seed: int = 0, batches: int = 1):
    """U (kind="u") or V(-z) (kind="v") on a z >= 0 grid with shared paths.

    Returns (values, stderrs). Sharing one path set across the grid makes
    the curve smooth in z, which matters when it feeds a quadrature.
    """
    table = as_table(params)
    zs = np.asarray(zs, dtype=float)
    if kind not in ("u", "v"):
        raise DomainError(f"kind must be 'u' or 'v', got {kind!r}")
    if np.any(zs < 0.0):
        raise DomainError("grid must be nonnegative")

    def fn(rng, size):
        _, _, s = _tilted_matrix(table, size, k_max, rng)
        inner = s[:, 1:]
        out = np.empty((size, zs.size))
        if kind == "u":
            keep = np.maximum.accumulate(inner, axis=1) < 0.0
            for i, z in enumerate(zs):
                out[:, i] = (keep & (inner >= -z)).sum(axis=1)
        else:
            keep = np.minimum.accumulate(inner, axis=1) >= 0.0
            for i, z in enumerate(zs):
                out[:, i] = (keep & (inner < z)).sum(axis=1)
        return out

    mean, stderr, _ = mc_mean(seed, f"renewal-curve-{kind}", samples, fn, batches)
    return 1.0 + mean, stderr


def v_uniform_bound(params, xs, **kw) -> float:
    """Sup of V estimates over a probe grid of nonpositive arguments."""
    return max(estimate_v(params, x, **kw).value for x in xs)


def lemma1_quadrature(params, lam: float, kind: str, z_max: float | None = None,
                      grid: int = 161, k_max: int = 200, samples: int = 20_000,
                      seed: int = 0, batches: int = 1) -> float:
    """Simpson quadrature of e^{-lam z} against the estimated U or V(-z).

    This is the limiting value the boundary-functional ratios approach.
    z_max defaults so the dropped tail is below 1e-4 of the integral scale
    (U grows linearly, so e^{-lam z}(1 + z) at the cut is the right gauge).
    """
    from scipy.integrate import simpson

    if lam <= 0.0:
        raise DomainError(f"lam must be positive, got {lam}")
    if z_max is None:
        z_max = max(16.0 / lam, 16.0)
    zs = np.linspace(0.0, z_max, grid)
    vals, _ = renewal_curve(params, zs, kind, k_max=k_max, samples=samples,
                            seed=seed, batches=batches)
    return float(simpson(np.exp(-lam * zs) * vals, x=zs))


def _tilted_matrix(table, size, n, rng):
    x, theta, s, _ = sample_paths(table, size, n, rng)
    return x, theta, s


# ---------------------------------------------------------------------------
# boundary functionals of Lemma-type asymptotics

def lemma1_ratio(params, lam: float, n: int, samples: int,
                 strategy: str = "bigjump", seed: int = 0, batches: int = 1,
                 is_config: ISConfig | None = None):
    """Estimates of E[e^{lam S_n}; max<0]/b_n and E[e^{-lam S_n}; min>=0]/b_n.

    NAIVE draws plain tilted paths and is advisory-infeasible once the
    expected number of paths with terminal value near the boundary drops
    below NAIVE_HIT_FLOOR. BIGJUMP forces one large step near the end (max
    side) or the start (min side), which is where the conditioned paths
    place it.
    """
    table = as_table(params)
    if lam <= 0.0:
        raise DomainError(f"lam must be positive, got {lam}")
    bn = tail_normalizer(table, n)

    if strategy == "naive":
        def fn(rng, size):
            _, _, s = _tilted_matrix(table, size, n, rng)
            inner = s[:, 1:]
            mx, mn, sn = inner.max(axis=1), inner.min(axis=1), inner[:, -1]
            out = np.zeros((size, 4))
            neg = mx < 0.0
            pos = mn >= 0.0
            out[neg, 0] = np.exp(lam * sn[neg])
            out[pos, 1] = np.exp(-lam * sn[pos])
            out[:, 2] = neg & (sn >= -3.0 / lam)
            out[:, 3] = pos & (sn <= 3.0 / lam)
            return out

        mean, se, total = mc_mean(seed, f"lemma1-naive-n{n}", samples, fn, batches)
        for side, hits in (("max", mean[2] * total), ("min", mean[3] * total)):
            if hits < NAIVE_HIT_FLOOR:
                warnings.warn(InfeasibleNaiveWarning(
                    f"naive boundary estimate ({side} side) resolved only "
                    f"{hits:.0f} near-boundary paths at n={n}; "
                    f"use the bigjump strategy"
                ))
        est = [
            Estimate(float(mean[i] / bn), float(se[i] / bn), total,
                     f"lemma1-naive-{side}", seed=seed, n=n)
            for i, side in ((0, "max"), (1, "min"))
        ]
        return est[0], est[1]

    if strategy != "bigjump":
        raise DomainError(f"strategy must be 'naive' or 'bigjump', got {strategy!r}")

    out = []
    for side, law in (("max", "last_block"), ("min", "first_block")):
        cfg = is_config if is_config is not None else ISConfig(jump_index_law=law)

        def fn(rng, size, side=side, cfg=cfg):
            _, _, s, lw = sample_paths(table, size, n, rng, cfg)
            inner = s[:, 1:]
            sn = inner[:, -1]
            h = np.zeros(size)
            if side == "max":
                keep = inner.max(axis=1) < 0.0
                h[keep] = np.exp(lam * sn[keep] + lw[keep])
            else:
                keep = inner.min(axis=1) >= 0.0
                h[keep] = np.exp(-lam * sn[keep] + lw[keep])
            return h

        mean, se, total = mc_mean(
            seed, f"lemma1-big-{side}-n{n}", samples, fn, batches
        )
        out.append(Estimate(float(mean / bn), float(se / bn), total,
                            f"lemma1-bigjump-{side}", seed=seed, n=n))
    return out[0], out[1]


def two_jump_prob(params, n: int, delta: float = 0.5, bound_n: float = 10.0,
                  bound_k: float = 10.0, samples: int = 200_000,
                  strategy: str = "bigjump", seed: int = 0, batches: int = 1,
                  is_config: ISConfig | None = None) -> Estimate:
    """P(two steps exceed delta*a*n; min >= -bound_n; |S_n| <= bound_k)/b_n.

    The bigjump strategy forces only one of the two large steps; the second
    must occur naturally, which keeps the estimator unbiased under the
    defensive mixture while lifting the double-jump event out of the noise.
    """
    table = as_table(params)
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    bn = tail_normalizer(table, n)
    thr = delta * table.a * n
    if strategy == "naive":
        cfg = None
    elif strategy == "bigjump":
        cfg = is_config if is_config is not None else ISConfig(
            jump_index_law="uniform", delta=delta
        )
    else:
        raise DomainError(f"strategy must be 'naive' or 'bigjump', got {strategy!r}")

    def fn(rng, size):
        x, _, s, lw = sample_paths(table, size, n, rng, cfg)
        inner = s[:, 1:]
        ok = (
            ((x >= thr).sum(axis=1) >= 2)
            & (inner.min(axis=1) >= -bound_n)
            & (np.abs(inner[:, -1]) <= bound_k)
        )
        out = np.zeros(size)
        out[ok] = np.exp(lw[ok])
        return out

    mean, se, total = mc_mean(
        seed, f"two-jump-{strategy}-n{n}-d{delta}", samples, fn, batches
    )
    return Estimate(float(mean / bn), float(se / bn), total,
                    f"two-jump-{strategy}", seed=seed, n=n)


def union_bound_two_jumps(params, n: int, delta: float) -> float:
    """Analytic n^2 tail(delta a n)^2 / b_n cap for the two-jump probe."""
    table = as_table(params)
    thr = delta * table.a * n
    return n * n * tilted_tail(table, thr) ** 2 / tail_normalizer(table, n)


def diag_record(op: str, params, *, n=None, lam=None, estimate=None,
                stderr=None, samples=None, seed=None) -> dict:
    """JSONL-shaped diagnostic record for the run harness."""
    return {
        "op": op,
        "params_hash": params_hash(params),
        "n": n,
        "lambda": lam,
        "estimate": estimate,
        "stderr": stderr,
        "samples": samples,
        "seed": seed,
    }
