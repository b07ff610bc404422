"""Estimators for the limit objects of the subcritical process.

Survival probability by three independent routes (particles, quenched
averaging, tilted importance sampling), the normalizing constant by a
direct plateau and by a term-by-term series, the conditional-law transform
on a grid, and the jump-position and jump-size diagnostics. Every sampling
estimator is deterministic given (seed, batches) and accumulates in chunk
order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .env_model import (ORIGINAL, as_table, params_hash, tail_normalizer)
from .errors import DegenerateSample, DomainError, NonsummableWarning
from .mixture import (Estimate, ISConfig, jump_threshold, mc_mean,
                      sample_paths)
from .quenched import (log_gap, mobius_log_coeffs, sample_env_matrix,
                       sample_g, w_limit)
from .streams import chunk_sizes, chunked_map, stream

JACKKNIFE_BLOCKS = 100
W_LIMIT_TOL = 1e-10
W_LIMIT_CAP = 10_000


@dataclass(frozen=True)
class NaiveEstimate(Estimate):
    """Particle-frequency estimate; cap_exceeded counts runs frozen at the
    population cap (counted as survivors)."""

    cap_exceeded: int = 0


@dataclass(frozen=True)
class CjEstimate(Estimate):
    """One series term c_j with its quadrature-edge audit.

    edge_share_lo/hi are the integrand mass at the grid endpoints relative
    to the integral; n_nonconverged counts retained limit draws that hit
    the iteration cap (each retained value upper-bounds its limit, so the
    term is biased upward by at most the stated tolerance).
    """

    j: int = 0
    edge_share_lo: float = 0.0
    edge_share_hi: float = 0.0
    n_nonconverged: int = 0


@dataclass(frozen=True)
class SeriesEstimate(Estimate):
    """Partial-sum estimate with the truncation diagnostic attached."""

    j_stop: int = 0
    last_share: float = 1.0
    terms: tuple = ()


@dataclass(frozen=True)
class VQuadrature:
    """Grid for the log-scale integration variable: [lo, hi], odd points."""

    lo: float
    hi: float
    points: int

    def __post_init__(self):
        if not self.lo < self.hi:
            raise DomainError("quadrature interval is empty")
        if self.points < 3 or self.points % 2 == 0:
            raise DomainError("Simpson rule needs an odd point count >= 3")

    @classmethod
    def default(cls, params) -> "VQuadrature":
        # envelope e^{(1-rho)v} on the left, e^{-rho v} on the right: both
        # edges sit below 1e-13 of the integral scale
        rho = as_table(params).params.rho
        lo = -45.0 / (1.0 - rho)
        hi = 32.0 / rho
        points = int(np.ceil((hi - lo) / 0.25)) + 1
        return cls(lo, hi, points if points % 2 else points + 1)

    def grid(self):
        return np.linspace(self.lo, self.hi, self.points)

    def weights(self):
        h = (self.hi - self.lo) / (self.points - 1)
        w = np.full(self.points, 2.0)
        w[1::2] = 4.0
        w[0] = w[-1] = 1.0
        return w * (h / 3.0)


# ---------------------------------------------------------------------------
# survival: three routes

def _offspring_step(z, theta, zeta, rng):
    """Vector offspring totals; theta/zeta are per-path arrays."""
    p_active = theta * zeta / (theta + zeta)
    p_geo = theta / (theta + zeta)
    active = rng.binomial(z, p_active)
    total = active.astype(np.int64)
    pos = active > 0
    if np.any(pos):
        total[pos] += rng.negative_binomial(active[pos], p_geo[pos])
    return total


def survival_naive(params, n: int, samples: int, seed: int = 0,
                   batches: int = 1, theta_law=None,
                   cap: int = 1_000_000) -> NaiveEstimate:
    """Fraction of particle runs alive at n, environments under the
    original measure. Oracle role: exact but exponentially starved in n."""
    table = as_table(params)
    if n < 0:
        raise DomainError("n must be nonnegative")
    if n == 0:
        return NaiveEstimate(1.0, 0.0, max(int(samples), 1),
                             "survival-naive", seed=seed, n=0)
    if n > 20:
        warnings.warn("survival_naive beyond n=20 resolves almost no "
                      "survivors; prefer survival_tilted")

    def fn(rng, size):
        x, theta, _ = sample_env_matrix(table, size, n, rng,
                                        measure=ORIGINAL, theta_law=theta_law)
        zeta = np.exp(x)
        z = np.ones(size, dtype=np.int64)
        capped = np.zeros(size, dtype=bool)
        for k in range(n):
            live = z > 0
            if not np.any(live):
                break
            z[live] = _offspring_step(z[live], theta[live, k],
                                      zeta[live, k], rng)
            hit = z > cap
            if np.any(hit):
                capped |= hit
                z[hit] = 0  # frozen; counted as survivors below
        out = np.empty((size, 2))
        out[:, 0] = (z > 0) | capped
        out[:, 1] = capped
        return out

    mean, se, total = mc_mean(seed, f"survival-naive-n{n}", samples, fn, batches)
    return NaiveEstimate(float(mean[0]), float(se[0]), total, "survival-naive",
                         seed=seed, n=n,
                         cap_exceeded=int(round(mean[1] * total)))


def survival_quenched_mean(params, n: int, samples: int, seed: int = 0,
                           batches: int = 1, theta_law=None) -> Estimate:
    """Mean of exact quenched survival over original-measure paths.

    Rao-Blackwellized cousin of survival_naive: same expectation, no
    particle noise.
    """
    table = as_table(params)
    if n < 0:
        raise DomainError("n must be nonnegative")
    if n == 0:
        return Estimate(1.0, 0.0, max(int(samples), 1), "survival-quenched",
                        seed=seed, n=0)

    def fn(rng, size):
        x, theta, s = sample_env_matrix(table, size, n, rng,
                                        measure=ORIGINAL, theta_law=theta_law)
        log_a, log_c = mobius_log_coeffs(x, theta, s)
        return np.exp(log_gap(log_a, log_c, 1.0))

    mean, se, total = mc_mean(seed, f"survival-quenched-n{n}", samples, fn,
                              batches)
    return Estimate(float(mean), float(se), total, "survival-quenched",
                    seed=seed, n=n)


def _survival_weights(table, size, n, rng, is_config, u: float = 1.0):
    """Per-path (1 - f_{0,n}(1-u)) e^{-rho S_n} times the mixture weight."""
    x, theta, s, log_w = sample_paths(table, size, n, rng, is_config)
    log_a, log_c = mobius_log_coeffs(x, theta, s)
    log_surv = log_gap(log_a, log_c, u)
    return np.exp(log_surv - table.params.rho * s[:, -1] + log_w)


def survival_tilted(params, n: int, samples: int, is_config: ISConfig | None = None,
                    seed: int = 0, batches: int = 1) -> Estimate:
    """m^n times the tilted mean of (1 - f_{0,n}(0)) e^{-rho S_n}.

    Survival is computed by the exact quenched kernel, never by particles,
    so the estimator is unbiased at every n and reaches arbitrarily rare
    horizons. n=0 returns exactly 1.
    """
    table = as_table(params)
    if n < 0:
        raise DomainError("n must be nonnegative")
    method = "survival-tilted" + ("-mix" if is_config is not None else "")
    if n == 0:
        return Estimate(1.0, 0.0, max(int(samples), 1), method, seed=seed, n=0)

    def fn(rng, size):
        return _survival_weights(table, size, n, rng, is_config)

    mean, se, total = mc_mean(seed, f"survival-tilted-n{n}", samples, fn, batches)
    scale = math.exp(n * table.log_m)
    return Estimate(float(scale * mean), float(scale * se), total, method,
                    seed=seed, n=n)


def c0_direct(params, n: int, samples: int, is_config: ISConfig | None = None,
              seed: int = 0, batches: int = 1) -> Estimate:
    """Tilted survival core divided by the tail normalizer, no m^n factor.

    Plateaus at the limiting constant as n grows.
    """
    table = as_table(params)
    bn = tail_normalizer(table, n)

    def fn(rng, size):
        return _survival_weights(table, size, n, rng, is_config)

    mean, se, total = mc_mean(seed, f"survival-tilted-n{n}", samples, fn, batches)
    return Estimate(float(mean / bn), float(se / bn), total, "c0-direct",
                    seed=seed, n=n)


# ---------------------------------------------------------------------------
# series route: c_j terms and their sum

def _pgf_gap_matrix(theta, zeta, w):
    """One pgf step in gap coordinates, rows = samples, columns = grid."""
    return theta * zeta * w / (theta + zeta * w)


def cj_term(params, j: int, samples: int, v_quadrature: VQuadrature | None = None,
            seed: int = 0, batches: int = 1, theta_law=None,
            g_theta_law=None) -> CjEstimate:
    """Monte Carlo + quadrature estimate of the j-th series term.

    c_j integrates E[1 - f_{0,j-1}(g_j(e^v W_j))] e^{-rho v} over v. The
    three ingredients are drawn on independent streams: the pgf composition
    over j-1 original-measure steps, the limit transform g_j, and the
    stationary limit W via w_limit (tol 1e-10, cap 1e4; draws that hit the
    cap are retained and counted, each upper-bounding its limit).
    """
    table = as_table(params)
    if j < 1:
        raise DomainError("series index j starts at 1")
    rho = table.params.rho
    vq = v_quadrature if v_quadrature is not None else VQuadrature.default(table)
    v = vq.grid()
    simp = vq.weights()
    decay = np.exp(-rho * v)
    ev = np.exp(v)

    count = 0
    acc = 0.0
    acc2 = 0.0
    edge_lo = 0.0
    edge_hi = 0.0
    nonconv = 0
    for ci, size in enumerate(chunk_sizes(samples)):
        rng_w = stream(seed, f"cj{j}-w", ci)
        rng_g = stream(seed, f"cj{j}-g", ci)
        w_lim = np.empty(size)
        th_star = np.empty(size)
        for i in range(size):
            r = w_limit(table, rng_w, tol=W_LIMIT_TOL, n_cap=W_LIMIT_CAP,
                        theta_law=theta_law)
            w_lim[i] = r.value
            nonconv += 0 if r.converged else 1
            th_star[i] = sample_g(table, rng_g, theta_law=g_theta_law).theta_star
        lam = w_lim[:, None] * ev[None, :]
        # gap coordinate of g: 1 - g(lam)
        gap = th_star[:, None] * lam / (th_star[:, None] + lam)
        if j > 1:
            rng_env = stream(seed, f"cj{j}-env", ci)
            x, theta, _ = sample_env_matrix(table, size, j - 1, rng_env,
                                            measure=ORIGINAL,
                                            theta_law=theta_law)
            zeta = np.exp(x)
            for k in range(j - 2, -1, -1):
                gap = _pgf_gap_matrix(theta[:, k:k + 1], zeta[:, k:k + 1], gap)
        integrand = gap * decay[None, :]
        per_sample = integrand @ simp
        count += size
        acc += float(per_sample.sum())
        acc2 += float((per_sample ** 2).sum())
        edge_lo += float(integrand[:, 0].sum())
        edge_hi += float(integrand[:, -1].sum())

    mean = acc / count
    var = max(acc2 / count - mean * mean, 0.0)
    se = math.sqrt(var / count)
    scale = acc if acc > 0.0 else 1.0
    return CjEstimate(float(mean), float(se), count, f"cj-term-{j}",
                      seed=seed, n=None, j=j,
                      edge_share_lo=edge_lo / scale,
                      edge_share_hi=edge_hi / scale,
                      n_nonconverged=nonconv)


def c0_series(params, j_max: int, samples: int, seed: int = 0,
              batches: int = 1, share_stop: float = 0.01,
              v_quadrature: VQuadrature | None = None) -> SeriesEstimate:
    """Partial sum of m^{-(j-1)} c_j, stopping at the 1%-share rule.

    Positive terms, so partial sums increase; a run of 5 non-decreasing
    terms trips NonsummableWarning and aborts the scan (the series is then
    not numerically summable at this sample size).
    """
    table = as_table(params)
    if j_max < 1:
        raise DomainError("j_max must be at least 1")
    m = table.m
    terms = []
    variances = []
    partial = 0.0
    prev = math.inf
    nondecreasing = 0
    share = 1.0
    j = 0
    for j in range(1, j_max + 1):
        est = cj_term(table, j, samples, v_quadrature=v_quadrature,
                      seed=seed, batches=batches)
        term = m ** (-(j - 1)) * est.value
        tse = m ** (-(j - 1)) * est.stderr
        if term >= prev:
            nondecreasing += 1
            if nondecreasing >= 5:
                warnings.warn(NonsummableWarning(
                    f"series terms failed to decrease for 5 consecutive j "
                    f"(through j={j}); aborting the scan"
                ))
                break
        else:
            nondecreasing = 0
        prev = term
        partial += term
        terms.append(term)
        variances.append(tse * tse)
        share = term / partial
        if share < share_stop:
            break
    return SeriesEstimate(float(partial), math.sqrt(sum(variances)),
                          len(terms) * samples, "c0-series", seed=seed,
                          n=None, j_stop=len(terms), last_share=float(share),
                          terms=tuple(terms))


@dataclass(frozen=True)
class PiEstimate:
    """Normalized jump-position law from series terms, with delta-method
    stderr per coordinate."""

    values: np.ndarray
    stderr: np.ndarray
    j_max: int
    samples: int
    seed: int
    last_share: float

    def __post_init__(self):
        if abs(float(self.values.sum()) - 1.0) > 1e-12:
            raise DomainError("pi must be normalized")


def pi_j(params, j_max: int, samples: int, seed: int = 0,
         batches: int = 1) -> PiEstimate:
    """Vector (pi_1..pi_{j_max}): m^{-j} c_j normalized over j.

    Truncation share of the last term is reported; choose j_max so it is
    below 1%.
    """
    table = as_table(params)
    if j_max < 1:
        raise DomainError("j_max must be at least 1")
    m = table.m
    ests = [cj_term(table, j, samples, seed=seed, batches=batches)
            for j in range(1, j_max + 1)]
    t = np.array([m ** (-e.j) * e.value for e in ests])
    sig = np.array([m ** (-e.j) * e.stderr for e in ests])
    total = float(t.sum())
    if total <= 0.0:
        raise DomainError("series terms sum to zero; cannot normalize")
    values = t / total
    # delta method: d pi_j / d t_k = (delta_jk - pi_j) / total
    jac = (np.eye(j_max) - values[:, None]) / total
    stderr = np.sqrt((jac ** 2) @ (sig ** 2))
    return PiEstimate(values=values, stderr=stderr, j_max=j_max,
                      samples=samples, seed=seed,
                      last_share=float(t[-1] / total))


# ---------------------------------------------------------------------------
# jackknife plumbing for ratio statistics

def _block_sums(seed, label, samples, batches, width, fn):
    """Accumulate per-chunk sum vectors into JACKKNIFE_BLOCKS block rows."""
    blocks = np.zeros((JACKKNIFE_BLOCKS, width))
    filled = np.zeros(JACKKNIFE_BLOCKS, dtype=bool)

    def chunk_fn(rng, size, chunk_index):
        return chunk_index % JACKKNIFE_BLOCKS, fn(rng, size)

    for b, vec in chunked_map(seed, label, samples, chunk_fn, batches=batches):
        blocks[b] += vec
        filled[b] = True
    return blocks[filled]


def _jackknife_ratio(blocks, num_col, den_col):
    """Leave-one-block-out stderr of sum(num)/sum(den) over block rows."""
    tn = blocks[:, num_col].sum(axis=0)
    td = blocks[:, den_col].sum()
    full = tn / td
    nb = blocks.shape[0]
    if nb < 2:
        raise DegenerateSample(
            "fewer than 2 nonempty jackknife blocks; raise samples")
    reps = (tn[None, :] - blocks[:, num_col]) / (td - blocks[:, den_col])[:, None]
    center = reps.mean(axis=0)
    se = np.sqrt((nb - 1) / nb * ((reps - center) ** 2).sum(axis=0))
    return full, se


# ---------------------------------------------------------------------------
# Yaglom transform

def yaglom_omega(params, s_grid, n: int, samples: int,
                 is_config: ISConfig | None = None, seed: int = 0,
                 batches: int = 1) -> list[Estimate]:
    """Transform of the conditional law on a grid of arguments in [0,1].

    Omega(s) = 1 - num(s)/num(0) with num(s) the tilted mean of
    (1 - f_{0,n}(s)) e^{-rho S_n}; one path set serves every grid point, so
    the ratio noise cancels and the endpoints are exact. Stderr by
    jackknife over chunk blocks.
    """
    table = as_table(params)
    s_grid = np.asarray(s_grid, dtype=float)
    if np.any((s_grid < 0.0) | (s_grid > 1.0)):
        raise DomainError("s grid must lie in [0, 1]")
    if n < 1:
        raise DomainError("n must be at least 1")
    us = 1.0 - s_grid
    rho = table.params.rho

    def fn(rng, size):
        x, theta, s, log_w = sample_paths(table, size, n, rng, is_config)
        log_a, log_c = mobius_log_coeffs(x, theta, s)
        base = -rho * s[:, -1] + log_w
        out = np.empty(1 + us.size)
        out[0] = np.exp(log_gap(log_a, log_c, 1.0) + base).sum()
        for i, u in enumerate(us):
            out[1 + i] = np.exp(log_gap(log_a, log_c, float(u)) + base).sum()
        return out

    blocks = _block_sums(seed, f"yaglom-n{n}", samples, batches,
                         1 + us.size, fn)
    ratio, se = _jackknife_ratio(blocks, np.arange(1, 1 + us.size), 0)
    out = []
    for i, s_val in enumerate(s_grid):
        out.append(Estimate(float(1.0 - ratio[i]), float(se[i]),
                            int(samples), "yaglom", seed=seed, n=n))
    return out


# ---------------------------------------------------------------------------
# jump-position law and jump-size fluctuations

@dataclass(frozen=True)
class KappaLaw:
    """Survival-weighted law of the first qualifying jump index.

    masses[j-1] is the weighted share of paths whose first step above the
    threshold sits at index j; no_jump_mass is the share with no such step;
    multi_jump_mass is the share with at least two. conditional_masses
    renormalizes over paths that do have a jump (the comparable object for
    the series-based law).
    """

    masses: np.ndarray
    stderr: np.ndarray
    no_jump_mass: float
    no_jump_stderr: float
    multi_jump_mass: float
    multi_jump_stderr: float
    conditional_masses: np.ndarray
    conditional_stderr: np.ndarray
    threshold: float
    n: int
    samples: int
    seed: int

    def total_mass(self) -> float:
        return float(self.masses.sum() + self.no_jump_mass)


def kappa_law(params, n: int, samples: int, is_config: ISConfig | None = None,
              seed: int = 0, batches: int = 1,
              delta: float | None = None) -> KappaLaw:
    """Histogram of the first jump index under the survival weighting.

    The threshold is delta*a*n (delta from is_config, default 1/2). Weights
    are (1 - f_{0,n}(0)) e^{-rho S_n} times the mixture weight.
    """
    table = as_table(params)
    if n < 1:
        raise DomainError("n must be at least 1")
    if delta is None:
        delta = is_config.delta if is_config is not None else 0.5
    thr = delta * table.a * n
    rho = table.params.rho

    def fn(rng, size):
        x, theta, s, log_w = sample_paths(table, size, n, rng, is_config)
        log_a, log_c = mobius_log_coeffs(x, theta, s)
        w = np.exp(log_gap(log_a, log_c, 1.0) - rho * s[:, -1] + log_w)
        jumps = x >= thr
        any_jump = jumps.any(axis=1)
        first = np.argmax(jumps, axis=1)
        out = np.zeros(n + 3)
        np.add.at(out, first[any_jump], w[any_jump])
        out[n] = w[~any_jump].sum()
        out[n + 1] = w[jumps.sum(axis=1) >= 2].sum()
        out[n + 2] = w.sum()
        return out

    blocks = _block_sums(seed, f"kappa-n{n}-d{delta}", samples, batches,
                         n + 3, fn)
    masses, mass_se = _jackknife_ratio(blocks, np.arange(n), n + 2)
    no_jump, no_se = _jackknife_ratio(blocks, np.array([n]), n + 2)
    multi, multi_se = _jackknife_ratio(blocks, np.array([n + 1]), n + 2)
    # conditional law: renormalize over jump-bearing mass; jackknife the
    # conditional ratio directly
    cond_blocks = np.column_stack([
        blocks[:, :n], blocks[:, n + 2] - blocks[:, n]
    ])
    cond, cond_se = _jackknife_ratio(cond_blocks, np.arange(n), n)
    return KappaLaw(masses=masses, stderr=mass_se,
                    no_jump_mass=float(no_jump[0]),
                    no_jump_stderr=float(no_se[0]),
                    multi_jump_mass=float(multi[0]),
                    multi_jump_stderr=float(multi_se[0]),
                    conditional_masses=cond, conditional_stderr=cond_se,
                    threshold=thr, n=n, samples=int(samples), seed=seed)


@dataclass(frozen=True)
class FluctuationSample:
    """Weighted standardized jump sizes (X_j - a n) / (sigma sqrt(n))."""

    values: np.ndarray
    weights: np.ndarray
    ess: float
    sigma: float
    n: int
    j: int
    samples: int
    seed: int

    def weighted_mean(self) -> float:
        return float(np.average(self.values, weights=self.weights))

    def mean_stderr(self) -> float:
        m = self.weighted_mean()
        wsum = self.weights.sum()
        return float(np.sqrt(((self.weights * (self.values - m)) ** 2).sum())
                     / wsum)

    def weighted_var(self) -> float:
        m = self.weighted_mean()
        return float(np.average((self.values - m) ** 2, weights=self.weights))

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        ind = self.values[None, :] <= t.reshape(-1, 1)
        vals = (ind * self.weights[None, :]).sum(axis=1) / self.weights.sum()
        return vals if vals.size > 1 else float(vals[0])

    def cdf_stderr(self, t: float) -> float:
        p = self.cdf(t)
        ind = (self.values <= t).astype(float)
        wsum = self.weights.sum()
        return float(np.sqrt(((self.weights * (ind - p)) ** 2).sum()) / wsum)


def jump_fluctuation(params, n: int, j: int, samples: int,
                     is_config: ISConfig | None = None, seed: int = 0,
                     batches: int = 1,
                     variance_measure: str = "tilted") -> FluctuationSample:
    """Weighted sample of standardized jump sizes at a fixed index.

    Conditions on survival and X_j >= delta*a*n by weighting; the default
    proposal forces its jump at exactly index j. sigma defaults to the
    tilted standard deviation (switchable to the original measure).
    """
    table = as_table(params)
    if n < 1 or not 1 <= j <= n:
        raise DomainError(f"need 1 <= j <= n, got j={j}, n={n}")
    if variance_measure == "tilted":
        sigma = math.sqrt(table.var_x_tilted)
    elif variance_measure == "original":
        sigma = math.sqrt(table.var_x)
    else:
        raise DomainError(
            f"variance_measure must be 'tilted' or 'original', got "
            f"{variance_measure!r}")
    cfg = is_config if is_config is not None else ISConfig(
        jump_index_law=("point", j))
    thr = jump_threshold(table, n, cfg.delta)
    rho = table.params.rho
    scale = sigma * math.sqrt(n)

    vals = np.empty(int(samples))
    wts = np.empty(int(samples))

    def fn(rng, size, chunk_index):
        x, theta, s, log_w = sample_paths(table, size, n, rng, cfg)
        log_a, log_c = mobius_log_coeffs(x, theta, s)
        w = np.exp(log_gap(log_a, log_c, 1.0) - rho * s[:, -1] + log_w)
        w[x[:, j - 1] < thr] = 0.0
        return (x[:, j - 1] - table.a * n) / scale, w

    pos = 0
    for t, w in chunked_map(seed, f"fluct-n{n}-j{j}", samples, fn,
                            batches=batches):
        vals[pos:pos + t.size] = t
        wts[pos:pos + t.size] = w
        pos += t.size
    wsum = wts.sum()
    ess = (wsum * wsum / (wts ** 2).sum()) if wsum > 0 else 0.0
    if ess < 100.0:
        raise DegenerateSample(
            f"effective sample size {ess:.1f} < 100 at n={n}, j={j}; "
            f"raise samples or move j into the bulk of the jump law")
    return FluctuationSample(values=vals, weights=wts, ess=float(ess),
                             sigma=sigma, n=n, j=j, samples=int(samples),
                             seed=seed)


def record_estimate(params, est: Estimate, wall_time: float | None = None) -> dict:
    """JSONL-shaped record for the run harness."""
    return {
        "method": est.method,
        "params_hash": params_hash(params),
        "n": est.n,
        "samples": est.n_samples,
        "value": est.value,
        "stderr": est.stderr,
        "seed": est.seed,
        "wall_time": wall_time,
    }
