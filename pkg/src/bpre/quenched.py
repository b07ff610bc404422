"""Fixed-environment layer: linear-fractional reproduction along a path.

Everything here is conditional on a realized environment sequence. Each
step carries a pgf f(s) = 1 - theta + theta^2 / (theta + zeta (1 - s));
compositions of such maps stay in the family u -> A u / (1 + C u) for the
survival gap u = 1 - s, which is what makes long products cheap and lets
every quantity be evaluated in log space when the gap underflows.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .env_model import TILTED, as_table, sample_x
from .errors import CapExceeded, DomainError, NotGeometric

# switch the survival recursion from linear to log tracking below this gap
GAP_SWITCH = 1e-8

_CSV_FIELDS = ("k", "theta_k", "zeta_k", "X_k", "S_k")


def point_mass(value: float):
    """Degenerate law usable wherever a theta law is accepted."""
    v = float(value)
    if not 0.0 < v <= 1.0:
        raise DomainError(f"theta point mass must lie in (0, 1], got {v}")

    def law(rng, size=None):
        return v if size is None else np.full(size, v)

    return law


def _draw_theta(theta_law, rng, size):
    if theta_law is None:
        return np.ones(size)
    th = np.asarray(theta_law(rng, size), dtype=float)
    if th.shape != tuple(np.atleast_1d(size)) and th.shape != (size,):
        th = th.reshape(size)
    if np.any(th <= 0.0) or np.any(th > 1.0):
        raise DomainError("theta law produced values outside (0, 1]")
    return th


@dataclass(frozen=True)
class EnvStep:
    """One environment draw: offspring pgf parameters (theta, zeta).

    The step mean is f'(1) = zeta, so the log-mean increment is log zeta.
    """

    theta: float
    zeta: float

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise DomainError(f"theta must lie in (0, 1], got {self.theta}")
        if not self.zeta > 0.0:
            raise DomainError(f"zeta must be positive, got {self.zeta}")

    @property
    def x(self) -> float:
        return math.log(self.zeta)


@dataclass(frozen=True)
class EnvPath:
    """A fixed environment sequence with its log-mean prefix sums.

    `s` has length n+1 with s[0] = 0 and is required to be bitwise equal to
    the cumulative sum of log zeta_k: floating subtraction cannot recover
    increments from arbitrary prefix sums, so the invariant is enforced at
    construction rather than pairwise.
    """

    steps: tuple
    s: np.ndarray

    def __post_init__(self):
        steps = tuple(self.steps)
        object.__setattr__(self, "steps", steps)
        s = np.array(self.s, dtype=float)
        if s.shape != (len(steps) + 1,):
            raise DomainError(
                f"prefix sums have shape {s.shape}, expected ({len(steps) + 1},)"
            )
        expect = _prefix_sums(steps)
        if not np.array_equal(s, expect):
            raise DomainError("prefix sums do not match cumsum(log zeta)")
        s.flags.writeable = False
        object.__setattr__(self, "s", s)

    @classmethod
    def from_steps(cls, steps) -> "EnvPath":
        steps = tuple(steps)
        return cls(steps, _prefix_sums(steps))

    @classmethod
    def from_arrays(cls, theta, zeta) -> "EnvPath":
        theta = np.asarray(theta, dtype=float)
        zeta = np.asarray(zeta, dtype=float)
        if theta.shape != zeta.shape:
            raise DomainError("theta and zeta arrays must have equal length")
        return cls.from_steps(
            EnvStep(float(t), float(z)) for t, z in zip(theta, zeta)
        )

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def theta_array(self) -> np.ndarray:
        return np.array([st.theta for st in self.steps])

    @property
    def zeta_array(self) -> np.ndarray:
        return np.array([st.zeta for st in self.steps])


def _prefix_sums(steps) -> np.ndarray:
    out = np.zeros(len(steps) + 1)
    if steps:
        out[1:] = np.cumsum(np.log([st.zeta for st in steps]))
    return out


def save_path_csv(path: EnvPath, dest) -> None:
    """Write a path as columnar CSV (k, theta_k, zeta_k, X_k, S_k).

    Floats are written with repr so a round trip is bit-exact.
    """
    own = isinstance(dest, (str, os.PathLike))
    fh = open(dest, "w", newline="") if own else dest
    try:
        w = csv.writer(fh)
        w.writerow(_CSV_FIELDS)
        for k, st in enumerate(path.steps, start=1):
            w.writerow([k, repr(st.theta), repr(st.zeta),
                        repr(math.log(st.zeta)), repr(float(path.s[k]))])
    finally:
        if own:
            fh.close()


def load_path_csv(src) -> EnvPath:
    """Read a path written by save_path_csv; validates the header."""
    own = isinstance(src, (str, os.PathLike))
    fh = open(src, "r", newline="") if own else src
    try:
        r = csv.reader(fh)
        header = tuple(next(r))
        if header != _CSV_FIELDS:
            raise DomainError(f"unexpected CSV header {header}")
        steps, s = [], [0.0]
        for row in r:
            steps.append(EnvStep(float(row[1]), float(row[2])))
            s.append(float(row[4]))
    finally:
        if own:
            fh.close()
    return EnvPath(tuple(steps), np.array(s))


# ---------------------------------------------------------------------------
# generating functions and quenched survival

def gap_step(step: EnvStep, u: float) -> float:
    """One-step survival-gap map u -> theta zeta u / (theta + zeta u).

    Fixed point at u = 0 is exact, which keeps pgf(step, 1) == 1 exact.
    """
    return step.theta * step.zeta * u / (step.theta + step.zeta * u)


def pgf(step: EnvStep, s: float) -> float:
    """Offspring pgf of one step, evaluated through the gap form."""
    s = float(s)
    if not 0.0 <= s <= 1.0:
        raise DomainError(f"pgf argument must lie in [0, 1], got {s}")
    return 1.0 - gap_step(step, 1.0 - s)


def survival_q(path: EnvPath, s: float) -> float:
    """Survival gap 1 - f_1(f_2(... f_n(s))) for a fixed path.

    Iterates the gap recursion from the inside out; once the gap drops
    below GAP_SWITCH the recursion continues on log u, so values down to
    1e-300 and beyond come out with full relative precision.
    """
    s = float(s)
    if not 0.0 <= s <= 1.0:
        raise DomainError(f"survival argument must lie in [0, 1], got {s}")
    u = 1.0 - s
    log_u = None
    for st in reversed(path.steps):
        if log_u is None:
            u = gap_step(st, u)
            if 0.0 < u < GAP_SWITCH:
                log_u = math.log(u)
        else:
            lz, lt = math.log(st.zeta), math.log(st.theta)
            log_u = lz + log_u - np.logaddexp(0.0, lz - lt + log_u)
    return u if log_u is None else float(np.exp(log_u))


def lf_survival(path: EnvPath) -> float:
    """Closed-form survival gap at s=0 for a theta == 1 path.

    The one-step recursion 1/u' = 1/(zeta u) + 1 telescopes to
    1/u = sum_k exp(-S_k), k = 0..n; evaluated with logsumexp.
    """
    if any(st.theta != 1.0 for st in path.steps):
        raise NotGeometric("closed form requires theta == 1 on every step")
    return float(np.exp(-logsumexp(-path.s)))


def w_ratio(path: EnvPath, j: int) -> float:
    """Normalized survival of the reversed composition over steps j+1..n.

    The outermost factor is step n; the value equals
    1 / (1 + sum_{k>j} (zeta_k/theta_k) exp(S_{k-1} - S_j)) and lies in
    (0, 1].
    """
    n = len(path)
    if not isinstance(j, (int, np.integer)) or isinstance(j, bool):
        raise IndexError(f"j must be an integer, got {j!r}")
    if not 0 <= j <= n:
        raise IndexError(f"j must lie in [0, {n}], got {j}")
    if j == n:
        return 1.0
    terms = np.array(
        [
            math.log(st.zeta) - math.log(st.theta) + path.s[k - 1] - path.s[j]
            for k, st in enumerate(path.steps, start=1)
            if k > j
        ]
    )
    return float(expit(-logsumexp(terms)))


def quenched_profile(path: EnvPath, s_values=(0.0,), j_values=()) -> "QuenchedResult":
    """Evaluate survival gaps and normalized ratios on one path."""
    sv = np.array([survival_q(path, s) for s in s_values])
    wr = np.array([w_ratio(path, j) for j in j_values])
    return QuenchedResult(survival_q=sv, w_ratio=wr)


@dataclass(frozen=True)
class QuenchedResult:
    survival_q: np.ndarray
    w_ratio: np.ndarray

    def __post_init__(self):
        if np.any(self.survival_q < 0.0) or np.any(self.survival_q > 1.0):
            raise DomainError("survival values must lie in [0, 1]")
        if np.any(self.w_ratio <= 0.0) or np.any(self.w_ratio > 1.0):
            raise DomainError("normalized ratios must lie in (0, 1]")


# ---------------------------------------------------------------------------
# batch kernels over path matrices
#
# A path batch is (x, theta, s): x and theta are (N, n) matrices of
# log-means and theta parameters, s is the (N, n+1) prefix-sum matrix with
# s[:, 0] = 0. All kernels work on log scale so n in the thousands and
# survival gaps near the underflow floor are fine.

def mobius_log_coeffs(x, theta, s):
    """Per-path (log A, log C) of the composed gap map u -> A u/(1 + C u).

    Composition order matches survival_q: innermost factor is the last
    step. log A is just S_n; log C collects (zeta_k/theta_k) e^{S_n-S_{k-1}}.
    """
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    s = np.asarray(s, dtype=float)
    log_a = s[:, -1]
    if x.shape[1] == 0:
        return log_a, np.full(x.shape[0], -np.inf)
    terms = x - np.log(theta) + log_a[:, None] - s[:, 1:]
    return log_a, logsumexp(terms, axis=1)


def log_gap(log_a, log_c, u):
    """log of A u / (1 + C u) for scalar gap argument u in [0, 1]."""
    if u == 0.0:
        return np.full(np.shape(log_a), -np.inf)
    lu = math.log(u)
    return log_a + lu - np.logaddexp(0.0, log_c + lu)


def w_ratio_batch(x, theta, s, j: int = 0):
    """Batch version of w_ratio at a common index j."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    s = np.asarray(s, dtype=float)
    n = x.shape[1]
    if not 0 <= j <= n:
        raise IndexError(f"j must lie in [0, {n}], got {j}")
    if j == n:
        return np.ones(x.shape[0])
    terms = x[:, j:] - np.log(theta[:, j:]) + s[:, j:-1] - s[:, j:j + 1]
    return expit(-logsumexp(terms, axis=1))


def sample_env_matrix(params, size: int, n: int, rng, measure: str = TILTED,
                      theta_law=None):
    """Draw a (size, n) batch of environment paths; returns (x, theta, s)."""
    table = as_table(params)
    x = sample_x(table, measure, rng, size=size * n).reshape(size, n) \
        if n else np.empty((size, 0))
    theta = _draw_theta(theta_law, rng, (size, n))
    s = np.zeros((size, n + 1))
    if n:
        np.cumsum(x, axis=1, out=s[:, 1:])
    return x, theta, s


def sample_env_path(params, n: int, rng, measure: str = TILTED,
                    theta_law=None) -> EnvPath:
    """Draw one environment path of length n as an EnvPath."""
    table = as_table(params)
    x = sample_x(table, measure, rng, size=n) if n else np.empty(0)
    theta = _draw_theta(theta_law, rng, n)
    return EnvPath.from_steps(
        EnvStep(float(t), float(np.exp(xi))) for t, xi in zip(theta, np.atleast_1d(x))
    )


# ---------------------------------------------------------------------------
# the almost-sure limit of the normalized reversed survival

@dataclass(frozen=True)
class WLimitResult:
    value: float
    converged: bool
    steps: int
    trace: np.ndarray | None = None


def w_limit(params, rng, j: int = 0, tol: float = 1e-10, n_cap: int = 20_000,
            theta_law=None, window: int = 50, return_trace: bool = False):
    """Sample one realization of the limiting normalized survival.

    Extends a fresh tilted path step by step; the running value is
    nonincreasing, so the stop rule is a change below tol across a probe
    window. Hitting n_cap sets converged=False instead of raising.
    """
    if tol <= 0.0:
        raise DomainError("tol must be positive")
    table = as_table(params)
    for _ in range(j):
        sample_x(table, TILTED, rng)
        _draw_theta(theta_law, rng, 1)

    log_d = -np.inf
    s_prev = 0.0
    hist = [1.0]
    chunk = 256
    n = 0
    converged = False
    while n < n_cap:
        xs = sample_x(table, TILTED, rng, size=chunk)
        ths = _draw_theta(theta_law, rng, chunk)
        for xi, th in zip(xs, ths):
            log_d = np.logaddexp(log_d, xi - math.log(th) + s_prev)
            s_prev += xi
            n += 1
            hist.append(float(expit(-log_d)))
            if n >= window and hist[-1 - window] - hist[-1] < tol:
                converged = True
                break
            if n >= n_cap:
                break
        if converged:
            break
    trace = np.array(hist) if return_trace else None
    return WLimitResult(value=hist[-1], converged=converged, steps=n, trace=trace)


def w_fixed_n(params, size: int, n: int, rng, theta_law=None,
              sample_block: int = 20_000):
    """Batch draws of the normalized reversed survival truncated at depth n.

    Works in sample blocks to bound memory; truncation at depth n gives
    monotone upper approximations of the true limiting values.
    """
    out = np.empty(size)
    done = 0
    while done < size:
        b = min(sample_block, size - done)
        x, theta, s = sample_env_matrix(params, b, n, rng, theta_law=theta_law)
        out[done:done + b] = w_ratio_batch(x, theta, s, 0)
        done += b
    return out


def sample_g(params, rng, theta_law=None):
    """Draw one limiting pgf handle lam -> 1 - theta* lam / (theta* + lam).

    theta* comes from the configured law (default: point mass at 1, giving
    lam -> 1/(1+lam)). The handle is vectorized over lam >= 0 and satisfies
    g(0) == 1 exactly.
    """
    as_table(params)
    theta_star = 1.0 if theta_law is None else float(np.asarray(theta_law(rng, None)))
    if not 0.0 < theta_star <= 1.0:
        raise DomainError(f"theta* must lie in (0, 1], got {theta_star}")

    def g(lam):
        arr = np.asarray(lam, dtype=float)
        if np.any(arr < 0.0):
            raise DomainError("limit pgf argument must be nonnegative")
        val = 1.0 - theta_star * arr / (theta_star + arr)
        return float(val) if np.isscalar(lam) else val

    g.theta_star = theta_star
    return g


# ---------------------------------------------------------------------------
# exact particle simulation

def _offspring_total(z, theta: float, zeta: float, rng):
    """Total offspring of z parents; z may be an integer array.

    The per-parent law with pgf 1 - theta + theta^2/(theta + zeta(1-s)) is
    zero with probability 1 - theta zeta/(theta + zeta) and otherwise
    geometric (support 1, 2, ...) with success theta/(theta + zeta); parents
    aggregate into a binomial count of nonzero families plus a negative
    binomial of extra members.
    """
    p_active = theta * zeta / (theta + zeta)
    p_geo = theta / (theta + zeta)
    active = rng.binomial(z, p_active)
    extra = np.zeros_like(active)
    pos = active > 0
    if np.any(pos):
        extra[pos] = rng.negative_binomial(active[pos], p_geo)
    return active + extra


def simulate_particles(path: EnvPath, z0: int, rng, cap: int = 1_000_000,
                       size=None):
    """Exact forward population simulation along a fixed path.

    Returns the terminal population (scalar, or an array when size is
    given). Raises CapExceeded as soon as any population passes cap; the
    caller is expected to fall back to generating-function evaluation.
    """
    if z0 < 1:
        raise DomainError(f"z0 must be a positive integer, got {z0}")
    if cap < 1:
        raise DomainError(f"cap must be a positive integer, got {cap}")
    scalar = size is None
    z = np.full(1 if scalar else int(size), z0, dtype=np.int64)
    for k, st in enumerate(path.steps, start=1):
        alive = z > 0
        if not np.any(alive):
            break
        z[alive] = _offspring_total(z[alive], st.theta, st.zeta, rng)
        worst = int(z.max())
        if worst > cap:
            raise CapExceeded(step=k, population=worst, cap=cap)
    return int(z[0]) if scalar else z
