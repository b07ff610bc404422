"""Defensive-mixture big-jump sampling and the chunked Monte Carlo engine.

Rare-event estimators here mix the plain tilted path law with a forced-jump
proposal: with probability `mixture_weight` one step (chosen by the
configured index law) is replaced by a draw from the tilted law conditioned
on exceeding T = delta * a * n, which above x0 is an exact Pareto tail.
Because the nominal law keeps positive mixture mass, every importance
weight is bounded by 1/(1 - mixture_weight), and the weight has the closed
form 1 / ((1-w) + (w/tail(T)) * sum_k p_k 1{x_k >= T}).

Estimators consume samples through `mc_mean`, which cuts work into fixed
chunks with replayable streams and reduces in chunk order, so results are
byte-identical for any batch count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env_model import as_table, tilted_tail
from .errors import DomainError
from .quenched import sample_env_matrix
from .streams import CHUNK, chunked_map

_LAWS = ("uniform", "first_block", "last_block")


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo point estimate with its sampling error."""

    value: float
    stderr: float
    n_samples: int
    method: str
    seed: int | None = None
    n: int | None = None

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise DomainError(f"estimate value must be finite, got {self.value}")
        if not self.stderr >= 0.0:
            raise DomainError(f"stderr must be nonnegative, got {self.stderr}")
        if self.n_samples < 1:
            raise DomainError(f"n_samples must be >= 1, got {self.n_samples}")


@dataclass(frozen=True)
class ISConfig:
    """Defensive big-jump mixture settings.

    jump_index_law is "uniform", "first_block", "last_block" (blocks are
    the first/last quarter of the horizon), or ("point", j) with 1-based j.
    The jump threshold is delta * a * n.
    """

    mixture_weight: float = 0.5
    jump_index_law: object = "uniform"
    delta: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.mixture_weight < 1.0:
            raise DomainError(
                f"mixture_weight must lie in (0, 1), got {self.mixture_weight}"
            )
        if not 0.0 < self.delta < 1.0:
            raise DomainError(f"delta must lie in (0, 1), got {self.delta}")
        law = self.jump_index_law
        if isinstance(law, str):
            if law not in _LAWS:
                raise DomainError(f"unknown jump index law {law!r}")
        else:
            try:
                tag, j = law
            except (TypeError, ValueError):
                raise DomainError(f"malformed jump index law {law!r}") from None
            if tag != "point" or int(j) < 1:
                raise DomainError(f"malformed jump index law {law!r}")
            object.__setattr__(self, "jump_index_law", ("point", int(j)))


def index_probs(law, n: int) -> np.ndarray:
    """Jump position law as 0-based probabilities over steps 1..n."""
    if n < 1:
        raise DomainError(f"horizon must be >= 1, got {n}")
    p = np.zeros(n)
    block = max(1, n // 4)
    if law == "uniform":
        p[:] = 1.0 / n
    elif law == "first_block":
        p[:block] = 1.0 / block
    elif law == "last_block":
        p[-block:] = 1.0 / block
    else:
        tag, j = law
        if j > n:
            raise DomainError(f"point law index {j} exceeds horizon {n}")
        p[j - 1] = 1.0
    return p


def jump_threshold(params, n: int, delta: float) -> float:
    """Threshold for the forced-jump proposal: max(delta * a * n, x0).

    The environment law has no mass between 0 and x0, so conditioning the
    tail on X >= T with T < x0 is the same event as X >= x0; clamping keeps
    the mixture well-defined at horizons too short for delta*a*n to reach
    the polynomial region.
    """
    table = as_table(params)
    return max(delta * table.a * n, table.params.x0)


def sample_paths(params, size: int, n: int, rng, is_config: ISConfig | None = None,
                 theta_law=None):
    """Draw (x, theta, s, log_w) under the tilted law or the mixture.

    log_w is the per-path log importance weight back to the plain tilted
    law (zeros when no mixture is used).
    """
    if is_config is None:
        x, theta, s = sample_env_matrix(params, size, n, rng, theta_law=theta_law)
        return x, theta, s, np.zeros(size)
    table = as_table(params)
    t = jump_threshold(table, n, is_config.delta)
    tail_t = tilted_tail(table, t)
    probs = index_probs(is_config.jump_index_law, n)
    w = is_config.mixture_weight

    x, theta, s = sample_env_matrix(params, size, n, rng, theta_law=theta_law)
    forced = rng.random(size) < w
    n_forced = int(np.count_nonzero(forced))
    idx = rng.choice(n, size=n_forced, p=probs)
    x[forced, idx] = t * (1.0 - rng.random(n_forced)) ** (-1.0 / table.params.beta)
    np.cumsum(x, axis=1, out=s[:, 1:])

    hit = (x >= t).astype(float) @ probs
    log_w = -np.log((1.0 - w) + (w / tail_t) * hit)
    assert np.all(log_w <= -math.log1p(-w) + 1e-9), "defensive weight bound violated"
    return x, theta, s, log_w


def _chunk_stats(values: np.ndarray):
    v = np.atleast_2d(np.asarray(values, dtype=float).T).T  # (size, d)
    return v.shape[0], v.sum(axis=0), (v * v).sum(axis=0)


def mc_mean(seed: int, label: str, total: int, chunk_fn, batches: int = 1,
            chunk: int = CHUNK):
    """Chunked mean/stderr of per-sample values from chunk_fn(rng, size).

    chunk_fn may return a (size,) vector or a (size, d) matrix; the
    reduction runs in chunk order so the result is independent of batches.
    Returns (mean, stderr, total) with mean/stderr scalars for 1-D input.
    """
    parts = chunked_map(
        seed, label, total,
        lambda rng, size, ci: _chunk_stats(chunk_fn(rng, size)),
        batches=batches, chunk=chunk,
    )
    count = 0
    s1 = 0.0
    s2 = 0.0
    for c, a, b in parts:
        count += c
        s1 = s1 + a
        s2 = s2 + b
    mean = s1 / count
    var = np.maximum(s2 / count - mean * mean, 0.0)
    stderr = np.sqrt(var / count)
    if mean.shape == (1,):
        return float(mean[0]), float(stderr[0]), count
    return mean, stderr, count
