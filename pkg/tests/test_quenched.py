"""Fixed-environment layer: closed-form oracles, duality, particle checks."""

import io
import math

import numpy as np
import pytest
from scipy.stats import ks_2samp

import bpre.env_model as em
import bpre.quenched as qu
from bpre.errors import CapExceeded, DomainError, NotGeometric

P = em.DEFAULT_PARAMS
T = em.as_table(P)


def random_path(rng, n, mixed_theta=True):
    zeta = np.exp(rng.normal(-0.2, 0.4, size=n))
    theta = 0.3 + 0.7 * rng.random(n) if mixed_theta else np.ones(n)
    return qu.EnvPath.from_arrays(theta, zeta)


def uniform_theta(rng, size=None):
    return 0.2 + 0.8 * rng.random(size)


# ---------------------------------------------------------------------------
# pgf and one-step survival

def test_pgf_examples():
    assert qu.pgf(qu.EnvStep(1.0, 1.0), 0.0) == pytest.approx(0.5, abs=1e-15)
    assert qu.pgf(qu.EnvStep(1.0, 2.0), 0.0) == pytest.approx(1.0 / 3.0, abs=1e-15)
    # one-step survival for theta=1, zeta=2
    assert 1.0 - qu.pgf(qu.EnvStep(1.0, 2.0), 0.0) == pytest.approx(2.0 / 3.0)


def test_pgf_exact_at_one():
    rng = np.random.default_rng(0)
    for _ in range(20):
        st = qu.EnvStep(float(uniform_theta(rng)), float(np.exp(rng.normal(0, 1))))
        assert qu.pgf(st, 1.0) == 1.0


def test_pgf_domain():
    st = qu.EnvStep(0.5, 1.0)
    for s in (-0.1, 1.1, 2.0):
        with pytest.raises(DomainError):
            qu.pgf(st, s)


def test_pgf_maps_unit_interval_into_itself():
    rng = np.random.default_rng(1)
    for _ in range(50):
        st = qu.EnvStep(float(uniform_theta(rng)), float(np.exp(rng.normal(0, 1.5))))
        s = float(rng.random())
        assert 0.0 <= qu.pgf(st, s) <= 1.0


def test_step_validation():
    with pytest.raises(DomainError):
        qu.EnvStep(0.0, 1.0)
    with pytest.raises(DomainError):
        qu.EnvStep(1.2, 1.0)
    with pytest.raises(DomainError):
        qu.EnvStep(0.5, 0.0)


# ---------------------------------------------------------------------------
# quenched survival

def test_survival_empty_path():
    path = qu.EnvPath.from_steps([])
    for s in (0.0, 0.3, 1.0):
        assert qu.survival_q(path, s) == 1.0 - s
    assert qu.survival_q(path, 0.0) == 1.0


def test_survival_two_unit_steps():
    path = qu.EnvPath.from_arrays([1.0, 1.0], [1.0, 1.0])
    got = qu.survival_q(path, 0.0)
    assert got == pytest.approx(1.0 / 3.0, rel=1e-12)
    # cross-check by direct two-fold composition of the pgf
    st = qu.EnvStep(1.0, 1.0)
    assert 1.0 - qu.pgf(st, qu.pgf(st, 0.0)) == pytest.approx(got, rel=1e-15)


def test_survival_monotone_under_extension():
    rng = np.random.default_rng(2)
    for _ in range(10):
        path = random_path(rng, 30)
        vals = [
            qu.survival_q(qu.EnvPath.from_steps(path.steps[:k]), 0.0)
            for k in range(len(path) + 1)
        ]
        vals = np.array(vals)
        assert np.all(vals[1:] <= vals[:-1] * (1 + 1e-12))


def test_survival_exact_at_one():
    rng = np.random.default_rng(3)
    path = random_path(rng, 15)
    assert qu.survival_q(path, 1.0) == 0.0


def test_survival_deep_underflow_matches_closed_form():
    # gap decays like e^{-0.23 n}: crosses the linear->log switch near n=80
    # and lands around 1e-300 at n=3000
    steps = [qu.EnvStep(1.0, math.exp(-0.23))] * 3000
    path = qu.EnvPath.from_steps(steps)
    got = qu.survival_q(path, 0.0)
    want = qu.lf_survival(path)
    assert want < 1e-290
    assert got == pytest.approx(want, rel=1e-9)


def test_composition_consistency_exact():
    rng = np.random.default_rng(4)
    for _ in range(50):
        path = random_path(rng, 20)
        s = float(rng.random())
        full = qu.survival_q(path, s)
        inner = qu.survival_q(qu.EnvPath.from_steps(path.steps[1:]), s)
        staged = qu.gap_step(path.steps[0], inner)
        assert staged == full


def test_lf_survival_examples():
    two = qu.EnvPath.from_arrays([1.0, 1.0], [1.0, 1.0])
    assert qu.lf_survival(two) == pytest.approx(1.0 / 3.0, rel=1e-14)
    one = qu.EnvPath.from_arrays([1.0], [2.0])
    assert qu.lf_survival(one) == pytest.approx(2.0 / 3.0, rel=1e-14)
    mixed = qu.EnvPath.from_arrays([1.0, 0.7], [1.0, 1.0])
    with pytest.raises(NotGeometric):
        qu.lf_survival(mixed)


def test_lf_survival_agrees_with_iteration():
    rng = np.random.default_rng(5)
    for _ in range(100):
        path = random_path(rng, int(rng.integers(1, 60)), mixed_theta=False)
        assert qu.survival_q(path, 0.0) == pytest.approx(
            qu.lf_survival(path), rel=1e-12
        )


# ---------------------------------------------------------------------------
# normalized reversed survival

def test_w_ratio_at_terminal_index():
    rng = np.random.default_rng(6)
    path = random_path(rng, 12)
    assert qu.w_ratio(path, 12) == 1.0


def test_w_ratio_single_factor():
    rng = np.random.default_rng(7)
    path = random_path(rng, 9)
    st = path.steps[-1]
    want = (1.0 - qu.pgf(st, 0.0)) / st.zeta
    assert qu.w_ratio(path, 8) == pytest.approx(want, rel=1e-13)


def test_w_ratio_geometric_closed_form():
    # independent oracle: 1 / sum_{i=j..n} exp(S_i - S_j), plain linear space
    rng = np.random.default_rng(8)
    for _ in range(30):
        n = int(rng.integers(1, 40))
        path = random_path(rng, n, mixed_theta=False)
        j = int(rng.integers(0, n + 1))
        want = 1.0 / np.sum(np.exp(path.s[j:] - path.s[j]))
        assert qu.w_ratio(path, j) == pytest.approx(want, rel=1e-12)


def test_w_ratio_index_errors():
    rng = np.random.default_rng(9)
    path = random_path(rng, 5)
    for j in (-1, 6, 2.5):
        with pytest.raises(IndexError):
            qu.w_ratio(path, j)


def test_w_bound_on_random_paths():
    # e^{S_n - S_j} W_{n,j} = 1 - f(0) <= min(1, e^{S_n - S_j})
    rng = np.random.default_rng(10)
    n = 25
    x, theta, s = qu.sample_env_matrix(P, 10_000, n, rng, theta_law=uniform_theta)
    for j in (0, n // 3, n - 1):
        w = qu.w_ratio_batch(x, theta, s, j)
        assert np.all(w > 0.0) and np.all(w <= 1.0)
        gap_log = s[:, -1] - s[:, j] + np.log(w)
        bound = np.minimum(0.0, s[:, -1] - s[:, j])
        assert np.all(gap_log <= bound + 1e-12)


def test_forward_reversed_duality():
    # reversing an iid sequence preserves its law, so the survival gap of
    # the forward and reversed compositions agree in distribution
    rng = np.random.default_rng(11)
    n, size = 30, 100_000
    x, theta, s = qu.sample_env_matrix(P, size, n, rng)
    log_a, log_c = qu.mobius_log_coeffs(x, theta, s)
    forward = np.exp(qu.log_gap(log_a, log_c, 1.0))
    reversed_gap = np.exp(s[:, -1] + np.log(qu.w_ratio_batch(x, theta, s, 0)))
    stat = ks_2samp(forward, reversed_gap).statistic
    assert stat < 0.01


# ---------------------------------------------------------------------------
# batch kernels agree with the scalar recursions

def test_batch_kernels_match_scalar():
    rng = np.random.default_rng(12)
    for _ in range(10):
        n = int(rng.integers(1, 35))
        path = random_path(rng, n)
        x = np.log(path.zeta_array)[None, :]
        th = path.theta_array[None, :]
        s = path.s[None, :]
        log_a, log_c = qu.mobius_log_coeffs(x, th, s)
        for sv in (0.0, 0.4, 0.9):
            got = float(np.exp(qu.log_gap(log_a, log_c, 1.0 - sv))[0])
            assert got == pytest.approx(qu.survival_q(path, sv), rel=1e-10)
        for j in (0, n // 2, n):
            got = float(qu.w_ratio_batch(x, th, s, j)[0])
            assert got == pytest.approx(qu.w_ratio(path, j), rel=1e-12)


def test_log_gap_at_zero_argument():
    rng = np.random.default_rng(13)
    x, theta, s = qu.sample_env_matrix(P, 4, 6, rng)
    log_a, log_c = qu.mobius_log_coeffs(x, theta, s)
    assert np.all(np.isneginf(qu.log_gap(log_a, log_c, 0.0)))


# ---------------------------------------------------------------------------
# limit sampling

def test_w_limit_basic():
    rng = np.random.default_rng(14)
    for _ in range(20):
        res = qu.w_limit(P, rng, return_trace=True)
        assert res.converged
        assert 0.0 < res.value <= 1.0
        assert np.all(np.diff(res.trace) <= 0.0)


def test_w_limit_cap_flag():
    rng = np.random.default_rng(15)
    res = qu.w_limit(P, rng, n_cap=10)
    assert not res.converged
    assert res.steps == 10


def test_w_limit_distribution_stable_under_deeper_truncation():
    rng = np.random.default_rng(16)
    a = qu.w_fixed_n(P, 100_000, 150, rng)
    b = qu.w_fixed_n(P, 100_000, 300, rng)
    assert ks_2samp(a, b).statistic < 0.01


def test_sample_g():
    rng = np.random.default_rng(17)
    g = qu.sample_g(P, rng)
    assert g.theta_star == 1.0
    assert g(1.0) == pytest.approx(0.5, abs=1e-15)
    assert g(0.0) == 1.0
    g2 = qu.sample_g(P, rng, theta_law=qu.point_mass(0.5))
    assert g2(1.0) == pytest.approx(2.0 / 3.0, rel=1e-14)
    lam = np.linspace(0.0, 8.0, 30)
    vals = g(lam)
    assert np.all(np.diff(vals) < 0.0)
    assert np.all(vals[1:] < 1.0)
    with pytest.raises(DomainError):
        g(-0.5)


# ---------------------------------------------------------------------------
# particle simulation against generating-function oracles

def test_particles_one_step_extinction():
    path = qu.EnvPath.from_arrays([1.0], [2.0])
    rng = np.random.default_rng(18)
    z = qu.simulate_particles(path, 1, rng, size=10**6)
    p_hat = float(np.mean(z == 0))
    p = qu.pgf(path.steps[0], 0.0)
    stderr = math.sqrt(p * (1 - p) / z.size)
    assert abs(p_hat - p) < 4 * stderr


def test_particles_five_step_survival():
    path = qu.EnvPath.from_arrays(
        [1.0, 0.8, 1.0, 0.6, 0.9], [0.5, 1.2, 0.7, 2.0, 0.4]
    )
    rng = np.random.default_rng(19)
    z = qu.simulate_particles(path, 1, rng, size=10**6)
    p_hat = float(np.mean(z > 0))
    p = qu.survival_q(path, 0.0)
    stderr = math.sqrt(p * (1 - p) / z.size)
    assert abs(p_hat - p) < 4 * stderr


def test_particles_match_pgf_pointwise():
    st = qu.EnvStep(0.7, 1.3)
    path = qu.EnvPath.from_steps([st])
    rng = np.random.default_rng(20)
    z = qu.simulate_particles(path, 1, rng, size=10**6)
    for s in (0.3, 0.7):
        emp = s ** z.astype(float)
        stderr = float(np.std(emp) / math.sqrt(z.size))
        assert abs(float(np.mean(emp)) - qu.pgf(st, s)) < 4 * stderr


def test_particles_mean_identity():
    st = qu.EnvStep(0.7, 1.3)
    path = qu.EnvPath.from_steps([st])
    rng = np.random.default_rng(21)
    z = qu.simulate_particles(path, 1, rng, size=10**6).astype(float)
    stderr = float(np.std(z) / math.sqrt(z.size))
    assert abs(float(np.mean(z)) - st.zeta) < 4 * stderr


def test_particles_cap():
    path = qu.EnvPath.from_arrays([1.0], [1e9])
    rng = np.random.default_rng(22)
    with pytest.raises(CapExceeded) as exc:
        qu.simulate_particles(path, 1, rng, cap=10)
    err = exc.value
    assert err.step == 1 and err.cap == 10 and err.population > 10


def test_particles_bad_arguments():
    path = qu.EnvPath.from_arrays([1.0], [1.0])
    rng = np.random.default_rng(23)
    with pytest.raises(DomainError):
        qu.simulate_particles(path, 0, rng)
    with pytest.raises(DomainError):
        qu.simulate_particles(path, 1, rng, cap=0)


# ---------------------------------------------------------------------------
# path containers and CSV round trip

def test_env_path_validation():
    with pytest.raises(DomainError):
        qu.EnvPath((qu.EnvStep(1.0, 1.0),), np.array([0.0]))
    with pytest.raises(DomainError):
        qu.EnvPath((qu.EnvStep(1.0, 1.0),), np.array([0.0, 0.1]))


def test_csv_round_trip_exact(tmp_path):
    rng = np.random.default_rng(24)
    zeta = np.exp(rng.normal(-0.3, 2.0, size=50))
    zeta[7] = math.exp(44.0)
    zeta[13] = 1e-15
    theta = uniform_theta(rng, 50)
    path = qu.EnvPath.from_arrays(theta, zeta)

    dest = tmp_path / "path.csv"
    qu.save_path_csv(path, dest)
    back = qu.load_path_csv(dest)
    assert back.theta_array.tolist() == path.theta_array.tolist()
    assert back.zeta_array.tolist() == path.zeta_array.tolist()
    assert np.array_equal(back.s, path.s)

    buf = io.StringIO()
    qu.save_path_csv(path, buf)
    buf.seek(0)
    again = qu.load_path_csv(buf)
    assert np.array_equal(again.s, path.s)


def test_csv_header_check():
    with pytest.raises(DomainError):
        qu.load_path_csv(io.StringIO("a,b,c\n1,2,3\n"))


def test_sample_env_path_and_matrix_shapes():
    rng = np.random.default_rng(25)
    path = qu.sample_env_path(P, 12, rng, theta_law=uniform_theta)
    assert len(path) == 12 and path.s.shape == (13,)
    assert np.all(path.theta_array > 0.2 - 1e-12)

    x, theta, s = qu.sample_env_matrix(P, 7, 9, rng)
    assert x.shape == (7, 9) and theta.shape == (7, 9) and s.shape == (7, 10)
    assert np.all(s[:, 0] == 0.0)
    assert np.allclose(s[:, 1:], np.cumsum(x, axis=1))
    assert np.all(theta == 1.0)


def test_quenched_profile():
    rng = np.random.default_rng(26)
    path = random_path(rng, 10)
    res = qu.quenched_profile(path, s_values=(0.0, 0.5, 1.0), j_values=(0, 5, 10))
    assert res.survival_q.shape == (3,)
    assert res.w_ratio[-1] == 1.0
    assert np.all(res.survival_q >= 0.0) and np.all(res.survival_q <= 1.0)
