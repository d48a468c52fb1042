import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import integrate, stats

from perturbed_cycles.benchmarks import hopf_diffusion
from perturbed_cycles.ensemble import run_batches
from perturbed_cycles.exit_stats import geometric_tail_fit, hazard_curve, hazard_flatness
from perturbed_cycles.linear_rpm import (CENSORED, ExitRun, KestenSpec, LinearPMSpec, lyapunov_top,
                                         one_return_statistics, psd_factor, sigma_threshold,
                                         simulate_exit_full, simulate_exit_kesten,
                                         simulate_exit_linear, step_kesten, step_linear, write_exit_csv)
from perturbed_cycles.norms import adapted_norm


def spec2(A, sigma=0.1, Sigma=None, B=None):
    A = np.asarray(A, float)
    d = A.shape[0]
    return LinearPMSpec(A=A, B=np.eye(d) if B is None else B, sigma=sigma,
                        Sigma=np.eye(d + 1) if Sigma is None else Sigma)


def disk_exit_probability(cov, r):
    """P(|eta| > r) for eta ~ N(0, cov) in two dimensions, by 1D quadrature."""
    lam = np.linalg.eigvalsh(cov)

    def inner(z1):
        rest = (r * r - lam[0] * z1 * z1) / lam[1]
        return stats.norm.pdf(z1) * stats.chi2.cdf(max(rest, 0.0), 1)

    lim = r / np.sqrt(lam[0])
    inside, _ = integrate.quad(inner, -lim, lim, epsabs=1e-13)
    return 1.0 - inside


def test_psd_factor_semidefinite():
    S = np.array([[1.0, 1.0], [1.0, 1.0]])
    L = psd_factor(S)
    assert_allclose(L @ L.T, S, atol=1e-12)
    with pytest.raises(ValueError):
        psd_factor(np.diag([1.0, -1.0]))


def test_spec_dimension_checks():
    with pytest.raises(ValueError):
        LinearPMSpec(A=np.eye(2), B=np.eye(3), sigma=0.1, Sigma=np.eye(3))
    with pytest.raises(ValueError):
        LinearPMSpec(A=np.eye(2), B=np.eye(2), sigma=0.1, Sigma=np.eye(2))
    with pytest.raises(ValueError):
        LinearPMSpec(A=np.eye(2), B=np.eye(2), sigma=-1.0, Sigma=np.eye(3))


def test_fixed_point_without_noise():
    s = spec2(np.diag([0.5, 0.2]), sigma=0.0)
    rng = np.random.default_rng(0)
    x = np.zeros(2)
    for _ in range(10):
        x = step_linear(x, s, rng)
    assert_array_equal(x, 0.0)


def test_noiseless_contraction_in_adapted_norm():
    A = np.array([[0.5, 3.0], [0.0, 0.4]])
    s = spec2(A, sigma=0.0)
    o = adapted_norm(A, 0.3)
    x0 = np.array([1.0, -2.0])
    x = x0
    rng = np.random.default_rng(0)
    for n in range(1, 30):
        x = step_linear(x, s, rng)
        assert o.norm(x) <= 0.7 ** n * o.norm(x0) * (1 + 1e-12)


def test_step_linear_formula():
    A = np.array([[0.3, 0.1], [0.0, 0.2]])
    B = np.array([[1.0, 2.0], [0.5, -1.0]])
    s = LinearPMSpec(A=A, B=B, sigma=0.2, Sigma=np.eye(3))
    x = np.array([0.4, -0.1])
    z = np.random.default_rng(7).standard_normal(3)
    expect = A @ (np.eye(2) + 0.2 * z[0] * B) @ x + 0.2 * z[1:]
    assert_allclose(step_linear(x, s, np.random.default_rng(7)), expect, rtol=1e-14)


def test_kesten_reduces_to_noiseless_contraction():
    k = KestenSpec(A=[[0.5]], B=[[1.0]], G=[[1.0]], sigma=0.0, delta=0.0)
    y = step_kesten(np.array([2.0]), k, np.random.default_rng(0))
    assert_allclose(y, [1.0])


def test_kesten_g_replaced_by_symmetric_root():
    th = 0.7
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    k = KestenSpec(A=np.eye(2) * 0.5, B=np.eye(2), G=2 * rot, sigma=0.1, delta=0.1)
    assert_allclose(k.G, 2 * np.eye(2), atol=1e-12)
    with pytest.raises(ValueError):
        KestenSpec(A=np.eye(2), B=np.eye(2), G=np.zeros((2, 2)), sigma=0.0, delta=0.0)


def stationary_second_moment(step, spec, rng, chains=2000, burn=200, steps=500):
    y = np.zeros((chains, spec.dim))
    acc = np.zeros(chains)
    for n in range(burn + steps):
        y = step(y, spec, rng)
        if n >= burn:
            acc += (y ** 2).sum(axis=1)
    per_chain = acc / steps
    return per_chain.mean(), per_chain.std(ddof=1) / np.sqrt(chains)


def test_kesten_scalar_second_moment():
    k = KestenSpec(A=[[0.9]], B=[[1.0]], G=[[1.0]], sigma=0.1, delta=0.05)
    m2, se = stationary_second_moment(step_kesten, k, np.random.default_rng(1))
    exact = 0.05 ** 2 / (1 - 0.81 * 1.01)
    assert abs(m2 - exact) < 3 * se


def test_kesten_matches_linear_map_when_independent():
    cov_eta = np.array([[0.3, 0.1], [0.1, 0.2]])
    Sigma = np.zeros((3, 3))
    Sigma[0, 0] = 1.0
    Sigma[1:, 1:] = cov_eta
    A = np.array([[0.6, 0.2], [-0.1, 0.5]])
    B = np.array([[1.0, 0.0], [0.3, -0.5]])
    lin = LinearPMSpec(A=A, B=B, sigma=0.2, Sigma=Sigma)
    kes = KestenSpec(A=A, B=B, G=np.linalg.cholesky(cov_eta), sigma=0.2, delta=0.2)
    m_lin, se_lin = stationary_second_moment(step_linear, lin, np.random.default_rng(2))
    m_kes, se_kes = stationary_second_moment(step_kesten, kes, np.random.default_rng(3))
    assert abs(m_lin - m_kes) < 3 * np.hypot(se_lin, se_kes)


def test_lyapunov_deterministic_product():
    A = np.array([[0.5, 2.0], [0.0, 0.3]])
    k = KestenSpec(A=A, B=np.eye(2), G=np.eye(2), sigma=0.0, delta=0.0)
    est = lyapunov_top(k, 100_000, np.random.default_rng(0))
    assert abs(est.alpha - np.log(0.5)) < 1e-3


def test_lyapunov_scalar_quadrature():
    a, s = 0.8, 0.4
    k = KestenSpec(A=[[a]], B=[[1.0]], G=[[1.0]], sigma=s, delta=0.0)
    est = lyapunov_top(k, 200_000, np.random.default_rng(1))
    f = lambda x: np.log(abs(1 + s * x)) * stats.norm.pdf(x)
    c = -1 / s
    e = sum(integrate.quad(f, lo, hi, limit=200)[0] for lo, hi in ((-np.inf, c), (c, 0.0), (0.0, np.inf)))
    assert abs(est.alpha - (np.log(a) + e)) < 3 * est.stderr


def test_lyapunov_negative_below_threshold():
    o = adapted_norm(np.diag([0.4, 0.3]), 0.5)
    B = np.eye(2)
    assert_allclose(o.operator_norm(B), 1.0, rtol=1e-8)
    thr = sigma_threshold(o, B)
    k = KestenSpec(A=o.A, B=B, G=np.eye(2), sigma=0.9 * thr, delta=0.0)
    est = lyapunov_top(k, 20_000, np.random.default_rng(2), oracle=o)
    assert est.sufficient_bound < 0
    assert est.alpha < 0
    assert est.alpha <= est.sufficient_bound + 3 * est.stderr


def test_exit_linear_noiseless_censored():
    s = spec2(np.diag([0.5, 0.5]), sigma=0.0)
    o = adapted_norm(s.A, 0.4)
    run = simulate_exit_linear(s, o, 0.1, np.zeros(2), 50, np.random.default_rng(0), n_replicates=10)
    assert np.all(run.censored) and np.all(run.tau == 50)


def test_exit_linear_memoryless_matches_quadrature():
    cov = np.array([[1.0, 0.3], [0.3, 0.5]])
    Sigma = np.zeros((3, 3))
    Sigma[0, 0] = 1.0
    Sigma[1:, 1:] = cov
    s = LinearPMSpec(A=np.zeros((2, 2)), B=np.eye(2), sigma=0.5, Sigma=Sigma)
    o = adapted_norm(s.A, 0.5)
    h = 1.0
    run = simulate_exit_linear(s, o, h, np.zeros(2), 10_000, np.random.default_rng(4), n_replicates=50_000)
    p = disk_exit_probability(cov, h / 0.5)
    fit = geometric_tail_fit(run, 1, n_boot=199)
    assert abs(fit.p_mle - p) < 3 * fit.stderr
    assert fit.passed
    assert hazard_flatness(hazard_curve(run)).flat


def test_exit_linear_tiny_h_exits_immediately():
    s = spec2(np.diag([0.5, 0.5]), sigma=0.3)
    o = adapted_norm(s.A, 0.4)
    run = simulate_exit_linear(s, o, 1e-9, np.zeros(2), 10, np.random.default_rng(5), n_replicates=1000)
    assert np.all(run.tau == 1)


def test_exit_linear_rejects_start_outside():
    s = spec2(np.diag([0.5, 0.5]))
    o = adapted_norm(s.A, 0.4)
    with pytest.raises(ValueError):
        simulate_exit_linear(s, o, 0.1, np.ones(2), 10, np.random.default_rng(0))


def test_kesten_exit_runs():
    k = KestenSpec(A=[[0.5]], B=[[1.0]], G=[[1.0]], sigma=0.1, delta=0.2)
    o = adapted_norm(k.A, 0.4)
    run = simulate_exit_kesten(k, o, 0.5, [0.0], 1000, np.random.default_rng(0), n_replicates=500)
    assert not run.censored.any() and run.tau.min() >= 1


def test_hazard_monotone_in_h_and_sigma(hopf):
    _, _, _, coeffs = hopf
    o = adapted_norm(coeffs.A, 0.5)

    def p_hat(sigma, h, seed):
        s = LinearPMSpec.from_coefficients(coeffs, sigma)
        run = simulate_exit_linear(s, o, h, [0.0], 5000, np.random.default_rng(seed), n_replicates=20_000)
        fit = geometric_tail_fit(run, 1, n_boot=0, min_events=1)
        return fit.p_mle, fit.stderr

    hs = [p_hat(0.1, h, i) for i, h in enumerate((0.04, 0.06, 0.08))]
    for (p1, s1), (p2, s2) in zip(hs, hs[1:]):
        assert p2 <= p1 + 3 * np.hypot(s1, s2)
    ss = [p_hat(s, 0.06, 10 + i) for i, s in enumerate((0.06, 0.08, 0.1))]
    for (p1, s1), (p2, s2) in zip(ss, ss[1:]):
        assert p2 >= p1 - 3 * np.hypot(s1, s2)


def test_batches_independent_of_threads(hopf):
    _, _, _, coeffs = hopf
    s = LinearPMSpec.from_coefficients(coeffs, 0.1)
    o = adapted_norm(coeffs.A, 0.5)
    worker = lambda rng, n, j: simulate_exit_linear(s, o, 0.06, [0.0], 500, rng, n_replicates=n)
    one = ExitRun.concat(run_batches(worker, 5000, 42, batch_size=1000, threads=1))
    four = ExitRun.concat(run_batches(worker, 5000, 42, batch_size=1000, threads=4))
    assert_array_equal(one.tau, four.tau)


def test_full_map_noiseless_stays_on_cycle(hopf):
    field, cycle, frame, coeffs = hopf
    o = adapted_norm(coeffs.A, 0.5)
    run = simulate_exit_full(field, hopf_diffusion(), cycle, frame, o, 0.0, 0.01, 5,
                             np.random.default_rng(0), n_replicates=2, dt=cycle.period_T / 1000,
                             record_rho=True)
    assert np.all(run.kind == CENSORED) and np.all(run.tau == 5)
    for rho in run.rho:
        assert len(rho) == 5
        assert np.abs(rho).max() < 1e-8


def test_full_map_one_return_matches_sigma(hopf):
    field, cycle, frame, coeffs = hopf
    sigma = 0.005
    rho = one_return_statistics(field, hopf_diffusion(), cycle, frame, sigma, np.random.default_rng(1),
                                20_000, dt=cycle.period_T / 4000)[:, 0]
    n = len(rho)
    assert n == 20_000
    var = sigma ** 2 * coeffs.cov_eta[0, 0]
    assert abs(rho.mean()) < 3 * np.sqrt(var / n)
    assert abs(rho.var() - var) < 3 * var * np.sqrt(2.0 / n)


def test_full_map_regression_slope(hopf):
    field, cycle, frame, coeffs = hopf
    o = adapted_norm(coeffs.A, 0.5)
    run = simulate_exit_full(field, hopf_diffusion(), cycle, frame, o, 0.02, np.inf, 4,
                             np.random.default_rng(2), n_replicates=3000, dt=cycle.period_T / 1000,
                             record_rho=True)
    pairs = np.array([(r[k, 0], r[k + 1, 0]) for r in run.rho for k in range(len(r) - 1)])
    fit = stats.linregress(pairs[:, 0], pairs[:, 1])
    assert abs(fit.slope - coeffs.A[0, 0]) < 3 * fit.stderr


def test_full_map_global_escape(hopf):
    field, cycle, frame, coeffs = hopf
    o = adapted_norm(coeffs.A, 0.5)
    run = simulate_exit_full(field, hopf_diffusion(), cycle, frame, o, 0.5, np.inf, 50,
                             np.random.default_rng(3), n_replicates=50, dt=cycle.period_T / 500,
                             box=([-1.2, -1.2], [1.2, 1.2]))
    assert np.any(run.kind == 2)


def test_exit_csv_roundtrip(tmp_path):
    run = ExitRun(tau=np.array([3, 5]), censored=np.array([False, True]), kind=np.array([0, 1]), max_n=5)
    p = tmp_path / "s.csv"
    write_exit_csv(p, run, seed=9)
    lines = p.read_text().splitlines()
    assert lines[0] == "replicate,tau,censored,kind,seed"
    assert lines[2] == "1,5,1,censored,9"
