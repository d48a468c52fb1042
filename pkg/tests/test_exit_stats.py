import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from perturbed_cycles.exit_stats import (FAIL, INCONCLUSIVE, PASS, EmptySample, ExitSample,
                                         empirical_pmf, geometric_tail_fit, hazard_curve,
                                         hazard_flatness, hazard_upper_shape, samples_from_arrays,
                                         sigma_scaling_report, tail_start)


def geometric(p, n, seed=0):
    return np.random.default_rng(seed).geometric(p, size=n)


def censor(tau, max_n):
    return np.minimum(tau, max_n), tau > max_n


def test_all_ones():
    curve = hazard_curve([ExitSample(1)] * 10)
    assert curve[0].n == 1 and curve[0].p_hat == 1.0 and curve[0].at_risk == 10


def test_empty_rejected():
    with pytest.raises(EmptySample):
        hazard_curve([])
    with pytest.raises(EmptySample):
        hazard_curve((np.array([3, 3]), np.array([True, True])))


def test_exit_sample_requires_positive_tau():
    with pytest.raises(ValueError):
        ExitSample(0)


def test_geometric_hazard_within_wilson():
    tau = geometric(0.3, 100_000, seed=1)
    curve = hazard_curve((tau, np.zeros(len(tau), bool)))
    checked = [c for c in curve if c.at_risk >= 100]
    assert len(checked) >= 10
    covered = np.mean([c.ci_low <= 0.3 <= c.ci_high for c in checked])
    assert covered >= 0.9
    for c in curve:
        assert c.ci_low <= c.p_hat <= c.ci_high
    risks = [c.at_risk for c in curve]
    assert np.all(np.diff(risks) <= 0)


def test_wilson_coverage_over_repeats():
    hits = total = 0
    for seed in range(40):
        tau = geometric(0.2, 2000, seed=seed)
        for c in hazard_curve((tau, np.zeros(len(tau), bool))):
            if c.at_risk >= 100:
                hits += c.ci_low <= 0.2 <= c.ci_high
                total += 1
    assert hits / total >= 0.93


def test_censoring_leaves_early_hazard_unchanged():
    tau = geometric(0.25, 20_000, seed=3)
    full = {c.n: c for c in hazard_curve((tau, np.zeros(len(tau), bool)))}
    for max_n in (3, 7, 12):
        t, c = censor(tau, max_n)
        cut = {h.n: h for h in hazard_curve((t, c))}
        for n in range(1, max_n):
            assert cut[n].p_hat == full[n].p_hat
            assert cut[n].at_risk == full[n].at_risk


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6), max_n=st.integers(1, 30), p=st.floats(0.05, 0.9))
def test_pmf_sums_to_one(seed, max_n, p):
    t, c = censor(geometric(p, 500, seed), max_n)
    _, pmf, pc = empirical_pmf((t, c))
    assert abs(pmf.sum() + pc - 1.0) < 1e-12
    counts = np.bincount(t[~c]).sum() + c.sum()
    assert counts == len(t)


def test_geometric_fit_recovers_p():
    tau = geometric(0.2, 20_000, seed=4)
    fit = geometric_tail_fit((tau, np.zeros(len(tau), bool)), 1, n_boot=199)
    assert abs(fit.p_mle - 0.2) < 3 * fit.stderr
    assert fit.status == PASS


def test_geometric_fit_with_censoring():
    t, c = censor(geometric(0.1, 20_000, seed=5), 15)
    fit = geometric_tail_fit((t, c), 1, n_boot=199)
    assert abs(fit.p_mle - 0.1) < 3 * fit.stderr
    assert fit.passed


def test_degenerate_law_fails():
    tau = np.full(500, 5)
    fit = geometric_tail_fit((tau, np.zeros(500, bool)), 1, n_boot=199)
    assert fit.status == FAIL


def test_mixture_tail_dominated_by_small_hazard():
    rng = np.random.default_rng(6)
    n = 200_000
    mix = np.where(rng.random(n) < 0.5, rng.geometric(0.1, n), rng.geometric(0.5, n))
    fit = geometric_tail_fit((mix, np.zeros(n, bool)), 30, n_boot=199)
    assert abs(fit.p_mle - 0.1) < 3 * fit.stderr + 1e-3


def test_inconclusive_with_few_events():
    fit = geometric_tail_fit((np.array([1, 2, 3]), np.zeros(3, bool)), 1)
    assert fit.status == INCONCLUSIVE


def test_list_of_samples_accepted():
    samples = samples_from_arrays(geometric(0.4, 2000, 8), np.zeros(2000, bool), {"sigma": 0.1})
    assert samples[0].meta["sigma"] == 0.1
    assert hazard_curve(samples)[0].at_risk == 2000


def test_flatness_geometric_and_not():
    tau = geometric(0.2, 50_000, 9)
    curve = hazard_curve((tau, np.zeros(len(tau), bool)))
    assert hazard_flatness(curve).flat
    # increasing hazard: discrete Weibull-like law
    rng = np.random.default_rng(10)
    tau2 = np.ceil(rng.weibull(3.0, 50_000) * 8).astype(int)
    assert not hazard_flatness(hazard_curve((tau2, np.zeros(len(tau2), bool)))).flat


def test_tail_start_after_mode():
    rng = np.random.default_rng(11)
    tau = 5 + rng.geometric(0.3, 10_000)
    assert tail_start((tau, np.zeros(len(tau), bool))) == 7


def test_tail_start_waits_for_flat_hazard():
    # hazard climbs to 0.25 by step 12, then stays there
    rng = np.random.default_rng(12)
    hz = np.minimum(0.25, 0.02 * np.arange(1, 200))
    u = rng.random((20_000, len(hz)))
    tau = 1 + np.argmax(u < hz, axis=1)
    samples = (tau, np.zeros(len(tau), bool))
    n0 = tail_start(samples)
    assert n0 >= 11
    assert geometric_tail_fit(samples, n0, n_boot=199).passed
    assert not geometric_tail_fit(samples, 6, n_boot=199).passed


def test_sigma_scaling_synthetic():
    sig = np.arange(0.2, 0.5001, 0.05)
    runs = {s: 0.5 * s * np.exp(-0.8 / s ** 2) for s in sig}
    rep = sigma_scaling_report(runs)
    assert abs(rep.slope + 0.8) < 0.08
    assert rep.r2 >= 0.99
    assert rep.status == PASS


def test_sigma_scaling_flags_flat_law():
    rep = sigma_scaling_report({s: 0.3 for s in (0.2, 0.3, 0.4, 0.5)})
    assert abs(rep.slope) < 0.05 and rep.status == FAIL


def test_sigma_scaling_inconclusive():
    rep = sigma_scaling_report({0.1: 0.0, 0.2: 0.01, 0.3: 0.1})
    assert rep.status == INCONCLUSIVE


def test_sigma_scaling_from_samples():
    runs = {}
    for i, s in enumerate((0.3, 0.35, 0.4, 0.5, 0.6)):
        p = 0.5 * s * np.exp(-0.3 / s ** 2)
        t, c = censor(geometric(p, 20_000, 20 + i), 2000)
        runs[s] = (t, c)
    rep = sigma_scaling_report(runs)
    assert rep.slope < 0 and rep.r2 > 0.95


def test_upper_shape_synthetic_exponent():
    runs = {(s, h): (s * h * h) ** (2 / 3) for s in (0.01, 0.02, 0.05) for h in (0.1, 0.2, 0.4)}
    rep = hazard_upper_shape(runs)
    assert abs(rep.exponent - 2 / 3) < 0.05
    assert rep.all_below


def test_upper_shape_zero_sigma_runs():
    tau = np.full(100, 50)
    rep = hazard_upper_shape({(0.0, 0.1): (tau, np.ones(100, bool)), (0.1, 0.1): 0.01})
    assert rep.p_hat[0] == 0.0 and rep.all_below
