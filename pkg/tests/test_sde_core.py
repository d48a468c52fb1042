import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from perturbed_cycles.benchmarks import hopf_normal_form
from perturbed_cycles.sde_core import (Diffusion, IntegrationDiverged, Path, VectorField,
                                       detect_section_crossings, euler_maruyama_ensemble,
                                       integrate_deterministic, integrate_sde, stream)


def linear(rate=-1.0, dim=1):
    return VectorField(dim=dim, drift=lambda x: rate * np.asarray(x))


def test_zero_field_constant_path():
    zero = VectorField(dim=2, drift=lambda x: np.zeros_like(x))
    p = integrate_deterministic(zero, [1.0, 2.0], (0.0, 1.0), 0.1)
    assert_array_equal(p.states, np.tile([1.0, 2.0], (len(p), 1)))


def test_hopf_radius_converges():
    p = integrate_deterministic(hopf_normal_form(), [2.0, 0.0], (0.0, 20.0), 1e-3)
    # r' = r(1 - r^2): r(t)^2 = 1 / (1 + (1/r0^2 - 1) e^{-2t})
    r_exact = 1.0 / np.sqrt(1.0 + (0.25 - 1.0) * np.exp(-40.0))
    assert abs(np.linalg.norm(p.states[-1]) - r_exact) < 1e-6
    assert abs(np.linalg.norm(p.states[-1]) - 1.0) < 1e-6


def test_scalar_exponential():
    p = integrate_deterministic(linear(), [1.0], (0.0, 1.0), 1e-3)
    assert abs(p.states[-1, 0] - np.exp(-1.0)) < 1e-10
    assert p.times[-1] == 1.0


def test_last_step_shortened():
    p = integrate_deterministic(linear(), [1.0], (0.0, 1.0), 0.3)
    assert_allclose(p.times, [0.0, 0.3, 0.6, 0.9, 1.0])


def test_divergence_names_step():
    blow = VectorField(dim=1, drift=lambda x: np.asarray(x) ** 2)
    with pytest.raises(IntegrationDiverged) as info:
        integrate_deterministic(blow, [1.0], (0.0, 5.0), 0.1)
    assert info.value.step > 0
    assert str(info.value.step) in str(info.value)


@pytest.mark.parametrize("span,dt", [((0.0, 1.0), 0.0), ((1.0, 1.0), 0.1), ((0.0, 1.0), -0.1)])
def test_bad_grid_rejected(span, dt):
    with pytest.raises(ValueError):
        integrate_deterministic(linear(), [1.0], span, dt)


def test_sigma_zero_is_explicit_euler_bitwise():
    f = hopf_normal_form()
    p = integrate_sde(f, Diffusion.identity(2), [0.5, 0.1], (0.0, 2.0), 0.01, 0.0, seed=3)
    x = np.array([0.5, 0.1])
    ref = [x]
    for _ in range(len(p) - 1):
        x = x + f.drift(x) * 0.01
        ref.append(x)
    assert_array_equal(p.states, np.array(ref))


def test_negative_sigma_rejected():
    with pytest.raises(ValueError):
        integrate_sde(linear(), Diffusion.identity(1), [0.0], (0, 1), 0.1, -0.1, seed=0)


def test_same_seed_same_path():
    args = (linear(), Diffusion.identity(1), [0.0], (0.0, 5.0), 0.01, 0.3)
    a = integrate_sde(*args, seed=11)
    b = integrate_sde(*args, seed=11)
    c = integrate_sde(*args, seed=12)
    assert_array_equal(a.states, b.states)
    assert a.seed == 11
    assert not np.array_equal(a.states, c.states)


@pytest.mark.parametrize("dt", [1e-2, 1e-3])
def test_ou_stationary_variance(dt):
    sigma = 0.3
    f = linear()
    x0 = np.zeros((4000, 1))
    n = int(round(8.0 / dt))
    _, rec = euler_maruyama_ensemble(f, Diffusion.identity(1), x0, n, dt, sigma, stream(5, int(1 / dt)),
                                     record_every=n)
    final = rec[-1, :, 0]
    target = sigma ** 2 / 2
    # EM stationary variance is sigma^2 / (2 - dt); the Monte Carlo error dominates
    se = target * np.sqrt(2.0 / len(final))
    assert abs(final.var() - target) < 3 * se + target * dt


def test_ou_bias_shrinks_with_dt():
    # exact EM stationary variance for x' = -x: sigma^2 dt / (1 - (1 - dt)^2)
    sigma = 0.3
    errs = [abs(sigma ** 2 * dt / (1 - (1 - dt) ** 2) - sigma ** 2 / 2) for dt in (1e-2, 1e-3)]
    assert errs[1] < errs[0]


def test_single_path_ou_variance():
    p = integrate_sde(linear(), Diffusion.identity(1), [0.0], (0.0, 4000.0), 0.01, 0.3, seed=1)
    x = p.states[1000::100, 0]  # decorrelated subsample (lag 1 time unit)
    se = 0.045 * np.sqrt(2.0 / len(x)) * 1.5
    assert abs(x.var() - 0.045) < 3 * se


def test_crossings_on_circle():
    dt = 1e-3
    t = np.arange(0.0, 2.5 + dt / 2, dt)
    path = Path(t, np.column_stack([np.cos(2 * np.pi * t), np.sin(2 * np.pi * t)]))
    events = detect_section_crossings(path, normal=[0.0, 1.0], point=[0.0, 0.0], direction=1)
    # y crosses upward at t = 0.5 k (x<0 side at half-integers); keep the x > 0 ones
    times = [te for te, x in events if x[0] > 0]
    assert_allclose(times, [1.0, 2.0], atol=2 * dt)
    all_times = [te for te, _ in events]
    assert np.all(np.diff(all_times) > 0)


def test_no_crossing_empty():
    t = np.linspace(0, 1, 11)
    path = Path(t, np.column_stack([t, np.ones_like(t)]))
    assert detect_section_crossings(path, [0.0, 1.0], [0.0, 0.0], 1) == []
    assert detect_section_crossings(Path([], np.zeros((0, 2))), [0.0, 1.0], [0.0, 0.0], 1) == []


def test_hopf_section_period():
    f = hopf_normal_form()
    p = integrate_deterministic(f, [1.0, 0.0], (0.0, 40.0), 1e-3)
    ev = detect_section_crossings(p, normal=[0.0, 1.0], point=[1.0, 0.0], direction=1)
    gaps = np.diff([t for t, _ in ev])
    assert_allclose(gaps, 2 * np.pi, atol=1e-3)
    assert abs(len(ev) - 40.0 / (2 * np.pi)) <= 1


def test_path_rejects_unsorted_times():
    with pytest.raises(ValueError):
        Path([0.0, 0.2, 0.1], np.zeros((3, 1)))


def test_jacobian_probe():
    f = hopf_normal_form()
    pts = np.random.default_rng(0).normal(size=(10, 2))
    assert f.check_jacobian(pts) < 1e-4
    wrong = VectorField(dim=2, drift=f.drift, jacobian=lambda x: np.eye(2))
    with pytest.raises(ValueError):
        wrong.check_jacobian(pts)


def test_complex_step_jacobian_default():
    f = hopf_normal_form()
    auto = VectorField(dim=2, drift=f.drift)
    x = np.array([0.3, -1.2])
    assert_allclose(auto.jacobian(x), f.jacobian(x), rtol=1e-13, atol=1e-13)


def test_diffusion_singular_values():
    assert Diffusion.identity(3).min_singular_value(np.zeros((2, 3))) == 1.0
    assert Diffusion.from_constant(np.diag([1.0, 0.0])).min_singular_value(np.zeros((1, 2))) == 0.0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_seeded_reproducibility_property(seed):
    args = (hopf_normal_form(), Diffusion.identity(2), [1.0, 0.0], (0.0, 0.5), 0.01, 0.2)
    assert_array_equal(integrate_sde(*args, seed=seed).states, integrate_sde(*args, seed=seed).states)


@settings(max_examples=20, deadline=None)
@given(periods=st.integers(1, 6), dt_exp=st.floats(2.5, 3.5))
def test_crossing_count_property(periods, dt_exp):
    dt = 10 ** -dt_exp
    t = np.arange(0.0, periods + 0.3, dt)
    path = Path(t, np.column_stack([np.cos(2 * np.pi * t), np.sin(2 * np.pi * t)]))
    ev = detect_section_crossings(path, [0.0, 1.0], [0.0, 0.0], 1)
    n_pos = sum(1 for _, x in ev if x[0] > 0)
    assert abs(n_pos - int(t[-1])) <= 1
