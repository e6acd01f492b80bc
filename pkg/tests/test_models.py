import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slowfast_vr.models import (
    POLE_GUARD,
    LinearParams,
    ModelError,
    UnsupportedModelError,
    invariant_moments_linear,
    make_linear_model,
    make_nonlinear_model,
    Model,
)


def test_linear_exact_drift_at_one(linear_model):
    assert linear_model.exact_f_bar(1.0) == pytest.approx(-10 + 2 / 1.2, rel=1e-15)
    assert linear_model.exact_f_bar(1.0) == pytest.approx(-8.333333333333334)


def test_linear_exact_drift_through_origin(linear_model):
    assert linear_model.exact_f_bar(0.0) == 0.0


def test_linear_solution_initial_condition(linear_model):
    assert linear_model.exact_macro_solution(1.0, 0.0) == 1.0


def test_linear_drifts(linear_model):
    assert linear_model.slow_drift(2.0, 3.0) == -20 + 12
    assert linear_model.fast_drift(2.0, 3.0) == pytest.approx(1.0 - 3.6)
    assert linear_model.diffusion(0.3, -7.0) == 1.0


def test_linear_log_density_peaks_at_invariant_mean(linear_model):
    mean = 0.5 * 0.7 / 1.2
    assert linear_model.invariant_log_density(0.7, mean) == 0.0
    assert linear_model.invariant_log_density(0.7, mean + 1) == pytest.approx(-1.2)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(lam=0.0, p=4, q=0.5, A=1.2),
        dict(lam=1.0, p=4, q=0.5, A=1.2),
        dict(lam=-10, p=4, q=0.5, A=2.5),
        dict(lam=-10, p=4, q=0.5, A=0.2),  # pq/(-lam) = 0.2 is excluded
        dict(lam=-1, p=4, q=0.5, A=1.5),
    ],
)
def test_linear_params_rejects_unstable_sets(kwargs):
    with pytest.raises(ModelError):
        LinearParams(**kwargs)


def test_linear_params_accepts_upper_bound():
    assert LinearParams(-10, 4, 0.5, 2.0).A == 2.0


def test_averaged_rate(linear_params):
    assert linear_params.averaged_rate == pytest.approx(-10 + 4 * 0.5 / 1.2)


def test_nonlinear_exact_drift(nonlinear_model):
    assert nonlinear_model.exact_f_bar(0.5) == -1.25
    assert nonlinear_model.exact_f_bar(0.0) == -0.5


@pytest.mark.parametrize("x0", [-2.0, -0.5, 0.0, 0.5, 1.0, 3.0])
def test_nonlinear_solution_initial_condition(nonlinear_model, x0):
    assert nonlinear_model.exact_macro_solution(x0, 0.0) == pytest.approx(x0, abs=1e-14)


def test_nonlinear_solution_finite_on_trajectory_window(nonlinear_model):
    for k in range(201):
        assert math.isfinite(nonlinear_model.exact_macro_solution(0.5, 0.01 * k))


def test_nonlinear_solution_refuses_pole(nonlinear_model):
    # pole where t/2 - atan(2*x0 + 1) = pi/2
    x0 = 0.5
    t_pole = 2 * (math.pi / 2 + math.atan(2 * x0 + 1))
    with pytest.raises(ModelError):
        nonlinear_model.exact_macro_solution(x0, t_pole)
    assert math.isfinite(nonlinear_model.exact_macro_solution(x0, t_pole - 100 * POLE_GUARD))


@pytest.mark.parametrize("factory", ["linear", "nonlinear"])
def test_exact_solution_consistent_with_drift(factory, linear_params):
    model = make_linear_model(linear_params, 1e-3) if factory == "linear" else make_nonlinear_model(1e-3)
    h = 1e-6
    for k in range(11):
        t = 0.1 * k + 2 * h
        X = model.exact_macro_solution(0.5, t)
        dX = (model.exact_macro_solution(0.5, t + h) - model.exact_macro_solution(0.5, t - h)) / (2 * h)
        F = model.exact_f_bar(X)
        assert abs(dX - F) <= 1e-6 * max(1.0, abs(F))


def test_invariant_moments(linear_params):
    m, v = invariant_moments_linear(linear_params, 1.0)
    assert m == pytest.approx(0.4166667, abs=1e-7)
    assert v == pytest.approx(0.4166667, abs=1e-7)
    assert invariant_moments_linear(linear_params, 0.0) == (0.0, 1 / 2.4)
    assert invariant_moments_linear(linear_params, 2.0)[0] == pytest.approx(0.8333333, abs=1e-7)


@given(X=st.floats(-50, 50), y=st.floats(-1e6, 1e6))
@settings(max_examples=200)
def test_log_densities_finite(X, y):
    lin = make_linear_model(LinearParams(-10, 4, 0.5, 1.2), 1e-3)
    nl = make_nonlinear_model(1e-3)
    assert math.isfinite(lin.invariant_log_density(X, y))
    assert math.isfinite(nl.invariant_log_density(X, y))


@pytest.mark.parametrize("eps", [0.0, -1e-3, math.inf, math.nan])
def test_epsilon_must_be_positive(eps):
    with pytest.raises(ModelError):
        make_nonlinear_model(eps)


def test_custom_model_without_oracles():
    m = Model(lambda x, y: y, lambda x, y: -y, lambda x, y: 1.0, 0.01)
    with pytest.raises(UnsupportedModelError):
        m.require_f_bar()
    with pytest.raises(UnsupportedModelError):
        m.require_log_density()
    m.check_micro_step(1e9)


def test_linear_micro_step_bound(linear_model):
    linear_model.check_micro_step(2e-3 / 1.2)
    with pytest.raises(ModelError):
        linear_model.check_micro_step(2.1e-3 / 1.2)
