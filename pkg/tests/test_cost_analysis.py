import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from exitwise.cost_analysis import (
    AchievableSet,
    ClampWarning,
    ExpFit,
    NearZeroSlopeWarning,
    alpha_from_binary,
    fit_exponential,
    fit_rational,
    nearest_achievable,
    optimal_accuracy_alpha,
    optimal_accuracy_binary,
    parse_grid,
    region_map,
    unclamped_accuracy_alpha,
    unclamped_accuracy_binary,
)
from exitwise.errors import FitError, ParameterError, PoleError

from oracles import binary_energy, exp_cost, grid_argmin


# --- fits --------------------------------------------------------------------------

def test_exponential_recovers_parameters():
    acc = np.linspace(0.4, 0.8, 6)
    fit = fit_exponential(np.column_stack([acc, 0.02 * np.exp(4 * acc)]))
    assert fit.a == pytest.approx(0.02, abs=1e-6) and fit.b == pytest.approx(4, abs=1e-6)
    assert fit.residual <= 1e-12


def test_exponential_two_points_interpolate():
    fit = fit_exponential([(0.5, 0.1), (0.7, 0.4)])
    np.testing.assert_allclose(fit([0.5, 0.7]), [0.1, 0.4], rtol=1e-10)
    assert fit.residual == pytest.approx(0.0, abs=1e-20)


def test_exponential_constant_data_warns():
    with pytest.warns(NearZeroSlopeWarning):
        fit = fit_exponential([(0.3, 0.5), (0.5, 0.5), (0.8, 0.5)])
    assert fit.a == pytest.approx(0.5) and abs(fit.b) < 1e-8


def test_exponential_tolerates_repeated_accuracies():
    fit = fit_exponential([(0.5, 0.1), (0.5, 0.12), (0.7, 0.4)])
    assert fit.b > 0


@pytest.mark.parametrize("points", [[(0.5, 1.0)], [(0.5, 1.0), (0.5, 2.0)], [(np.nan, 1.0), (0.5, 2.0)]])
def test_fit_rejects_degenerate_points(points):
    with pytest.raises(ParameterError):
        fit_exponential(points)


def test_rational_recovers_parameters():
    acc = np.linspace(0.3, 0.85, 7)
    cost = 0.05 * (acc - 0.1) / (1 - 0.9 * acc)
    fit = fit_rational(np.column_stack([acc, cost]))
    assert fit.a == pytest.approx(0.05, abs=1e-6) and fit.b == pytest.approx(0.9, abs=1e-6)


def test_rational_structural_zero_at_chance():
    acc = np.array([0.1, 0.4, 0.6, 0.8])
    fit = fit_rational(np.column_stack([acc, 0.05 * (acc - 0.1) / (1 - 0.9 * acc)]))
    assert fit(0.1) == 0.0


def test_rational_pole_in_data():
    with pytest.raises(PoleError):
        fit_rational([(0.5, 0.1), (1.0 / 0.9, np.inf), (0.6, 0.2)])


def test_fit_error_is_arithmetic_error_with_diagnostics():
    err = FitError("x", iterations=3, grad_norm=0.5, params=(1.0, 2.0))
    assert isinstance(err, ArithmeticError)
    assert (err.iterations, err.grad_norm, err.params) == (3, 0.5, (1.0, 2.0))


@settings(max_examples=50, deadline=None)
@given(st.floats(0.005, 0.2), st.floats(1.0, 8.0), st.floats(0.2, 0.5), st.floats(0.2, 0.45))
def test_exponential_recovery_property(a, b, lo, span):
    acc = np.linspace(lo, lo + span, 6)
    fit = fit_exponential(np.column_stack([acc, a * np.exp(b * acc)]))
    assert abs(fit.a - a) <= 1e-6 and abs(fit.b - b) <= 1e-6


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.5), st.floats(0.1, 1.0), st.floats(0.2, 0.5))
def test_rational_recovery_property(a, b, lo):
    acc = np.linspace(lo, 0.9, 6)
    assume(np.all(1 - b * acc > 0.05))
    fit = fit_rational(np.column_stack([acc, a * (acc - 0.1) / (1 - b * acc)]))
    assert abs(fit.a - a) <= 1e-6 and abs(fit.b - b) <= 1e-6


# --- closed-form optima -----------------------------------------------------------------

def test_alpha_example():
    fit = ExpFit(0.01, 5.0, 0.0)
    assert optimal_accuracy_alpha(fit, 0.5) == pytest.approx(math.log(20) / 5, abs=1e-12)
    assert round(optimal_accuracy_alpha(fit, 0.5), 4) == 0.5991


def test_binary_example():
    fit = ExpFit(0.01, 5.0, 0.0)
    assert optimal_accuracy_binary(fit, 3.0, 1.0, 1.0) == pytest.approx(math.log(40) / 5, abs=1e-12)
    assert round(optimal_accuracy_binary(fit, 3.0, 1.0, 1.0), 4) == 0.7378


def test_alpha_one_clamps_to_min():
    fit = ExpFit(0.01, 5.0, 0.0)
    assert unclamped_accuracy_alpha(fit, 1.0) == -math.inf
    assert optimal_accuracy_alpha(fit, 1.0, (0.3, 0.9)) == 0.3


def test_log_one_gives_zero_then_clamps():
    a, b = 0.1, 5.0
    alpha = 1.0 / (1.0 + a * b)  # (1 - alpha) / (alpha a b) = 1
    fit = ExpFit(a, b, 0.0)
    assert unclamped_accuracy_alpha(fit, alpha) == pytest.approx(0.0, abs=1e-15)
    assert optimal_accuracy_alpha(fit, alpha, (0.2, 0.9)) == 0.2


def test_alpha_zero_clamps_to_max_with_warning():
    with pytest.warns(ClampWarning):
        assert optimal_accuracy_alpha(ExpFit(0.01, 5.0, 0.0), 0.0, (0.2, 0.85)) == 0.85


@pytest.mark.parametrize("alpha", [-0.1, 1.1])
def test_alpha_out_of_range(alpha):
    with pytest.raises(ParameterError):
        optimal_accuracy_alpha(ExpFit(0.01, 5.0, 0.0), alpha)


def test_non_positive_fit_rejected():
    with pytest.raises(ParameterError):
        optimal_accuracy_alpha(ExpFit(0.01, -1.0, 0.0), 0.5)


@pytest.mark.parametrize("gamma, ratio, expected", [(1.0, 0.7, 1.0), (2.0, 1.0, 0.5), (3.0, 0.25, 1 / 1.5)])
def test_alpha_from_binary_examples(gamma, ratio, expected):
    assert alpha_from_binary(gamma, ratio, 1.0) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("args", [(0.5, 1.0, 1.0), (2.0, -1.0, 1.0), (2.0, 1.0, 0.0)])
def test_alpha_from_binary_errors(args):
    with pytest.raises(ParameterError):
        alpha_from_binary(*args)


def test_binary_gamma_one_clamps_to_min():
    fit = ExpFit(0.01, 5.0, 0.0)
    assert unclamped_accuracy_binary(fit, 1.0, 1.0, 1.0) == -math.inf
    assert optimal_accuracy_binary(fit, 1.0, 1.0, 1.0, (0.4, 0.9)) == 0.4


@settings(max_examples=100, deadline=None)
@given(st.floats(0.001, 0.1), st.floats(2.0, 10.0), st.floats(0.02, 0.98))
def test_alpha_optimum_matches_grid_search(a, b, alpha):
    fit = ExpFit(a, b, 0.0)
    raw = unclamped_accuracy_alpha(fit, alpha)
    assume(0.01 < raw < 0.99)
    assert abs(raw - grid_argmin(exp_cost(a, b, alpha))) <= 1e-4


@settings(max_examples=100, deadline=None)
@given(st.floats(0.001, 0.1), st.floats(2.0, 10.0), st.floats(1.0, 50.0), st.floats(0.01, 10.0))
def test_binary_optimum_matches_grid_search(a, b, gamma, ratio):
    fit = ExpFit(a, b, 0.0)
    raw = unclamped_accuracy_binary(fit, gamma, ratio, 1.0)
    assume(0.01 < raw < 0.99)
    assert abs(raw - grid_argmin(binary_energy(a, b, gamma, ratio))) <= 1e-4


@settings(max_examples=200, deadline=None)
@given(st.floats(0.001, 0.5), st.floats(0.5, 10.0), st.floats(1.0, 1e3), st.floats(1e-3, 1e3),
       st.floats(0.1, 10.0))
def test_binary_equals_alpha_substitution(a, b, gamma, e_x, e_d_max):
    fit = ExpFit(a, b, 0.0)
    alpha = alpha_from_binary(gamma, e_x, e_d_max)
    assume(alpha < 1.0)
    lhs = unclamped_accuracy_binary(fit, gamma, e_x, e_d_max)
    # interior optima only; as gamma -> 1 the alpha route cancels in 1 - alpha
    assume(0.0 < lhs < 1.0)
    assert abs(lhs - unclamped_accuracy_alpha(fit, alpha)) <= 1e-12


# --- achievable set and region map ---------------------------------------------------

ACH = AchievableSet(((1, 0.40, 0.01), (2, 0.60, 0.1), (3, 0.70, 0.3), (4, 0.65, 0.5), (5, 0.80, 1.0)))


def test_achievable_validation():
    with pytest.raises(ParameterError):
        AchievableSet(())
    with pytest.raises(ParameterError):
        AchievableSet(((1, 0.5, 0.1), (1, 0.6, 0.2)))


def test_pareto_drops_dominated_depths():
    assert [d for d, _, _ in ACH.pareto().entries] == [1, 2, 3, 5]


@pytest.mark.parametrize("a_star, depth", [(0.1, 1), (0.95, 5), (0.5, 1), (0.61, 2), (0.66, 4)])
def test_nearest_achievable(a_star, depth):
    assert nearest_achievable(a_star, ACH)[0] == depth


def test_nearest_achievable_midpoint_goes_shallow():
    ach = AchievableSet(((1, 0.25, 0.1), (2, 0.75, 0.2)))
    assert nearest_achievable(0.5, ach) == (1, 0.25)


def test_region_map_gamma_one_is_depth_one():
    m = region_map(ExpFit(0.01, 5.0, 0.0), ACH, [1.0], parse_grid("0.01:100:log:9"))
    assert (m == 1).all()


def test_region_map_huge_values_reach_max_depth():
    m = region_map(ExpFit(0.01, 5.0, 0.0), ACH, [1e6], [1e6])
    assert m.tolist() == [[5]]


def test_region_map_empty_grid():
    with pytest.raises(ParameterError):
        region_map(ExpFit(0.01, 5.0, 0.0), ACH, [], [1.0])


@settings(max_examples=40, deadline=None)
@given(st.floats(0.001, 0.2), st.floats(1.0, 10.0),
       st.lists(st.floats(0.15, 0.95), min_size=2, max_size=8, unique=True))
def test_region_map_monotone_in_both_axes(a, b, accs):
    ach = AchievableSet(tuple((d + 1, acc, 0.1 * (d + 1)) for d, acc in enumerate(accs)))
    m = region_map(ExpFit(a, b, 0.0), ach, parse_grid("1:1000:log:12"), parse_grid("0.001:1000:log:12"))
    assert (np.diff(m, axis=0) >= 0).all() and (np.diff(m, axis=1) >= 0).all()


def test_parse_grid_forms():
    np.testing.assert_array_equal(parse_grid("1, 2,4"), [1, 2, 4])
    np.testing.assert_allclose(parse_grid("0:1::5"), [0, 0.25, 0.5, 0.75, 1])
    np.testing.assert_allclose(parse_grid("1:100:log:3"), [1, 10, 100])
    assert len(parse_grid("0:1")) == 25
    with pytest.raises(ParameterError):
        parse_grid("0:1:log")
    with pytest.raises(ParameterError):
        parse_grid("0:1:cubic")
