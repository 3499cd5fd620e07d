import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oversmooth.calculus import (
    DecompositionFamily,
    SmoothingFn,
    apply_fractional_power,
    apply_smoothing,
    decomposition_bounds_report,
    growth_condition_estimate,
    log_grid,
    moment_inequality_check,
    refine_log_grid,
)
from oversmooth.spaces import ScaleModel, WeightSequence, X, norm


def spectral(values, a=1.0):
    return ScaleModel.spectral(WeightSequence(np.asarray(values, dtype=float)), a)


KINDS = ["exp", "exp2", "rational", "hat"]


# -- smoothing functions ----------------------------------------------------------
@pytest.mark.parametrize("kind", KINDS)
def test_smoothing_function_shape(kind):
    f = SmoothingFn(kind, a=1.0)
    z = np.linspace(0.0, 10.0, 2001)
    v = f(z)
    assert f(0.0) == 1.0
    assert np.all((v >= 0) & (v <= 1))
    assert np.all(np.diff(v) <= 0)
    np.testing.assert_allclose(f.one_minus(z), 1.0 - v, atol=1e-15)


def test_one_minus_keeps_precision_near_zero():
    f = SmoothingFn("exp2")
    assert f.one_minus(1e-10) == pytest.approx(1e-20, rel=1e-12)
    assert SmoothingFn("exp").one_minus(1e-12) == pytest.approx(1e-12, rel=1e-10)


def test_smoothing_rejects_negative_arguments_and_unknown_kind():
    with pytest.raises(ValueError):
        SmoothingFn("exp")(-1.0)
    with pytest.raises(ValueError):
        SmoothingFn("gauss")


def test_hat_values():
    f = SmoothingFn("hat")
    np.testing.assert_array_equal(f(np.array([0.5, 1.0, 1.5, 2.0, 3.0])), [1.0, 1.0, 0.5, 0.0, 0.0])


# -- fractional powers ----------------------------------------------------------------
def test_fractional_power_examples():
    model = spectral([1, 2, 4])
    x = np.array([0.3, -1.0, 2.0])
    np.testing.assert_array_equal(apply_fractional_power(model, 0.0, x), x)
    np.testing.assert_array_equal(apply_fractional_power(model, -1.0, np.ones(3)), [1.0, 0.5, 0.25])
    e2 = np.array([0.0, 0.0, 1.0])
    twice = apply_fractional_power(model, 0.5, apply_fractional_power(model, 0.5, e2))
    # exponent law: two half powers equal one full power, lam = 4 gives 4
    np.testing.assert_allclose(twice, apply_fractional_power(model, 1.0, e2), rtol=1e-15)
    np.testing.assert_allclose(twice, [0.0, 0.0, 4.0], rtol=1e-15)


def test_fractional_power_needs_spectral_model():
    model = ScaleModel.weighted_l1(WeightSequence.geometric(3), 2.0)
    with pytest.raises(ValueError):
        apply_fractional_power(model, 0.5, np.ones(3))


# -- smoothing families ------------------------------------------------------------------
def test_exp_smoothing_scalar_value():
    fam = DecompositionFamily(spectral([2.0]), SmoothingFn("exp"))
    assert apply_smoothing(fam, 0.5, [1.0])[0] == pytest.approx(math.exp(-1.0), rel=1e-15)
    assert apply_smoothing(fam, 1e-14, [1.0])[0] == pytest.approx(1.0, abs=1e-13)


def test_hat_on_weighted_family():
    model = ScaleModel.weighted_l1(WeightSequence(np.array([1.0, 2.0, 4.0])), 2.0)
    fam = DecompositionFamily(model, SmoothingFn("hat"))
    assert fam.mode == "l1"
    assert fam.t0 == 1.0
    np.testing.assert_array_equal(fam.apply(1.0, np.ones(3)), [1.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        fam.apply(1.5, np.ones(3))
    with pytest.raises(ValueError):
        fam.apply(0.0, np.ones(3))


def test_weighted_family_t0_from_tau0():
    model = ScaleModel.weighted_l1(WeightSequence.geometric(10), 3.0)  # a = 1/2
    fam = DecompositionFamily(model, SmoothingFn("exp"), tau0=8.0)
    assert fam.t0 == pytest.approx(8.0 ** (1.0 / 1.5))


@settings(max_examples=50, deadline=None)
@given(arrays(float, 4, elements=st.floats(-1e3, 1e3, allow_subnormal=False)), st.floats(1e-4, 1e3),
       st.floats(-1.0, 1.0), st.sampled_from(KINDS))
def test_smoothing_commutes_with_powers_and_contracts(x, t, s, kind):
    model = spectral([1, 2, 5, 11])
    fam = DecompositionFamily(model, SmoothingFn(kind, model.a))
    left = apply_fractional_power(model, s, apply_smoothing(fam, t, x))
    right = apply_smoothing(fam, t, apply_fractional_power(model, s, x))
    # diagonal multipliers commute; only the rounding of the two products differs
    np.testing.assert_allclose(left, right, rtol=4e-16, atol=0)
    smoothed = apply_smoothing(fam, t, x)
    assert np.all(np.abs(smoothed) <= np.abs(x))
    assert norm(model, X, smoothed) <= norm(model, X, x)
    # scaling law: A^s f(tA) x = t^{-s} (tA)^s f(tA) x
    arg = t * model.lam
    np.testing.assert_allclose(left, t ** (-s) * arg ** s * fam.f(arg) * x, rtol=1e-12, atol=1e-300)


@settings(max_examples=40, deadline=None)
@given(arrays(float, 6, elements=st.floats(0.0, 4.0)), st.floats(1e-3, 10.0))
def test_exp2_smoothing_keeps_box(x, t):
    fam = DecompositionFamily(spectral(np.arange(1, 7)), SmoothingFn("exp2"))
    out = fam.apply(t, x)
    assert np.all(out >= 0.0) and np.all(out <= 4.0)


# -- grids --------------------------------------------------------------------------
def test_log_grid_and_refinement():
    g = log_grid(1e-3, 1.0, 8)
    assert g.size == 25
    assert g[0] == pytest.approx(1e-3) and g[-1] == pytest.approx(1.0)
    fine = refine_log_grid(g)
    assert fine.size == 49
    np.testing.assert_array_equal(fine[0::2], g)
    np.testing.assert_allclose(fine[1] ** 2, g[0] * g[1])


# -- growth condition ----------------------------------------------------------------
def test_growth_geometric_weights_bounded():
    est = growth_condition_estimate(WeightSequence.geometric(40), SmoothingFn("exp"), log_grid(1e-3, 1.0, 32))
    assert math.isfinite(est.value)
    assert est.value <= 3.0
    assert est.weight_diverges
    assert est.tail_ok


def test_growth_hat_uses_only_compact_support():
    w = WeightSequence.geometric(20)
    f = SmoothingFn("hat")
    for tau in (1e-3, 0.1, 1.0):
        terms = w.values * f(tau * w.values)
        assert np.all(terms[tau * w.values >= 2.0] == 0.0)


def test_growth_constant_weight_flagged():
    est = growth_condition_estimate(np.ones(7), SmoothingFn("exp"), [1.0])
    assert est.value == pytest.approx(7 * math.exp(-1.0), rel=1e-15)
    assert not est.weight_diverges


# -- decomposition bounds --------------------------------------------------------------
def _l1_family(kind="exp"):
    model = ScaleModel.weighted_l1(WeightSequence.geometric(40), 2.0)
    return DecompositionFamily(model, SmoothingFn(kind, model.a))


def test_decomposition_bounds_l1_exp():
    fam = _l1_family()
    rng = np.random.default_rng(1)
    samples = rng.standard_normal((100, 40)) * fam.model.lam ** rng.uniform(-1, 1, (100, 1))
    rep = decomposition_bounds_report(fam, 0.5, samples, log_grid(1e-3, 1.0, 16))
    for row in rep.rows:
        assert math.isfinite(row.constant)
    assert rep.constant("Xs_to_Xs") <= 1.0 + 1e-12
    assert rep.passed


def test_decomposition_defect_on_first_unit_vector():
    fam = _l1_family()
    e0 = np.zeros(40)
    e0[0] = 1.0
    a, s = fam.model.a, 0.5
    for t in (1e-3, 1e-2, 1e-1):
        defect = np.max(np.abs(e0 - fam.apply(t, e0)) / fam.model.lam)
        assert defect == pytest.approx(-math.expm1(-t ** (a + 1)), rel=1e-12)
        assert defect <= 1.0 * t ** (a + s)


def test_decomposition_report_rejects_bad_index():
    fam = _l1_family()
    with pytest.raises(ValueError):
        decomposition_bounds_report(fam, 1.0, np.ones((1, 40)), [0.1, 1.0])


# -- moment inequality --------------------------------------------------------------------
def test_moment_inequality_single_mode_equality():
    assert moment_inequality_check(spectral([1, 2]), 1.0, 0.5, 1.0, [[0.0, 1.0]]) == pytest.approx(1.0, rel=1e-14)


def test_moment_inequality_random_samples():
    rng = np.random.default_rng(2)
    assert moment_inequality_check(spectral([1, 2, 4]), 1.0, 0.5, 1.0, [[1.0, 1.0, 1.0]]) < 1.0
    model = spectral(np.arange(1, 65))
    assert moment_inequality_check(model, 1.0, 0.5, 1.0, rng.standard_normal((1000, 64))) <= 1.0 + 1e-12
