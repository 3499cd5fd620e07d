import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oversmooth.forward import (
    EllipticConfig,
    EllipticRadiative,
    EllipticSmoothing,
    L1Embedding,
    LinearDiagonal,
    NonlinearDiagonal,
    box_samples,
    forward_apply,
    forward_gradient,
    two_sided_constants_estimate,
)
from oversmooth.calculus import SmoothingFn
from oversmooth.spaces import ScaleModel, WeightSequence


def spectral(values, a=1.0):
    return ScaleModel.spectral(WeightSequence(np.asarray(values, dtype=float)), a)


def misfit(model, x, y):
    return 0.5 * model.y_norm(model.apply(x) - y) ** 2


def central_difference(fun, x, direction, step):
    return (fun(x + step * direction) - fun(x - step * direction)) / (2 * step)


# -- diagonal models ----------------------------------------------------------------
def test_linear_diagonal_example():
    np.testing.assert_array_equal(LinearDiagonal(spectral([1, 2])).apply([1.0, 1.0]), [1.0, 0.5])


@settings(max_examples=40, deadline=None)
@given(arrays(float, 5, elements=st.floats(-10, 10)))
def test_nonlinear_with_zero_eps_is_linear(x):
    scale = spectral([1, 2, 3, 4, 5])
    np.testing.assert_array_equal(NonlinearDiagonal(scale, 0.0).apply(x), LinearDiagonal(scale).apply(x))


def test_model_constructors_validate():
    weighted = ScaleModel.weighted_l1(WeightSequence.geometric(4), 2.0)
    with pytest.raises(ValueError):
        LinearDiagonal(weighted)
    with pytest.raises(ValueError):
        NonlinearDiagonal(spectral([1, 2]), eps=1.0)
    with pytest.raises(ValueError):
        L1Embedding(spectral([1, 2]))
    with pytest.raises(ValueError):
        LinearDiagonal(spectral([1, 2]), box=(1.0, 0.0))


def test_forward_apply_checks_domain_and_shape():
    model = LinearDiagonal(spectral([1, 2]), box=(0.0, 1.0))
    with pytest.raises(ValueError):
        forward_apply(model, [2.0, 0.0])
    with pytest.raises(ValueError):
        forward_apply(model, [0.5])
    with pytest.raises(ValueError):
        forward_apply(model, [np.nan, 0.0])
    np.testing.assert_array_equal(forward_apply(model, [1.0, 1.0]), [1.0, 0.5])


def test_two_sided_linear_is_exact_isometry():
    model = LinearDiagonal(spectral(np.arange(1, 33)))
    rng = np.random.default_rng(0)
    low, high = two_sided_constants_estimate(model, rng.standard_normal(32), rng.standard_normal((50, 32)))
    assert low == pytest.approx(1.0, abs=1e-14)
    assert high == pytest.approx(1.0, abs=1e-14)


def test_two_sided_nonlinear_bracket():
    model = NonlinearDiagonal(spectral(np.arange(1, 33)), 0.1)
    rng = np.random.default_rng(1)
    low, high = two_sided_constants_estimate(model, rng.standard_normal(32), 3 * rng.standard_normal((100, 32)))
    assert 0.9 - 1e-9 <= low <= high <= 1.1 + 1e-9


def test_two_sided_skips_reference_sample_with_warning():
    model = LinearDiagonal(spectral([1, 2]))
    with pytest.warns(UserWarning):
        two_sided_constants_estimate(model, [1.0, 1.0], [[1.0, 1.0], [0.0, 1.0]])


@pytest.mark.parametrize("make", [lambda s: LinearDiagonal(s), lambda s: NonlinearDiagonal(s, 0.3)])
def test_diagonal_gradient_matches_finite_differences(make):
    model = make(spectral(np.arange(1, 9)))
    rng = np.random.default_rng(2)
    x, y = rng.standard_normal(8), rng.standard_normal(8)
    grad = forward_gradient(model, x, model.apply(x) - y)
    for k in range(8):
        e = np.zeros(8)
        e[k] = 1.0
        fd = central_difference(lambda z: misfit(model, z, y), x, e, 1e-5)
        assert grad[k] == pytest.approx(fd, rel=1e-8, abs=1e-12)


def test_zero_residual_gives_zero_gradient():
    x = np.ones(6)
    for model in (LinearDiagonal(spectral(np.arange(1, 7))), NonlinearDiagonal(spectral(np.arange(1, 7)))):
        np.testing.assert_array_equal(model.gradient(x, np.zeros(6)), np.zeros(6))
    ell = EllipticRadiative(EllipticConfig.preset_config("constant", 16))
    np.testing.assert_array_equal(ell.gradient(np.ones(16), np.zeros(16)), np.zeros(16))


def test_nonlinear_hessian_parts_match_gradient_derivative():
    model = NonlinearDiagonal(spectral([1, 2, 3]), 0.4)
    x, y = np.array([0.3, -1.2, 2.0]), np.array([0.1, 0.2, -0.3])
    hess = model.gauss_newton_matrix(x) + model.curvature_matrix(x, model.apply(x) - y)
    step = 1e-6
    for k in range(3):
        e = np.zeros(3)
        e[k] = step
        col = (model.gradient(x + e, model.apply(x + e) - y) - model.gradient(x - e, model.apply(x - e) - y)) / (2 * step)
        np.testing.assert_allclose(hess[:, k], col, rtol=1e-7, atol=1e-10)


def test_l1_embedding_norms():
    model = L1Embedding(ScaleModel.weighted_l1(WeightSequence(np.array([1.0, 2.0, 4.0])), 2.0))
    assert model.y_norm([3.0, -4.0, 4.0]) == 3.0
    assert model.v_norm([3.0, -4.0, 4.0]) == 11.0
    assert model.penalty_kind == "l1"


# -- elliptic model ------------------------------------------------------------------------
def test_constant_state_is_exact():
    model = EllipticRadiative(EllipticConfig.preset_config("constant", 200))
    u = model.apply(np.ones(200))
    assert np.max(np.abs(u - 2.0)) <= 1e-12


def test_second_order_convergence():
    errors = []
    for M in (100, 201, 403):
        model = EllipticRadiative(EllipticConfig.preset_config("manufactured", M))
        errors.append(np.max(np.abs(model.apply(np.zeros(M)) - model.config.exact_state())))
    for coarse, fine in zip(errors, errors[1:]):
        assert 3.6 <= coarse / fine <= 4.4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_maximum_principle(seed):
    rng = np.random.default_rng(seed)
    M = 24
    cfg = EllipticConfig(M, 0.5 + rng.random(M + 1), rng.random(M), rng.random(M), rng.random(), rng.random(), R=4.0)
    model = EllipticRadiative(cfg)
    chi = 4.0 * rng.random(M)
    assert np.all(model.apply(chi) >= 0.0)


def test_elliptic_config_validation():
    with pytest.raises(ValueError):
        EllipticConfig.preset_config("constant", 4)
    with pytest.raises(ValueError):
        EllipticConfig.preset_config("bogus", 20)
    with pytest.raises(ValueError):
        EllipticConfig(10, -np.ones(11), np.ones(10), np.ones(10), 0.0, 0.0)
    model = EllipticRadiative(EllipticConfig.preset_config("constant", 10))
    with pytest.raises(ValueError):
        model.apply(-2.0 * np.ones(10))


def test_elliptic_adjoint_gradient_matches_central_differences():
    M = 200
    model = EllipticRadiative(EllipticConfig.preset_config("manufactured", M))
    rng = np.random.default_rng(0)
    chi = np.zeros(M)
    y = model.apply(chi) + 0.1 * rng.standard_normal(M)
    grad = model.gradient(chi, model.apply(chi) - y)
    for direction in (grad / np.linalg.norm(grad), np.sin(np.pi * model.config.nodes)):
        fd = central_difference(lambda c: misfit(model, c, y), chi, direction, 1e-6)
        assert abs(fd - grad @ direction) <= 1e-5 * abs(fd)


def test_elliptic_jacobian_and_gradient_agree():
    model = EllipticRadiative(EllipticConfig.preset_config("manufactured", 30))
    rng = np.random.default_rng(4)
    chi = 2.0 * rng.random(30)
    r = rng.standard_normal(30)
    jac = model.jacobian(chi)
    np.testing.assert_allclose(model.gradient(chi, r), jac.T @ model.y_gram(r), rtol=1e-10, atol=1e-14)
    e = np.zeros(30)
    e[7] = 1e-6
    fd = (model.apply(chi + e) - model.apply(chi - e)) / 2e-6
    np.testing.assert_allclose(jac[:, 7], fd, rtol=1e-6, atol=1e-12)


def test_elliptic_hessian_matches_gradient_derivative():
    model = EllipticRadiative(EllipticConfig.preset_config("manufactured", 20))
    rng = np.random.default_rng(5)
    chi = 1.0 + rng.random(20)
    y = model.apply(np.zeros(20))
    hess = model.gauss_newton_matrix(chi) + model.curvature_matrix(chi, model.apply(chi) - y)
    assert np.allclose(hess, hess.T, rtol=1e-10, atol=1e-14)
    step = 1e-5
    for k in (0, 9, 19):
        e = np.zeros(20)
        e[k] = step
        col = (model.gradient(chi + e, model.apply(chi + e) - y)
               - model.gradient(chi - e, model.apply(chi - e) - y)) / (2 * step)
        np.testing.assert_allclose(hess[:, k], col, rtol=1e-5, atol=1e-10)


def test_sine_basis_and_norm_identities():
    model = EllipticRadiative(EllipticConfig.preset_config("constant", 40))
    lam, phi = model.sine_basis()
    np.testing.assert_allclose(model.h * phi.T @ phi, np.eye(40), atol=1e-12)
    np.testing.assert_allclose(model.laplacian(phi), phi * lam ** 2, rtol=1e-9, atol=1e-9)
    v = np.random.default_rng(6).standard_normal(40)
    assert model.frac_norm(v, 1.0) == pytest.approx(model.v_norm(v), rel=1e-10)
    assert model.frac_norm(v, -1.0) == pytest.approx(model.u_norm(v), rel=1e-10)
    assert model.frac_norm(v, 0.0) == pytest.approx(model.x_norm(v), rel=1e-12)


def test_elliptic_two_sided_bracket_is_finite_and_positive():
    model = EllipticRadiative(EllipticConfig.preset_config("constant", 64))
    rng = np.random.default_rng(7)
    ref = np.ones(64)
    assert np.min(model.apply(ref)) >= model.config.c0
    low, high = two_sided_constants_estimate(model, ref, box_samples(model, 100, rng))
    assert 0.0 < low <= high < np.inf


def test_heat_smoothing_keeps_box():
    model = EllipticRadiative(EllipticConfig.preset_config("constant", 50))
    rng = np.random.default_rng(8)
    smoother = EllipticSmoothing(model, SmoothingFn("exp2"))
    for x in box_samples(model, 9, rng):
        for t in (1e-3, 1e-2, 1e-1):
            out = smoother.apply(t, x)
            assert np.all(out >= -1e-12) and np.all(out <= model.config.R + 1e-12)


def test_box_samples_stay_in_box():
    model = EllipticRadiative(EllipticConfig.preset_config("constant", 30))
    samples = box_samples(model, 30, np.random.default_rng(9))
    assert all(model.in_domain(s, tol=0.0) for s in samples)


@pytest.mark.parametrize("make", [lambda s: LinearDiagonal(s), lambda s: NonlinearDiagonal(s, 0.3)])
def test_diagonal_hessian_parts_match_dense_matrices(make):
    model = make(spectral(np.arange(1, 6)))
    x = np.array([0.2, -1.0, 3.0, 0.0, 1.5])
    r = np.array([0.1, -0.4, 0.3, 2.0, -1.0])
    gn, curv, gram = model.hessian_parts(x, r)
    np.testing.assert_allclose(np.diag(gn), model.gauss_newton_matrix(x), rtol=1e-15)
    np.testing.assert_allclose(np.diag(curv), model.curvature_matrix(x, r), rtol=1e-15)
    np.testing.assert_allclose(np.diag(gram), model.v_gram_matrix(), rtol=1e-15)
