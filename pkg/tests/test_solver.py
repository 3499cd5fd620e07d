import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oversmooth.forward import EllipticConfig, EllipticRadiative, L1Embedding, LinearDiagonal, NonlinearDiagonal
from oversmooth.harness import TruthSpec, generate_truth
from oversmooth.solver import (
    SolverOptions,
    TikhonovProblem,
    soft_threshold,
    solve,
    solve_diagonal_quadratic,
    solve_l1_sup,
    solve_projected_gradient,
)
from oversmooth.spaces import ScaleModel, WeightSequence


def spectral(values, a=1.0):
    return ScaleModel.spectral(WeightSequence(np.asarray(values, dtype=float)), a)


def embedding(values=(1.0, 2.0, 4.0)):
    return L1Embedding(ScaleModel.weighted_l1(WeightSequence(np.asarray(values, dtype=float)), 2.0))


# -- problem validation -----------------------------------------------------------------
def test_problem_rejects_unsupported_configurations():
    lin = LinearDiagonal(spectral([1, 2]))
    y = np.ones(2)
    with pytest.raises(ValueError, match="not supported"):
        TikhonovProblem(lin, y, 0.1, 1.0, nu=3, m=2)
    with pytest.raises(ValueError):
        TikhonovProblem(lin, y, 0.1, 0.0)
    with pytest.raises(ValueError):
        TikhonovProblem(lin, np.ones(3), 0.1, 1.0)
    with pytest.raises(ValueError):
        TikhonovProblem(embedding(), np.ones(3), 0.1, 1.0, nu=2, m=2)
    with pytest.raises(ValueError):
        TikhonovProblem(embedding(), np.ones(3), 0.1, 1.0, nu=2, m=1, penalty="l1")
    with pytest.raises(ValueError):
        TikhonovProblem(lin, y, 0.1, 1.0, nu=2, m=2, penalty="l1")


def test_solver_options_validate():
    with pytest.raises(ValueError):
        SolverOptions(metric="lbfgs")
    with pytest.raises(ValueError):
        SolverOptions(armijo=1.5)
    with pytest.raises(ValueError):
        SolverOptions(restarts=0)


# -- closed form ----------------------------------------------------------------------
def test_closed_form_scalar_example():
    sol = solve(TikhonovProblem(LinearDiagonal(spectral([1.0])), [1.0], 0.0, 1.0))
    assert sol.method == "closed_form"
    assert sol.x[0] == 0.5
    assert sol.objective == pytest.approx(0.5)


def test_closed_form_limits():
    scale = spectral([1, 2, 3])
    model = LinearDiagonal(scale)
    y = np.array([1.0, -0.5, 0.25])
    tiny = solve_diagonal_quadratic(TikhonovProblem(model, y, 0.0, 1e-14)).x
    np.testing.assert_allclose(tiny, scale.lam * y, rtol=1e-11)
    huge = solve_diagonal_quadratic(TikhonovProblem(model, y, 0.0, 1e14)).x
    assert np.max(np.abs(huge)) < 1e-13


def test_closed_form_is_stationary():
    model = LinearDiagonal(spectral(np.arange(1, 11)))
    rng = np.random.default_rng(0)
    y = rng.standard_normal(10)
    kappa = 0.37
    x = solve_diagonal_quadratic(TikhonovProblem(model, y, 0.0, kappa)).x
    # gradient of |Fx - y|^2 + kappa |x|_V^2
    grad = 2 * model.gradient(x, model.apply(x) - y) + 2 * kappa * model.v_gram(x)
    assert np.max(np.abs(grad)) < 1e-13


def test_closed_form_monotone_in_kappa():
    model = LinearDiagonal(spectral(np.arange(1, 65)))
    y = np.random.default_rng(1).standard_normal(64)
    residuals, penalties = [], []
    for kappa in np.geomspace(1e-8, 1e4, 97):
        sol = solve_diagonal_quadratic(TikhonovProblem(model, y, 0.0, kappa))
        residuals.append(sol.residual)
        penalties.append(sol.penalty)
    assert np.all(np.diff(residuals) >= -1e-15)
    assert np.all(np.diff(penalties) <= 1e-15)


def test_closed_form_refuses_boxes():
    model = LinearDiagonal(spectral([1, 2]), box=(0.0, 1.0))
    with pytest.raises(ValueError):
        solve_diagonal_quadratic(TikhonovProblem(model, np.ones(2), 0.0, 1.0))


# -- projected descent ----------------------------------------------------------------------
@settings(max_examples=15, deadline=None)
@given(arrays(float, 6, elements=st.floats(-3, 3)), st.floats(1e-3, 1e2))
def test_projected_descent_matches_closed_form(y, kappa):
    model = LinearDiagonal(spectral(np.arange(1, 7)))
    problem = TikhonovProblem(model, y, 0.0, kappa)
    exact = solve_diagonal_quadratic(problem)
    for metric in ("euclidean", "newton"):
        approx = solve_projected_gradient(problem, SolverOptions(metric=metric))
        assert model.x_norm(approx.x - exact.x) <= 1e-8


def test_projected_descent_large_kappa_goes_to_zero():
    model = NonlinearDiagonal(spectral(np.arange(1, 9)), 0.2)
    sol = solve(TikhonovProblem(model, np.ones(8), 0.0, 1e10))
    assert np.max(np.abs(sol.x)) < 1e-8


def test_box_feasibility_is_exact():
    rng = np.random.default_rng(2)
    model = NonlinearDiagonal(spectral(np.arange(1, 9)), 0.2, box=(-0.1, 0.3))
    for _ in range(5):
        sol = solve(TikhonovProblem(model, 3 * rng.standard_normal(8), 0.0, 1e-3))
        assert np.all(sol.x >= -0.1) and np.all(sol.x <= 0.3)


def test_multistart_records_spread():
    model = NonlinearDiagonal(spectral(np.arange(1, 5)), 0.3)
    sol = solve_projected_gradient(TikhonovProblem(model, np.ones(4), 0.0, 0.1), SolverOptions(restarts=3))
    assert sol.metadata["restarts"] == 3
    assert sol.metadata["spread"] >= 0.0
    assert sol.metadata["global_optimality"] == "not certified"


def test_proximal_branch_sparsifies():
    model = LinearDiagonal(spectral([1, 1, 1]))
    y = np.array([2.0, 0.1, -2.0])
    sol = solve(TikhonovProblem(model, y, 0.0, 1.0, nu=2, m=1, penalty="l1"))
    # F is the identity here, so |x - y|^2 + |x|_1 separates and each coordinate
    # minimizes (x_n - y_n)^2 + |x_n|, whose solution is soft thresholding at 1/2
    np.testing.assert_allclose(sol.x, soft_threshold(y, 0.5), atol=1e-9)


def test_penalty_comparison_against_competitors():
    model = NonlinearDiagonal(spectral(np.arange(1, 9)), 0.1)
    rng = np.random.default_rng(3)
    y = rng.standard_normal(8)
    problem = TikhonovProblem(model, y, 0.0, 0.05)
    sol = solve(problem)
    for _ in range(200):
        z = sol.x + 0.3 * rng.standard_normal(8)
        if problem.residual(z) <= sol.residual:
            assert sol.objective <= problem.objective(z) + 1e-10
            assert sol.penalty <= problem.penalty_norm(z) + 1e-8
        assert sol.objective <= problem.objective(z) + 1e-10


def test_elliptic_stationary_at_manufactured_truth():
    # manufactured preset: chi = 0 reproduces the data exactly and has zero penalty gradient
    model = EllipticRadiative(EllipticConfig.preset_config("manufactured", 60))
    truth = np.zeros(60)
    problem = TikhonovProblem(model, model.apply(truth), 0.0, 1e-8)
    sol = solve(problem, x0=truth)
    assert np.max(np.abs(sol.x - truth)) <= 1e-12
    assert sol.objective <= 1e-20


def test_elliptic_zero_noise_moves_only_by_penalty_gradient():
    model = EllipticRadiative(EllipticConfig.preset_config("constant", 60))
    truth = generate_truth(model, TruthSpec()).x
    kappa = 1e-8
    problem = TikhonovProblem(model, model.apply(truth), 0.0, kappa)
    # at the truth the misfit gradient vanishes, leaving 2 kappa h L0 chi
    np.testing.assert_allclose(model.gradient(truth, model.apply(truth) - problem.y_delta), 0.0, atol=1e-15)
    sol = solve(problem, x0=truth)
    assert sol.objective <= problem.objective(truth)
    assert sol.residual <= np.sqrt(kappa) * model.v_norm(truth)
    assert model.in_domain(sol.x, tol=0.0)


# -- l1 reduction ---------------------------------------------------------------------------
def test_l1_examples():
    model = embedding()
    sol = solve_l1_sup(TikhonovProblem(model, [3.0, 0.0, 0.0], 0.0, 0.1, nu=1, m=1))
    np.testing.assert_array_equal(sol.x, [3.0, 0.0, 0.0])
    assert sol.objective == pytest.approx(0.3)
    assert sol.metadata["level"] == 0.0
    sol = solve_l1_sup(TikhonovProblem(model, [3.0, 0.0, 0.0], 0.0, 2.0, nu=1, m=1))
    np.testing.assert_array_equal(sol.x, [0.0, 0.0, 0.0])
    assert sol.metadata["level"] == 3.0
    for kappa in (1e-3, 1.0, 1e3):
        sol = solve(TikhonovProblem(model, np.zeros(3), 0.0, kappa, nu=1, m=1))
        np.testing.assert_array_equal(sol.x, np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(arrays(float, 3, elements=st.floats(-5, 5)), st.floats(1e-2, 1e2),
       arrays(float, 3, elements=st.floats(-6, 6)))
def test_l1_solution_beats_random_competitors(y, kappa, z):
    problem = TikhonovProblem(embedding(), y, 0.0, kappa, nu=1, m=1)
    sol = solve_l1_sup(problem)
    assert sol.objective <= problem.objective(z) + 1e-12


def test_soft_threshold():
    np.testing.assert_array_equal(soft_threshold([3.0, -0.5, -2.0], 1.0), [2.0, -0.0, -1.0])
