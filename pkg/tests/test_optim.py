import numpy as np
import pytest
import scipy.sparse as sp

from src.optim.levenberg_marquardt import LMSettings, levenberg_marquardt

T = np.linspace(0.0, 4.0, 30)
TRUE = np.array([2.5, -0.7])
Y = TRUE[0] * np.exp(TRUE[1] * T)


def residuals(x):
    return x[0] * np.exp(x[1] * T) - Y


def linearize(x):
    e = np.exp(x[1] * T)
    J = np.stack([e, x[0] * T * e], axis=1)
    return residuals(x), J


def retract(x, dx):
    return x + dx


def test_exponential_fit_converges():
    result = levenberg_marquardt(np.array([1.0, 0.0]), linearize, residuals, retract)
    assert result.converged
    np.testing.assert_allclose(result.state, TRUE, atol=1e-6)
    assert result.final_cost < 1e-12
    assert np.all(np.diff(result.cost_history) <= 0.0)


def test_keep_hessian_is_gauss_newton_at_solution():
    result = levenberg_marquardt(np.array([1.0, 0.0]), linearize, residuals, retract, keep_hessian=True)
    _, J = linearize(result.state)
    np.testing.assert_allclose(result.hessian, J.T @ J)


def test_sparse_jacobian_path():
    def sparse_linearize(x):
        r, J = linearize(x)
        return r, sp.csr_matrix(J)

    result = levenberg_marquardt(np.array([1.0, 0.0]), sparse_linearize, residuals, retract)
    np.testing.assert_allclose(result.state, TRUE, atol=1e-6)


def test_iteration_cap_reports_not_converged():
    result = levenberg_marquardt(np.array([1.0, 0.0]), linearize, residuals, retract,
                                 LMSettings(max_iterations=1, gtol=1e-30, ftol=1e-30))
    assert not result.converged
    assert result.reason == "max_iterations"
    assert result.final_cost <= result.initial_cost


def test_zero_cost_start_is_converged():
    result = levenberg_marquardt(TRUE.copy(), linearize, residuals, retract)
    assert result.converged
    assert result.iterations == 0
    assert result.final_cost == pytest.approx(0.0, abs=1e-20)
