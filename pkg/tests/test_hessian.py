import numpy as np
import pytest

from nrslab import tensor as T
from nrslab.hessian import (ScopeError, full_lambda_max, hvp, lambda_max, last_layer_hessian,
                            last_layer_lambda_max, loss_gradient)
from nrslab.network import MlpSpec, forward, init_params
from nrslab.objective import cross_entropy
from oracles import fd_hessian, fd_hessian_from_grad, jacobi_eigenvalues


def small_net(seed, widths=(2, 8, 2), batch=12):
    rng = np.random.default_rng(seed)
    spec = MlpSpec(widths, "tanh")
    theta = init_params(spec, seed)
    x = rng.uniform(-2, 2, (batch, widths[0]))
    y = rng.integers(0, widths[-1], batch)
    return spec, theta, (x, y)


def test_jacobi_oracle_itself():
    a = np.array([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(jacobi_eigenvalues(a), [1.0, 3.0], atol=1e-14)


def test_hvp_quadratic():
    lam = 3.5
    grad = lambda th: lam * th
    v = np.array([0.3, -1.2, 2.0])
    np.testing.assert_allclose(hvp(grad, np.array([1.0, 2.0, 3.0]), v), lam * v, rtol=1e-10)


def test_hvp_is_linear_in_v():
    spec, theta, batch = small_net(0)
    g = loss_gradient(spec, batch)
    v = np.random.default_rng(1).standard_normal(theta.size)
    np.testing.assert_allclose(hvp(g, theta, 3.0 * v), 3.0 * hvp(g, theta, v), rtol=1e-8, atol=1e-12)


def test_hvp_rejects_zero_direction():
    with pytest.raises(ValueError):
        hvp(lambda t: t, np.ones(2), np.zeros(2))


def test_hvp_matches_dense_finite_difference_hessian():
    spec, theta, batch = small_net(2)
    assert spec.num_params <= 200
    x, y = batch

    def loss(t):
        return float(cross_entropy(forward(spec, t, x), y))

    H = fd_hessian(loss, theta, h=1e-4)
    v = np.random.default_rng(3).standard_normal(theta.size)
    out = hvp(loss_gradient(spec, batch), theta, v)
    ref = H @ v
    assert np.linalg.norm(out - ref) <= 1e-4 * np.linalg.norm(ref)


@pytest.mark.parametrize("h", [1e-3, 1e-4, 1e-5, 1e-6])
def test_hvp_step_size_sensitivity(h):
    """Central differences stay accurate across three decades of step size."""
    spec, theta, batch = small_net(4)
    g = loss_gradient(spec, batch)
    v = np.random.default_rng(5).standard_normal(theta.size)
    reference = hvp(g, theta, v, h=1e-4)
    rel = np.linalg.norm(hvp(g, theta, v, h=h) - reference) / np.linalg.norm(reference)
    assert rel < 1e-4


def test_hvp_symmetry():
    spec, theta, batch = small_net(6)
    g = loss_gradient(spec, batch)
    rng = np.random.default_rng(7)
    u, v = rng.standard_normal(theta.size), rng.standard_normal(theta.size)
    a, b = u @ hvp(g, theta, v), v @ hvp(g, theta, u)
    assert a == pytest.approx(b, rel=1e-6)


def test_power_iteration_known_spectra():
    res = lambda_max(lambda v: np.array([1.0, 2.0, 5.0]) * v, 3, tol=1e-14, max_iter=10_000)
    assert res.lambda_max == pytest.approx(5.0, abs=1e-6)
    assert res.converged
    for dim in (1, 7):
        assert lambda_max(lambda v: v, dim).lambda_max == pytest.approx(1.0, abs=1e-12)


def test_power_iteration_zero_operator():
    res = lambda_max(lambda v: np.zeros_like(v), 4)
    assert (res.lambda_max, res.residual) == (0.0, 0.0)


def test_power_iteration_dominant_negative_eigenvalue():
    # largest magnitude is -10, largest algebraic is 2
    res = lambda_max(lambda v: np.array([-10.0, 2.0, 1.0]) * v, 3, tol=1e-14, max_iter=20_000)
    assert res.lambda_max == pytest.approx(2.0, abs=1e-6)


def test_power_iteration_random_symmetric_vs_jacobi():
    rng = np.random.default_rng(8)
    a = rng.standard_normal((20, 20))
    a = (a + a.T) / 2
    top = jacobi_eigenvalues(a)[-1]
    res = lambda_max(lambda v: a @ v, 20, tol=1e-13, max_iter=200_000)
    assert res.lambda_max == pytest.approx(top, rel=1e-6)


def test_power_iteration_seed_invariance():
    rng = np.random.default_rng(9)
    a = rng.standard_normal((15, 15))
    a = a @ a.T
    tol = 1e-10
    vals = [lambda_max(lambda v: a @ v, 15, tol=tol, max_iter=100_000, seed=s).lambda_max
            for s in range(5)]
    assert max(vals) - min(vals) <= 2 * tol * abs(vals[0])


def test_last_layer_block_psd_and_symmetric():
    spec, theta, batch = small_net(10, widths=(3, 6, 4))
    H = last_layer_hessian(spec, theta, batch)
    assert H.shape == (7 * 4, 7 * 4)
    np.testing.assert_array_equal(H, H.T)
    assert jacobi_eigenvalues(H)[0] >= -1e-10


def test_last_layer_block_vanishes_for_saturated_predictions():
    spec = MlpSpec((2, 3, 2))
    theta = np.zeros(spec.num_params)
    theta[-2:] = [60.0, -60.0]  # output bias pins every prediction to class 0
    x = np.random.default_rng(0).standard_normal((5, 2))
    H = last_layer_hessian(spec, theta, (x, np.zeros(5, int)))
    assert np.linalg.norm(H) < 1e-8


def test_last_layer_block_matches_finite_differences():
    spec, theta, batch = small_net(11, widths=(3, 5, 3))
    sl = spec.last_layer_slice()
    x, y = batch

    def restricted_grad(w):
        full = theta.copy()
        full[sl] = w
        g = T.Graph()
        p = g.param(full)
        return g.backward(cross_entropy(forward(spec, p, x), y))[p.id][sl]

    ref = fd_hessian_from_grad(restricted_grad, theta[sl])
    H = last_layer_hessian(spec, theta, batch)
    assert np.max(np.abs(H - ref)) <= 1e-4 * np.max(np.abs(ref))


def test_last_layer_scope_limit():
    spec = MlpSpec((2, 3, 2))
    with pytest.raises(ScopeError):
        last_layer_hessian(spec, np.zeros(spec.num_params), (np.zeros((1, 2)), [0]), max_dim=5)


def test_last_layer_power_iteration_vs_dense_oracle():
    spec, theta, batch = small_net(12, widths=(2, 8, 3))
    H = last_layer_hessian(spec, theta, batch)
    res = last_layer_lambda_max(spec, theta, batch, tol=1e-12)
    assert res.scope == "last_layer"
    assert res.lambda_max == pytest.approx(jacobi_eigenvalues(H)[-1], rel=1e-6)


def test_full_model_lambda_max_bounds_last_layer():
    spec, theta, batch = small_net(13)
    full = full_lambda_max(spec, theta, batch, tol=1e-8, max_iter=2000)
    last = last_layer_lambda_max(spec, theta, batch)
    # the last-layer block is a principal submatrix of the full Hessian
    assert full.lambda_max >= last.lambda_max - 1e-5
