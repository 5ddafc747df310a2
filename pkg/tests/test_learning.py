import warnings

import numpy as np
import pytest

from ssgp.data import simulate
from ssgp.inference import GPModel
from ssgp.kernels import Constant, Matern
from ssgp.learning import ObjectiveError, OptimizationFailed, objective, optimize
from ssgp.likelihoods import Gaussian, StudentT


def sinusoid_model(sigma_n=0.1):
    return GPModel(Matern(1.5, 0.7, 0.4), Gaussian(sigma_n))


def test_noise_gradient_vanishes_at_grid_optimum():
    d = simulate("sinusoids", 1000, seed=0)
    model = sinusoid_model()
    base = model.theta
    grid = np.log(0.1) + np.linspace(-0.3, 0.3, 61)

    def at(v):
        th = base.copy()
        th[2] = v
        return objective(th, model, d.t, d.y, "exact")

    vals = np.array([at(v).value for v in grid])
    j = int(np.argmin(vals))
    assert 0 < j < len(grid) - 1
    # the derivative changes sign across the grid minimum
    assert at(grid[j - 1]).grad[2] < 0 < at(grid[j + 1]).grad[2]


def test_objective_gradient_studentt_laplace():
    d = simulate("studentt", 200, seed=1)
    model = GPModel(Matern(1.5, 0.1, 2.0), StudentT(3.0, 0.5))
    th = model.theta
    ev = objective(th, model, d.t, d.y, "laplace")
    h = 1e-5
    for j in range(len(th)):
        e = np.zeros_like(th)
        e[j] = h
        fd = (objective(th + e, model, d.t, d.y, "laplace").value
              - objective(th - e, model, d.t, d.y, "laplace").value) / (2 * h)
        assert ev.grad[j] == pytest.approx(fd, rel=1e-4)


def test_constant_kernel_gradient_sign():
    t = np.linspace(0, 1, 20)
    y = np.full(20, 3.0) + 0.01 * np.sin(7 * t)
    model = GPModel(Constant(1.0), Gaussian(0.5))
    th = model.theta
    for v in (-1.0, 0.0, 1.0, 2.0):
        th2 = th.copy()
        th2[0] = v
        g = objective(th2, model, t, y, "exact").grad[0]
        e = np.array([1e-3, 0.0])
        slope = objective(th2 + e, model, t, y, "exact").value - objective(th2 - e, model, t, y, "exact").value
        assert np.sign(g) == np.sign(slope)


def test_never_worse_than_start():
    d = simulate("sinusoids", 300, seed=2)
    model = GPModel(Matern(1.5, 3.0, 2.0), Gaussian(1.0))
    v0 = objective(model.theta, model, d.t, d.y).value
    res = optimize(model, d.t, d.y, max_evals=5)
    assert res.value <= v0
    assert res.n_evals <= 6


def test_fixed_parameters_stay_put():
    d = simulate("sinusoids", 300, seed=3)
    model = sinusoid_model(0.3)
    res = optimize(model, d.t, d.y, fix=["sigma_n"], max_evals=30)
    assert res.theta[2] == model.theta[2]
    res = optimize(model, d.t, d.y, fix=["kernel.log_lengthscale", "log_sigma_f"], max_evals=30)
    np.testing.assert_array_equal(res.theta[:2], model.theta[:2])
    with pytest.raises(ValueError):
        optimize(model, d.t, d.y, fix=["bogus"])


def test_already_optimal_start():
    d = simulate("sinusoids", 500, seed=4)
    first = optimize(sinusoid_model(), d.t, d.y, max_evals=200, gtol=1e-8)
    again = optimize(first.model, d.t, d.y, max_evals=200, gtol=1e-8)
    np.testing.assert_allclose(again.theta, first.theta, atol=1e-4)
    assert again.value <= first.value + 1e-9


def test_noise_recovery_median_over_seeds():
    est = []
    for seed in range(20):
        d = simulate("sinusoids", 1000, seed=seed)
        res = optimize(sinusoid_model(0.3), d.t, d.y, "exact", max_evals=100)
        est.append(np.exp(res.theta[2]))
    assert abs(np.median(est) - 0.1) < 0.02


def test_no_labels_warns_and_returns_start():
    model = sinusoid_model()
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        res = optimize(model, np.linspace(0, 1, 5), np.full(5, np.nan))
    assert any("no labeled data" in str(x.message) for x in w)
    np.testing.assert_array_equal(res.theta, model.theta)
    assert res.n_evals == 0


def test_failures_are_recorded_and_all_fail_raises(monkeypatch):
    import ssgp.learning as L

    def boom(*a, **k):
        raise ObjectiveError("forced", np.zeros(3))

    monkeypatch.setattr(L, "objective", boom)
    d = simulate("sinusoids", 50, seed=0)
    with pytest.raises(OptimizationFailed) as info:
        optimize(sinusoid_model(), d.t, d.y, max_evals=3)
    assert all(row["value"] is None for row in info.value.trace)


def test_objective_rejects_nonfinite_theta():
    with pytest.raises(ValueError):
        objective([np.nan, 0.0, 0.0], sinusoid_model(), [0.0], [0.0])
