import numpy as np
import pytest
from scipy.optimize import brentq

from inertial_bvp.errors import ConvergenceError, InputError, RefinementError
from inertial_bvp.ode_bvp import BvpSpec, residual_estimate, solve


def _linear_spec(tol=1e-6, **kw):
    # y'' = -y, y(0) = 0, y(pi/2) = 1  ->  y = sin t
    fun = lambda t, Y: np.stack([Y[:, 1], -Y[:, 0]], axis=1)
    bc = lambda a, b: np.array([a[0], b[0] - 1.0])
    mesh = np.linspace(0, np.pi / 2, 5)
    return BvpSpec(fun=fun, bc=bc, mesh=mesh, guess=np.zeros((5, 2)), tol=tol, **kw)


def test_linear_two_point_problem():
    sol = solve(_linear_spec())
    ts = np.linspace(0, np.pi / 2, 13)
    err = max(abs(sol.sample(t)[0][0] - np.sin(t)) for t in ts)
    assert err < 1e-6
    assert sol.max_residual <= 1e-6
    assert np.allclose(residual_estimate(sol, _linear_spec()), sol.residuals)


def test_nonlinear_bratu_lower_branch():
    fun = lambda t, Y: np.stack([Y[:, 1], -np.exp(Y[:, 0])], axis=1)
    bc = lambda a, b: np.array([a[0], b[0]])
    mesh = np.linspace(0, 1, 11)
    sol = solve(BvpSpec(fun=fun, bc=bc, mesh=mesh, guess=np.zeros((11, 2)), tol=1e-8))
    # closed form: y(1/2) = 2 log cosh(theta/4), theta = sqrt(2) cosh(theta/4)
    theta = brentq(lambda th: th - np.sqrt(2) * np.cosh(th / 4), 0.1, 4.0)
    assert abs(sol.sample(0.5)[0][0] - 2 * np.log(np.cosh(theta / 4))) < 1e-6


def test_mesh_budget():
    spec = _linear_spec(tol=1e-12, max_nodes=6)
    with pytest.raises(RefinementError):
        solve(spec)


def test_labels_and_transfer():
    # same ODE written in two charts: label 1 stores -y
    def fun(t, Y):
        return np.stack([Y[:, 1], -Y[:, 0]], axis=1)

    def transfer(t, Y, src, dst):
        return -Y if src != dst else Y

    bc = lambda a, b: np.array([a[0], -b[0] - 1.0])
    mesh = np.linspace(0, np.pi / 2, 9)
    labels = [0] * 5 + [1] * 4
    guess = np.zeros((9, 2))
    sol = solve(BvpSpec(fun=fun, bc=bc, mesh=mesh, guess=guess, tol=1e-7, transfer=transfer, labels=labels))
    for t, y, lab in zip(sol.t, sol.Y, sol.labels):
        sign = -1.0 if lab == 1 else 1.0
        assert abs(sign * y[0] - np.sin(t)) < 1e-6


def test_hook_rounds_are_capped():
    hook = lambda t, Y, labels: (Y, labels, [("again",)])
    with pytest.raises(ConvergenceError):
        solve(_linear_spec(hook=hook, max_rewrites=2))


def test_input_validation():
    spec = _linear_spec()
    spec.mesh = np.array([0.0, 0.0, 1.0])
    spec.guess = np.zeros((3, 2))
    with pytest.raises(InputError):
        solve(spec)
    spec = _linear_spec(labels=[0, 1, 0, 0, 0])
    with pytest.raises(InputError):
        solve(spec)
