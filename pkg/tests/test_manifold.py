import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from inertial_bvp import householder as hh
from inertial_bvp.errors import InputError
from inertial_bvp.manifold import (DecoupledSystem, ManifoldQuery, knee_T, manifold_point,
                                   manifold_trajectory, pullback_defect, sweep_T, sweep_what)
from inertial_bvp.ode_ivp import IvpSpec, integrate
from inertial_bvp.problems import kse_galerkin, linear_benchmark, rotating_2d


def triangular(seed, p=2, q=3):
    rng = np.random.default_rng(seed)
    B = np.triu(rng.normal(size=(p, p))) - 2 * np.eye(p)
    A = np.triu(rng.normal(size=(q, q))) - 12 * np.eye(q)
    return linear_benchmark(B, A, rng.normal(size=(p, q)) * 3)


def test_query_validation():
    with pytest.raises(InputError):
        ManifoldQuery(p=1, T=1.0)
    with pytest.raises(InputError):
        ManifoldQuery(p=1, T=0.0, y0=(1.0,))
    with pytest.raises(InputError):
        ManifoldQuery(p=2, T=1.0, y0=(1.0,))
    with pytest.raises(InputError):
        ManifoldQuery(p=1, T=1.0, y0=(1.0,), u_fix={"index": [0], "value": [1.0]})
    q = ManifoldQuery(p=1, T=1.0, u_fix={"index": [0], "value": [1.0]})
    assert q.mode == "original"
    with pytest.raises(InputError):
        ManifoldQuery(p=1, T=1.0, y0=(1.0,), what_boundary=((0.1, 0.2),)).boundary_stack(2)


def test_system_field_matches_original_dynamics():
    P = rotating_2d()
    sysm = DecoupledSystem(P, 1, "trajectory")
    rng = np.random.default_rng(0)
    z, w = rng.normal(size=2) * 0.5, rng.normal(size=1) * 0.5
    Y = sysm.pack(z, [w])
    t, h = 0.7, 1e-6
    # d/dt (Q z) must equal f(Q z)
    dY = sysm.fun(t, Y)
    u = lambda s: hh.frame([w + s * dY[2:]], z + s * dY[:2])
    assert np.allclose((u(h) - u(-h)) / (2 * h), P.rhs(t, u(0)), atol=1e-8)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000), st.floats(-2, 2), st.floats(-2, 2))
def test_linear_manifold_is_flat(seed, y1, y2):
    P = triangular(seed)
    rng = np.random.default_rng(seed)
    whats = ((rng.uniform(-0.5, 0.5, 4)).tolist(), (rng.uniform(-0.5, 0.5, 3)).tolist())
    q = ManifoldQuery(p=2, T=2.0, y0=(y1, y2), what_boundary=whats)
    pt = manifold_point(P, q)
    assert np.linalg.norm(pt.x) <= 10 * q.bvp_tol
    assert np.allclose(pt.y, (y1, y2))


def test_point_solves_the_original_ode():
    P = rotating_2d()
    q = ManifoldQuery(p=1, T=1.0, y0=(-1.0,), what_boundary=((0.3,),), bvp_tol=1e-6)
    pt = manifold_point(P, q)
    sol = pt.solution
    sysm = DecoupledSystem(P, 1)
    z0, w0 = sysm.split(sol.Y[0])
    u0 = hh.frame(w0, z0)
    fwd = integrate(IvpSpec(P.rhs, -1.0, 0.0, u0, rtol=1e-10, atol=1e-12))
    assert np.abs(fwd.y[-1] - pt.u).max() < 1e-4
    assert abs(z0[1]) < 1e-8
    assert pt.bvp_residual <= 1e-6


def test_original_and_project_modes_agree():
    P = rotating_2d()
    a = manifold_point(P, ManifoldQuery(p=1, T=1.0, u_fix={"index": [0], "value": [1.0]},
                                        what_boundary=((0.3,),)))
    assert a.u[0] == pytest.approx(1.0, abs=1e-6)
    b = manifold_point(P, ManifoldQuery(p=1, T=1.0, u_target=tuple(a.u), what_boundary=((0.3,),)))
    assert np.abs(a.u - b.u).max() < 1e-3


def test_trajectory_counts_and_order():
    P = triangular(1, p=1, q=2)
    q = ManifoldQuery(p=1, T=1.5, y0=(1.0,))
    tr = manifold_trajectory(P, q, 0.05, 5, scheme="ab3")
    assert tr.solves == 6 and tr.solves_after_startup == 5 - 3 + 1
    assert np.abs(tr.x).max() < 1e-8
    with pytest.raises(InputError):
        manifold_trajectory(P, q, 0.05, 2, scheme="rk4")


def test_euler_is_first_order():
    P = linear_benchmark([[-1.0]], [[-10.0]], [[0.5]])
    q = ManifoldQuery(p=1, T=1.5, y0=(1.0,))
    errs = []
    for dt, N in ((0.1, 5), (0.05, 10)):
        tr = manifold_trajectory(P, q, dt, N)
        errs.append(abs(tr.y[-1, 0] - np.exp(-0.5)))
    assert 1.8 < errs[0] / errs[1] < 2.2


def test_pullback_defect_on_flat_manifold():
    P = triangular(2, p=1, q=2)
    pt = manifold_point(P, ManifoldQuery(p=1, T=2.0, y0=(0.7,)))
    dfc = pullback_defect(P, pt, 0.2)
    assert 0.0 <= dfc < 1e-3
    with pytest.raises(InputError):
        pullback_defect(P, pt, 0.0)


def test_knee_detector():
    Ts = [1, 2, 3, 4]
    assert knee_T(Ts, [1.0, 0.1, 0.01, 0.0099]) == 3.0
    assert knee_T(Ts, [1.0, 0.1, 0.01, 0.001]) is None


def test_sweeps_record_rows():
    P = rotating_2d()
    base = ManifoldQuery(p=1, T=0.5, u_fix={"index": [0], "value": [1.0]}, what_boundary=((0.3,),))
    res = sweep_T(P, base, [0.5])
    assert len(res.rows) == 1 and res.rows[0].ok and res.best() is res.rows[0]
    res = sweep_what(P, base, [((0.3,),), ((-0.2,),)])
    assert [r.what for r in res.rows] == [((0.3,),), ((-0.2,),)]
    with pytest.raises(InputError):
        sweep_T(P, base, [])


def test_sweep_without_metric_uses_defect():
    P = kse_galerkin(4)
    base = ManifoldQuery(p=2, T=0.01, y0=(-0.5, 0.5))
    res = sweep_T(P, base, [0.01])
    assert res.rows[0].ok and np.isfinite(res.rows[0].defect)


def test_trajectory_stops_cleanly_when_the_bvp_fails():
    # at T = 1.7 the v(0) = 1 data leave the solvable region near t = 0.23
    q = ManifoldQuery(p=1, T=1.7, u_fix={"index": [0], "value": [1.0]}, what_boundary=((0.3,),))
    tr = manifold_trajectory(rotating_2d(), q, 0.05, 10)
    assert not tr.complete and "step" in tr.error
    assert 1 < tr.t.size < 11 and tr.solves == tr.t.size + 1


def test_resolving_at_own_y_reproduces_x():
    P = rotating_2d()
    q = ManifoldQuery(p=1, T=1.0, u_fix={"index": [0], "value": [0.8]}, what_boundary=((0.3,),))
    a = manifold_point(P, q)
    b = manifold_point(P, ManifoldQuery(p=1, T=1.0, y0=tuple(a.y), what_boundary=((0.3,),)))
    assert np.abs(a.x - b.x).max() <= 10 * q.bvp_tol


def test_gap_is_advisory(caplog):
    from inertial_bvp.bounds import GapData

    P = triangular(3, p=1, q=1)
    bad = GapData(K=1, alpha=-2, beta=-1, L=5.0)
    with caplog.at_level("WARNING"):
        pt = manifold_point(P, ManifoldQuery(p=1, T=1.0, y0=(1.0,)), gap=bad)
    assert "gap condition fails" in caplog.text and np.linalg.norm(pt.x) < 1e-8
