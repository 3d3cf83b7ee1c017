"""Points and trajectories on the inertial manifold via finite-horizon BVPs.

The BVP unknown at each mesh node is ``(y, x, what_1, .., what_p)``: the
rotated state ``z = Q^T u`` (slow block first) followed by the reflector
coordinates. On ``[t - T, t]``::

    u = Q z,   C = C(s),   (what', D) = sweep(what, C),
    z' = D z + Q^T (f(u, s) - C u)

``C(s)`` is the linear part about the problem's anchor (the origin unless the
problem says otherwise); with ``linearization="trajectory"`` it is
``f'(u(s), s)`` along the unknown itself. Either way the ``z`` equation is
exact; the choice only decides which frame the reflectors follow.

with ``x(t - T) = 0``, ``what(t - T)`` given, and ``p`` conditions at ``t``
that fix the slow part. Every node carries a chart label (the tuple of
column signs); nodes whose coordinates leave the unit ball are moved to the
other chart between Newton rounds.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import householder as hh
from . import ode_bvp, ode_ivp
from .errors import InertialBvpError, InputError, NumericalError

log = logging.getLogger(__name__)

GUESS_MAX_NODES = 300
GUESS_MIN_NODES = 11

AB_COEFFS = {
    1: (1.0,),
    2: (1.5, -0.5),
    3: (23 / 12, -16 / 12, 5 / 12),
    4: (55 / 24, -59 / 24, 37 / 24, -9 / 24),
}


@dataclass(frozen=True)
class ManifoldQuery:
    """Inputs for one manifold point.

    Exactly one way of fixing the slow part at ``t`` must be given:
    ``y0`` (rotated coordinates), ``u_fix`` (``{"index": [...], "value": [...]}``,
    ``p`` components of the original state) or ``u_target`` (a full state
    whose rotated slow part is matched).
    """

    p: int
    T: float
    t: float = 0.0
    y0: Optional[tuple] = None
    u_fix: Optional[dict] = None
    u_target: Optional[tuple] = None
    what_boundary: Optional[tuple] = None
    bvp_tol: float = 1e-3
    ivp_rtol: float = 1e-4
    ivp_atol: float = 1e-7
    max_nodes: int = 2000
    linearization: str = "anchor"

    def __post_init__(self):
        if not self.T > 0:
            raise InputError(f"horizon T must be positive, got {self.T}")
        if self.p < 1:
            raise InputError("p must be at least 1")
        modes = [m for m in (self.y0, self.u_fix, self.u_target) if m is not None]
        if len(modes) != 1:
            raise InputError("give exactly one of y0, u_fix, u_target")
        if self.y0 is not None and len(self.y0) != self.p:
            raise InputError(f"y0 must have length p={self.p}")
        if self.u_fix is not None:
            idx, val = self.u_fix.get("index"), self.u_fix.get("value")
            if idx is None or val is None or len(idx) != self.p or len(val) != self.p:
                raise InputError("u_fix needs p indices and p values")

    @property
    def mode(self):
        if self.y0 is not None:
            return "rotated"
        return "original" if self.u_fix is not None else "project"

    def boundary_stack(self, d):
        if self.p >= d:
            raise InputError(f"need p < d, got p={self.p}, d={d}")
        if self.what_boundary is None:
            return hh.ReflectorStack.zeros(d, self.p)
        whats = [np.asarray(w, dtype=float) for w in self.what_boundary]
        if len(whats) != self.p:
            raise InputError(f"what_boundary needs {self.p} entries")
        for i, w in enumerate(whats):
            if w.shape != (d - i - 1,):
                raise InputError(f"what_boundary[{i}] must have length {d - i - 1}")
        return hh.ReflectorStack.from_boundary(d, whats)


@dataclass
class ManifoldPoint:
    t: float
    y: np.ndarray
    x: np.ndarray
    u: np.ndarray
    stack: hh.ReflectorStack
    slow_rhs: np.ndarray
    residual: Optional[float]
    bvp_residual: float
    reembeds: int
    newton_iterations: int
    n_nodes: int
    query: ManifoldQuery
    solution: ode_bvp.BvpSolution = field(repr=False, default=None)

    def record(self):
        return {
            "t": self.t, "y": self.y.tolist(), "x": self.x.tolist(), "u": self.u.tolist(),
            "what": [w.tolist() for w in self.stack.what], "sigma": list(self.stack.sigma),
            "slow_rhs": self.slow_rhs.tolist(), "residual": self.residual,
            "bvp_residual": self.bvp_residual, "reembeds": self.reembeds,
            "newton_iterations": self.newton_iterations, "n_nodes": self.n_nodes,
        }


class DecoupledSystem:
    """The combined ``(z, what)`` vector field of a problem split at ``p``."""

    def __init__(self, problem, p, linearization="anchor"):
        if linearization not in ("anchor", "trajectory"):
            raise InputError(f"linearization must be 'anchor' or 'trajectory', got {linearization!r}")
        self.linearization = linearization
        self.problem = problem
        self.d = d = problem.dim
        if not 0 < p < d:
            raise InputError(f"need 0 < p < d, got p={p}, d={d}")
        self.p = p
        self.sizes = [d - i - 1 for i in range(p)]
        self.offsets = np.concatenate([[d], d + np.cumsum(self.sizes)])
        self.n = int(self.offsets[-1])

    def split(self, Y):
        z = Y[..., :self.d]
        whats = [Y[..., self.offsets[i]:self.offsets[i + 1]] for i in range(self.p)]
        return z, whats

    def pack(self, z, whats):
        return np.concatenate([z] + list(whats), axis=-1)

    def fun(self, t, Y):
        Y = np.asarray(Y, dtype=float)
        z, whats = self.split(Y)
        u = hh.frame(whats, z)
        if self.linearization == "anchor":
            C = self.problem.linear_part(np.broadcast_to(t, u.shape[:-1]))
        else:
            C = self.problem.jacobian(t, u)
        F = self.problem.rhs(t, u)
        dwhats, D = hh.sweep(whats, C)
        dz = np.einsum("...ij,...j->...i", D, z) + hh.frame_T(whats, F - np.einsum("...ij,...j->...i", C, u))
        return np.concatenate([dz] + dwhats, axis=-1)

    def transfer(self, t, Y, src, dst):
        out = np.array(Y, dtype=float, copy=True)
        flips = [a != b for a, b in zip(src, dst)]
        for k in range(out.shape[0]):
            z, whats = self.split(out[k])
            new, z2, _ = hh.switch_charts(whats, flips, z=z)
            out[k] = self.pack(z2, new)
        return out

    def stabilize(self, y, label):
        """Move one node to the stable chart; returns ``(y, label, flips or None)``."""
        z, whats = self.split(y)
        if all(float(w @ w) <= 1.0 for w in whats):
            return y, label, None
        new, z2, flips = hh.stabilize_whats(whats, z=z)
        label = tuple(-s if f else s for s, f in zip(label, flips))
        return self.pack(z2, new), label, tuple(flips)

    def bvp_hook(self, t, Y, labels):
        Y = np.array(Y, dtype=float, copy=True)
        events = []
        for k in range(len(t)):
            Y[k], labels[k], flips = self.stabilize(Y[k], labels[k])
            if flips is not None:
                events.append((float(t[k]), flips))
        return Y, labels, events


def _slow_start(system, q, stack0):
    p, d = system.p, system.d
    if q.mode == "rotated":
        return np.asarray(q.y0, dtype=float)
    if q.mode == "original":
        idx = np.asarray(q.u_fix["index"], dtype=int)
        cols = hh.frame_columns(stack0.what, d)        # (p, d)
        A = cols[:, idx].T
        y, *_ = np.linalg.lstsq(A, np.asarray(q.u_fix["value"], dtype=float), rcond=None)
        return y
    return hh.frame_T(stack0.what, np.asarray(q.u_target, dtype=float))[:p]


def _ivp_guess(system, q, stack0):
    """Initial guess from a forward run started at ``(y_start, 0, what_data)``."""
    t0, t1 = q.t - q.T, q.t
    start = system.pack(np.concatenate([_slow_start(system, q, stack0), np.zeros(system.d - system.p)]),
                        stack0.what)
    labels = []
    state = {"label": tuple(stack0.sigma)}

    def hook(t, y):
        y2, lab, flips = system.stabilize(y, state["label"])
        state["label"] = lab
        labels.append(lab)
        return y2, flips

    try:
        sol = ode_ivp.integrate(ode_ivp.IvpSpec(rhs=system.fun, t0=t0, t1=t1, y0=start, rtol=q.ivp_rtol,
                                                atol=q.ivp_atol, hook=hook))
    except NumericalError:
        mesh = np.linspace(t0, t1, GUESS_MIN_NODES)
        return mesh, np.tile(start, (mesh.size, 1)), [tuple(stack0.sigma)] * mesh.size
    ts = sol.t
    if ts.size > GUESS_MAX_NODES:
        keep = np.unique(np.round(np.linspace(0, ts.size - 1, GUESS_MAX_NODES)).astype(int))
        return ts[keep], sol.y[keep], [labels[k] for k in keep]
    if ts.size < GUESS_MIN_NODES:
        mesh = np.linspace(t0, t1, GUESS_MIN_NODES)
        Y = np.array([ode_ivp.dense_eval(sol, s) for s in mesh])
        return mesh, Y, [labels[ode_ivp.step_index(sol, s)] for s in mesh]
    return ts, sol.y.copy(), list(labels)


def _bc(system, q, stack0):
    p, d = system.p, system.d
    data = stack0.flat()
    mode = q.mode
    if mode == "rotated":
        y0 = np.asarray(q.y0, dtype=float)
    elif mode == "original":
        idx = np.asarray(q.u_fix["index"], dtype=int)
        vals = np.asarray(q.u_fix["value"], dtype=float)
    else:
        target = np.asarray(q.u_target, dtype=float)

    def bc(ya, yb):
        left = np.concatenate([ya[p:d], ya[d:] - data])
        if mode == "rotated":
            right = yb[:p] - y0
        else:
            z, whats = system.split(yb)
            if mode == "original":
                right = hh.frame(whats, z)[idx] - vals
            else:
                right = yb[:p] - hh.frame_T(whats, target)[:p]
        return np.concatenate([left, right])

    return bc


def solve_point(problem, q: ManifoldQuery, guess=None) -> ManifoldPoint:
    """One manifold point; ``guess`` is an optional ``(mesh, Y, labels)`` warm start."""
    system = DecoupledSystem(problem, q.p, q.linearization)
    stack0 = q.boundary_stack(system.d)
    if q.mode == "original" and np.any(np.asarray(q.u_fix["index"]) >= system.d):
        raise InputError("u_fix index out of range")
    if q.mode == "project" and len(q.u_target) != system.d:
        raise InputError(f"u_target must have length {system.d}")
    if guess is None:
        mesh, Y, labels = _ivp_guess(system, q, stack0)
    else:
        mesh, Y, labels = guess
    spec = ode_bvp.BvpSpec(fun=system.fun, bc=_bc(system, q, stack0), mesh=mesh, guess=Y,
                           tol=q.bvp_tol, hook=system.bvp_hook, transfer=system.transfer,
                           labels=labels, max_nodes=q.max_nodes)
    sol = ode_bvp.solve(spec)
    end = sol.Y[-1]
    z, whats = system.split(end)
    stack = hh.ReflectorStack.raw(system.d, [w.copy() for w in whats], sol.labels[-1])
    u = hh.frame(whats, z)
    res = problem.manifold_residual(q.t, u)
    return ManifoldPoint(
        t=q.t, y=z[:q.p].copy(), x=z[q.p:].copy(), u=u, stack=stack,
        slow_rhs=system.fun(np.array([q.t]), end[None])[0, :q.p],
        residual=None if res is None else float(res),
        bvp_residual=sol.max_residual, reembeds=len(sol.events),
        newton_iterations=int(sum(sol.newton_iterations)), n_nodes=int(sol.t.size),
        query=q, solution=sol)


def manifold_point(problem, q: ManifoldQuery, gap=None) -> ManifoldPoint:
    """Point ``(y, Psi(t, y))`` from the truncated BVP on ``[t - T, t]``.

    ``gap`` (a :class:`GapData`) is only advisory: a violated gap condition
    is logged and the solve goes ahead.
    """
    if gap is not None and not gap.gap_ok:
        log.warning("gap condition fails (kappa=%.3g, L=%.3g vs (beta-alpha)/2K=%.3g); "
                    "the manifold may not exist", gap.kappa, gap.L, (gap.beta - gap.alpha) / (2 * gap.K))
    return solve_point(problem, q)


# --- sweeps -----------------------------------------------------------------

@dataclass
class SweepRow:
    T: float
    what: Optional[tuple]
    residual: float = np.nan
    defect: float = np.nan
    bvp_residual: float = np.nan
    n_nodes: int = 0
    newton_iterations: int = 0
    reembeds: int = 0
    y: Optional[list] = None
    x: Optional[list] = None
    error: str = ""

    @property
    def ok(self):
        return not self.error


@dataclass
class SweepResult:
    rows: list
    knee: Optional[float] = None

    @property
    def failed(self):
        return [r for r in self.rows if not r.ok]

    def best(self, key="residual"):
        good = [r for r in self.rows if r.ok and np.isfinite(getattr(r, key))]
        return min(good, key=lambda r: abs(getattr(r, key))) if good else None


def _sweep_row(args):
    problem, q, defect_horizon = args
    row = SweepRow(T=q.T, what=q.what_boundary)
    try:
        pt = solve_point(problem, q)
        row.residual = abs(pt.residual) if pt.residual is not None else np.nan
        row.bvp_residual = pt.bvp_residual
        row.n_nodes, row.newton_iterations, row.reembeds = pt.n_nodes, pt.newton_iterations, pt.reembeds
        row.y, row.x = pt.y.tolist(), pt.x.tolist()
        if defect_horizon:
            row.defect = pullback_defect(problem, pt, defect_horizon)
    except InertialBvpError as exc:
        row.error = f"{type(exc).__name__}: {exc}"
    return row


def knee_T(Ts, values, threshold=0.1):
    """First ``T`` after which the relative improvement per unit ``T`` drops below ``threshold``."""
    Ts = np.asarray(Ts, dtype=float)
    v = np.abs(np.asarray(values, dtype=float))
    for k in range(len(Ts) - 1):
        if not (np.isfinite(v[k]) and np.isfinite(v[k + 1])) or v[k] == 0:
            continue
        rate = (v[k] - v[k + 1]) / v[k] / (Ts[k + 1] - Ts[k])
        if rate < threshold:
            return float(Ts[k])
    return None


def _run_rows(jobs, workers):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_row, jobs))
    return [_sweep_row(j) for j in jobs]


def sweep_T(problem, base: ManifoldQuery, Ts, defect_horizon=None, workers=1, threshold=0.1):
    """One manifold point per horizon in ``Ts``; failures are recorded per row.

    Without a problem residual metric the pullback defect is used
    (``defect_horizon`` defaults to 0.1 then).
    """
    Ts = [float(T) for T in Ts]
    if not Ts:
        raise InputError("empty T grid")
    if not problem.has_residual and not defect_horizon:
        defect_horizon = 0.1
    rows = _run_rows([(problem, replace(base, T=T), defect_horizon) for T in Ts], workers)
    key = "residual" if problem.has_residual else "defect"
    return SweepResult(rows=rows, knee=knee_T(Ts, [getattr(r, key) for r in rows], threshold))


def sweep_what(problem, base: ManifoldQuery, whats, defect_horizon=None, workers=1):
    """Same as :func:`sweep_T` but varying the reflector boundary data."""
    whats = [tuple(tuple(np.atleast_1d(np.asarray(w, dtype=float)).tolist()) for w in wb) for wb in whats]
    if not whats:
        raise InputError("empty what grid")
    rows = _run_rows([(problem, replace(base, what_boundary=w), defect_horizon) for w in whats], workers)
    return SweepResult(rows=rows)


def pullback_defect(problem, point: ManifoldPoint, horizon, rtol=1e-9, atol=1e-12):
    """Distance between the evolved point and a fresh manifold point at ``t + horizon``.

    The full system is integrated from ``point.u``; a new BVP is solved at the
    later time whose slow part matches the evolved state; the result is the
    norm of the difference of their fast parts in the new frame.
    """
    if not horizon > 0:
        raise InputError("horizon must be positive")
    t1 = point.t + horizon
    sol = ode_ivp.integrate(ode_ivp.IvpSpec(rhs=problem.rhs, t0=point.t, t1=t1, y0=point.u,
                                            rtol=rtol, atol=atol))
    u1 = sol.y[-1]
    q = replace(point.query, t=t1, y0=None, u_fix=None, u_target=tuple(u1.tolist()))
    fresh = solve_point(problem, q)
    x_evolved = hh.frame_T(fresh.stack.what, u1)[q.p:]
    return float(np.linalg.norm(x_evolved - fresh.x))


# --- time stepping ------------------------------------------------------------

@dataclass
class TrajectoryResult:
    t: np.ndarray
    y: np.ndarray
    x: np.ndarray
    u: np.ndarray
    residual: np.ndarray
    bvp_residual: np.ndarray
    scheme: str
    order: int
    solves: int                 # all BVP solves, seed included
    solves_after_startup: int   # solves made in steps n >= order - 1
    error: str = ""             # why the march stopped early, if it did

    @property
    def complete(self):
        return not self.error

    def rows(self):
        for k in range(self.t.size):
            yield self.t[k], self.y[k], self.x[k], self.residual[k]


def _scheme_order(scheme):
    s = str(scheme).lower()
    if s == "euler":
        return 1
    if s.startswith("ab") and s[2:].isdigit() and int(s[2:]) in AB_COEFFS:
        return int(s[2:])
    raise InputError(f"unknown scheme {scheme!r}; use 'euler' or 'ab1'..'ab4'")


def manifold_trajectory(problem, q: ManifoldQuery, dt, N, scheme="euler"):
    """March the reduced slow equation with one BVP solve per step.

    The seed point comes from ``q`` (any slow-part mode). Step ``n`` uses the
    slow right-hand side read off the BVP solution at ``t_n``; the next BVP is
    warm-started from the previous solution shifted by ``dt``. An
    Adams-Bashforth method of order ``k`` starts with orders ``1..k-1``.
    A failed solve after the seed ends the march; the points reached so far
    are returned with ``error`` set.
    """
    if not dt > 0:
        raise InputError("dt must be positive")
    if N < 0:
        raise InputError("N must be nonnegative")
    k = _scheme_order(scheme)
    pt = solve_point(problem, q)
    solves, after = 1, 0
    pts = [pt]
    g = [pt.slow_rhs]
    y = pt.y.copy()
    error = ""
    for n in range(N):
        order = min(k, n + 1)
        y = y + dt * sum(c * g[-1 - j] for j, c in enumerate(AB_COEFFS[order]))
        prev = pt.solution
        guess = (prev.t + dt, prev.Y.copy(), list(prev.labels))
        tn = q.t + (n + 1) * dt
        qn = replace(q, t=tn, y0=tuple(y.tolist()), u_fix=None, u_target=None)
        solves += 1
        if n >= k - 1:
            after += 1
        try:
            pt = solve_point(problem, qn, guess=guess)
        except InertialBvpError as exc:
            error = f"step {n + 1} (t={tn:.6g}): {type(exc).__name__}: {exc}"
            break
        pts.append(pt)
        g.append(pt.slow_rhs)
        g = g[-k:]
    nan = np.nan
    return TrajectoryResult(
        t=np.array([p_.t for p_ in pts]), y=np.array([p_.y for p_ in pts]),
        x=np.array([p_.x for p_ in pts]), u=np.array([p_.u for p_ in pts]),
        residual=np.array([nan if p_.residual is None else p_.residual for p_ in pts]),
        bvp_residual=np.array([p_.bvp_residual for p_ in pts]),
        scheme=str(scheme).lower(), order=k, solves=solves, solves_after_startup=after, error=error)


# --- forward decoupling -------------------------------------------------------

@dataclass
class DecoupleRun:
    t: np.ndarray
    whats: list            # per accepted time, list of reflector coordinates
    sigma: list            # per accepted time, chart label
    blocks: list           # per accepted time, (t, BlockD)
    diag_average: np.ndarray
    events: list
    u: Optional[np.ndarray] = None


def decouple(coeff, d, p, t0, t1, what0=None, u0=None, rtol=1e-8, atol=1e-10, max_step=np.inf):
    """Integrate the reflector ODEs forward and collect ``D`` along the way.

    ``coeff`` is either a callable ``C(t)`` or a problem, in which case ``u0``
    is required and ``C = f'(u(t), t)`` along the solution. The time average
    of ``diag(D)`` is accumulated inside the integration.
    """
    if not 0 < p < d:
        raise InputError(f"need 0 < p < d, got p={p}, d={d}")
    nonlinear = hasattr(coeff, "jacobian")
    if nonlinear and u0 is None:
        raise InputError("a problem needs an initial state u0")
    stack0 = (hh.ReflectorStack.zeros(d, p) if what0 is None
              else hh.ReflectorStack.from_boundary(d, [np.asarray(w, dtype=float) for w in what0]))
    nu = d if nonlinear else 0
    sizes = [d - i - 1 for i in range(p)]
    offs = np.concatenate([[nu], nu + np.cumsum(sizes)])

    def split(y):
        return [y[offs[i]:offs[i + 1]] for i in range(p)]

    def Cof(t, y):
        return coeff.jacobian(t, y[:nu]) if nonlinear else np.asarray(coeff(t), dtype=float)

    def rhs(t, y):
        whats = split(y)
        dwhats, D = hh.sweep(whats, Cof(t, y))
        du = [coeff.rhs(t, y[:nu])] if nonlinear else []
        return np.concatenate(du + dwhats + [np.diag(D)])

    labels = []
    state = {"label": tuple(stack0.sigma)}

    def hook(t, y):
        whats = split(y)
        if all(float(w @ w) <= 1.0 for w in whats):
            labels.append(state["label"])
            return y, None
        new, _, flips = hh.stabilize_whats(whats)
        state["label"] = tuple(-s if f else s for s, f in zip(state["label"], flips))
        labels.append(state["label"])
        y = y.copy()
        y[offs[0]:offs[-1]] = np.concatenate(new)
        return y, tuple(flips)

    start = np.concatenate(([np.asarray(u0, dtype=float)] if nonlinear else []) + list(stack0.what) + [np.zeros(d)])
    sol = ode_ivp.integrate(ode_ivp.IvpSpec(rhs=rhs, t0=t0, t1=t1, y0=start, rtol=rtol, atol=atol,
                                            hook=hook, max_step=max_step))
    whats_hist, blocks = [], []
    for k, tk in enumerate(sol.t):
        whats = [w.copy() for w in split(sol.y[k])]
        st = hh.ReflectorStack.raw(d, whats, labels[k])
        blocks.append((float(tk), hh.assemble_D(st, Cof(tk, sol.y[k]))))
        whats_hist.append(whats)
    return DecoupleRun(t=sol.t, whats=whats_hist, sigma=labels, blocks=blocks,
                       diag_average=sol.y[-1, offs[-1]:] / (t1 - t0),
                       events=[(e.t, e.info) for e in sol.events],
                       u=sol.y[:, :nu] if nonlinear else None)
