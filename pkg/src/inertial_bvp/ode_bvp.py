"""Two-point BVP solver: 3-stage Lobatto IIIA collocation with damped Newton.

The scheme is the one behind MATLAB's bvp4c and scipy's ``solve_bvp``: a C1
cubic interpolant per subinterval, collocated at both ends and the midpoint.
Two additions over a plain solver:

* node charts -- every mesh node carries an opaque ``label`` naming the
  coordinate chart its values are written in. Adjacent nodes with different
  labels are compared through ``transfer``, so a solution may switch charts
  mid-interval without a jump in the collocation equations.
* a post-convergence ``hook`` that may rewrite node values (and labels). Any
  rewrite sends the iterate back through Newton, until a pass with no
  rewrite or ``max_rewrites`` rounds.

Callables use batch-first arrays: ``fun(t[m], Y[m, n]) -> [m, n]``,
``bc(ya[n], yb[n]) -> [n]``, ``transfer(t[k], Y[k, n], src, dst) -> [k, n]``,
``hook(t[m], Y[m, n], labels) -> (Y, labels, events)``.
"""
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import splu

from .errors import ConditioningError, ConvergenceError, InputError, RefinementError

_EPS = np.finfo(float).eps
# interior 5-point Lobatto abscissae on [0, 1]; the endpoints and midpoint
# are collocation points, so the defect vanishes there by construction
_DEFECT_NODES = np.array([0.5 - np.sqrt(21) / 14, 0.5 + np.sqrt(21) / 14])


@dataclass
class BvpSpec:
    fun: Callable
    bc: Callable
    mesh: np.ndarray
    guess: np.ndarray
    tol: float = 1e-3
    hook: Optional[Callable] = None
    transfer: Optional[Callable] = None
    labels: Optional[list] = None
    max_nodes: int = 2000
    max_newton: int = 40
    max_backtracks: int = 12
    max_rewrites: int = 10
    bc_tol: Optional[float] = None


@dataclass
class BvpSolution:
    t: np.ndarray
    Y: np.ndarray
    labels: list
    residuals: np.ndarray
    bc_residual: float
    newton_iterations: list
    events: list = field(default_factory=list)
    rewrite_rounds: int = 0
    fun: Optional[Callable] = None
    transfer: Optional[Callable] = None

    @property
    def max_residual(self):
        return float(np.max(self.residuals)) if self.residuals.size else 0.0

    def interval(self, t):
        k = int(np.searchsorted(self.t, t, side="right")) - 1
        return min(max(k, 0), len(self.t) - 2)

    def sample(self, t):
        """Evaluate the C1 cubic interpolant at ``t``; returns ``(y, label)``.

        The value is written in the chart of the interval's left node, except
        at a mesh node, where the node's own value and label are returned.
        """
        if not self.t[0] <= t <= self.t[-1]:
            raise InputError(f"t={t!r} outside solution span")
        hit = np.nonzero(self.t == t)[0]
        if hit.size:
            k = int(hit[-1])
            return self.Y[k].copy(), self.labels[k]
        k = self.interval(t)
        ya, yb = _interval_ends(self, k)
        fa = self.fun(self.t[k:k + 1], ya[None])[0]
        fb = self.fun(self.t[k + 1:k + 2], yb[None])[0]
        h = self.t[k + 1] - self.t[k]
        s = (t - self.t[k]) / h
        return _hermite(ya, yb, fa, fb, h, np.array([s]))[0][0], self.labels[k]


def _interval_ends(sol, k):
    ya, yb = sol.Y[k], sol.Y[k + 1]
    if sol.labels[k + 1] != sol.labels[k]:
        yb = sol.transfer(sol.t[k + 1:k + 2], yb[None], sol.labels[k + 1], sol.labels[k])[0]
    return ya, yb


def _hermite(ya, yb, fa, fb, h, s):
    """Cubic Hermite value and derivative at fractions ``s`` of each interval.

    ``ya`` etc. have shape ``(..., n)``; ``h`` broadcasts against the leading
    axes; ``s`` is 1-D. Returns arrays of shape ``(len(s), ..., n)``.
    """
    s = s.reshape((-1,) + (1,) * ya.ndim)
    h = np.asarray(h)[..., None]
    h00 = 2 * s ** 3 - 3 * s ** 2 + 1
    h10 = s ** 3 - 2 * s ** 2 + s
    h01 = -2 * s ** 3 + 3 * s ** 2
    h11 = s ** 3 - s ** 2
    val = h00 * ya + h10 * h * fa + h01 * yb + h11 * h * fb
    d00 = 6 * s ** 2 - 6 * s
    d10 = 3 * s ** 2 - 4 * s + 1
    d01 = -d00
    d11 = 3 * s ** 2 - 2 * s
    der = (d00 * ya + d01 * yb) / h + d10 * fa + d11 * fb
    return val, der


class _Collocation:
    """Residual and Jacobian of the collocation system on a fixed mesh."""

    def __init__(self, spec, t, labels):
        self.fun, self.bc, self.transfer = spec.fun, spec.bc, spec.transfer
        self.t = t
        self.h = np.diff(t)
        self.labels = labels
        self.switch = [k for k in range(len(t) - 1) if labels[k + 1] != labels[k]]
        if self.switch and self.transfer is None:
            raise InputError("mesh labels differ but no transfer map was given")

    def _right_ends(self, Y):
        # Y: (..., m, n) -> right-end values written in each interval's left chart
        Yr = Y[..., 1:, :].copy()
        for k in self.switch:
            Yr[..., k, :] = self.transfer(np.full(Yr.shape[:-2], self.t[k + 1]).ravel(),
                                          Yr[..., k, :].reshape(-1, Y.shape[-1]),
                                          self.labels[k + 1], self.labels[k]).reshape(Yr[..., k, :].shape)
        return Yr

    def _f(self, t, Y):
        shape = Y.shape
        tt = np.broadcast_to(t, shape[:-1]).ravel()
        return np.asarray(self.fun(tt, Y.reshape(-1, shape[-1]))).reshape(shape)

    def collocation(self, Y):
        """Collocation residuals, shape ``(..., m-1, n)``."""
        Yl = Y[..., :-1, :]
        Yr = self._right_ends(Y)
        F = self._f(self.t, Y)
        Fl = F[..., :-1, :]
        Fr = F[..., 1:, :].copy()
        if self.switch:
            idx = np.array(self.switch)
            Fr[..., idx, :] = self._f(self.t[idx + 1], Yr[..., idx, :])
        h = self.h[:, None]
        Ym = 0.5 * (Yl + Yr) - h / 8 * (Fr - Fl)
        Fm = self._f(self.t[:-1] + 0.5 * self.h, Ym)
        return Yr - Yl - h / 6 * (Fl + 4 * Fm + Fr)

    def residual(self, Y):
        col = self.collocation(Y)
        bc = np.asarray(self.bc(Y[0], Y[-1]), dtype=float)
        if bc.shape != (Y.shape[1],):
            raise InputError(f"bc must return {Y.shape[1]} residuals, got shape {bc.shape}")
        return np.concatenate([col.ravel(), bc])

    def jacobian(self, Y):
        m, n = Y.shape
        base = self.collocation(Y)
        step = np.sqrt(_EPS) * np.maximum(1.0, np.abs(Y))
        rows, cols, vals = [], [], []
        # perturb component j at every other node in one batch: each interval
        # then sees exactly one perturbed end
        P = np.broadcast_to(Y, (2, n, m, n)).copy()
        for parity in range(2):
            nodes = np.arange(parity, m, 2)
            for j in range(n):
                P[parity, j, nodes, j] += step[nodes, j]
        dcol = self.collocation(P) - base  # (2, n, m-1, n)
        blk_r, blk_c = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        for k in range(m - 1):
            for node in (k, k + 1):
                parity = node % 2
                block = dcol[parity, :, k, :].T / step[node][None, :]  # rows: residual comp, cols: var
                rows.append(k * n + blk_r.ravel())
                cols.append(node * n + blk_c.ravel())
                vals.append(block.ravel())
        bc0 = np.asarray(self.bc(Y[0], Y[-1]), dtype=float)
        for node in (0, m - 1):
            for j in range(n):
                Yp = Y.copy()
                Yp[node, j] += step[node, j]
                d = (np.asarray(self.bc(Yp[0], Yp[-1]), dtype=float) - bc0) / step[node, j]
                nz = np.nonzero(d)[0]
                rows.append((m - 1) * n + nz)
                cols.append(np.full(nz.size, node * n + j))
                vals.append(d[nz])
        N = m * n
        J = coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(N, N)).tocsc()
        J.sum_duplicates()
        return J

    def defect(self, Y):
        """Scaled max-norm of the interpolant's ODE defect on each interval."""
        Yl = Y[:-1]
        Yr = self._right_ends(Y)
        F = self._f(self.t, Y)
        Fl, Fr = F[:-1], F[1:].copy()
        if self.switch:
            idx = np.array(self.switch)
            Fr[idx] = self._f(self.t[idx + 1], Yr[idx])
        val, der = _hermite(Yl, Yr, Fl, Fr, self.h, _DEFECT_NODES)
        tq = self.t[:-1][None, :] + _DEFECT_NODES[:, None] * self.h[None, :]
        fq = self._f(tq, val)
        r = np.abs(der - fq) / (1.0 + np.abs(fq))
        return r.max(axis=(0, 2))


def _newton(col, Y, spec, log):
    m, n = Y.shape
    R = col.residual(Y)
    if not np.all(np.isfinite(R)):
        raise ConvergenceError("non-finite residual at the initial iterate", residual=np.inf)
    phi = R @ R
    for it in range(1, spec.max_newton + 1):
        J = col.jacobian(Y)
        try:
            lu = splu(J)
            step = lu.solve(-R).reshape(m, n)
        except RuntimeError as exc:
            raise ConditioningError(f"singular collocation Jacobian: {exc}") from exc
        if not np.all(np.isfinite(step)):
            raise ConditioningError("collocation Jacobian solve produced non-finite step")
        lam = 1.0
        for _ in range(spec.max_backtracks):
            Yt = Y + lam * step
            Rt = col.residual(Yt)
            phit = Rt @ Rt if np.all(np.isfinite(Rt)) else np.inf
            # Armijo condition on the merit ||R||^2
            if phit <= (1 - 2e-4 * lam) * phi:
                break
            lam *= 0.5
        else:
            # iterate already at roundoff level: accept it
            if np.max(np.abs(step) / (1.0 + np.abs(Y))) <= 1e-2 * spec.tol:
                log.append(it)
                return Y
            raise ConvergenceError(f"Newton made no progress after {spec.max_backtracks} "
                                   f"damped steps, residual {np.sqrt(phi):.3e}",
                                   residual=float(np.sqrt(phi)))
        Y, R, phi = Yt, Rt, phit
        small = np.max(np.abs(lam * step) / (1.0 + np.abs(Y)))
        if lam == 1.0 and small <= 1e-3 * spec.tol:
            log.append(it)
            return Y
        if np.sqrt(phi) <= 1e-14 * (1.0 + np.max(np.abs(Y))):
            log.append(it)
            return Y
    raise ConvergenceError(f"Newton did not converge in {spec.max_newton} iterations, "
                           f"residual {np.sqrt(phi):.3e}", residual=float(np.sqrt(phi)))


def _refine(col, Y, labels, r, tol, max_nodes):
    """Insert nodes where the defect exceeds ``tol``; growth capped at 2x."""
    t = col.t
    m = len(t)
    bad = np.nonzero(r > tol)[0]
    budget = m
    order = bad[np.argsort(-r[bad])]
    n_new = {}
    for k in order:
        want = 1 if r[k] < 100 * tol else 2
        want = min(want, budget)
        if want <= 0:
            break
        n_new[k] = want
        budget -= want
    if m + sum(n_new.values()) > max_nodes:
        raise RefinementError(f"mesh budget of {max_nodes} nodes exceeded")
    Yr = col._right_ends(Y)
    F = col._f(t, Y)
    Fr = F[1:].copy()
    if col.switch:
        idx = np.array(col.switch)
        Fr[idx] = col._f(t[idx + 1], Yr[idx])
    new_t, new_Y, new_labels = [], [], []
    for k in range(m - 1):
        new_t.append(t[k])
        new_Y.append(Y[k])
        new_labels.append(labels[k])
        q = n_new.get(k, 0)
        if q:
            s = np.arange(1, q + 1) / (q + 1)
            val, _ = _hermite(Y[k], Yr[k], F[k], Fr[k], col.h[k], s)
            for i in range(q):
                new_t.append(t[k] + s[i] * col.h[k])
                new_Y.append(val[i])
                new_labels.append(labels[k])
    new_t.append(t[-1])
    new_Y.append(Y[-1])
    new_labels.append(labels[-1])
    return np.array(new_t), np.array(new_Y), new_labels


def _converge_on_mesh(spec, t, Y, labels, log):
    bc_tol = spec.tol if spec.bc_tol is None else spec.bc_tol
    while True:
        col = _Collocation(spec, t, labels)
        Y = _newton(col, Y, spec, log)
        r = col.defect(Y)
        bc = np.max(np.abs(spec.bc(Y[0], Y[-1])))
        if r.max() <= spec.tol and bc <= bc_tol:
            return t, Y, labels, r, float(bc)
        t, Y, labels = _refine(col, Y, labels, r, spec.tol, spec.max_nodes)


def solve(spec: BvpSpec) -> BvpSolution:
    t = np.asarray(spec.mesh, dtype=float)
    Y = np.array(spec.guess, dtype=float)
    if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0):
        raise InputError("mesh must be strictly increasing with at least two nodes")
    if Y.ndim != 2 or Y.shape[0] != t.size:
        raise InputError(f"guess must have shape (len(mesh), n), got {Y.shape}")
    if not np.all(np.isfinite(Y)):
        raise InputError("initial guess is not finite")
    labels = list(spec.labels) if spec.labels is not None else [None] * t.size
    if len(labels) != t.size:
        raise InputError("one label per mesh node required")

    log, events = [], []
    rounds = 0
    while True:
        t, Y, labels, r, bc = _converge_on_mesh(spec, t, Y, labels, log)
        if spec.hook is None:
            break
        Y2, labels2, ev = spec.hook(t, Y, list(labels))
        if not ev:
            break
        rounds += 1
        events.extend(ev)
        if rounds > spec.max_rewrites:
            raise ConvergenceError(f"hook kept rewriting after {spec.max_rewrites} rounds "
                                   f"(cycling between charts)", residual=float(r.max()))
        Y, labels = np.array(Y2, dtype=float), list(labels2)
    return BvpSolution(t=t, Y=Y, labels=labels, residuals=r, bc_residual=bc,
                       newton_iterations=log, events=events, rewrite_rounds=rounds,
                       fun=spec.fun, transfer=spec.transfer)


def residual_estimate(sol: BvpSolution, spec: BvpSpec):
    """Per-interval scaled defect of ``sol``'s interpolant under ``spec.fun``."""
    col = _Collocation(spec, sol.t, sol.labels)
    return col.defect(sol.Y)
