"""Gap constants, the truncation-error bound and the horizon it implies.

Also holds the linear stable-manifold harness used to check the bound's
rate: for ``y' = B y + G x``, ``x' = A x`` with diagonal ``A`` and ``B`` the
bounded-forward solution through ``x(t0) = x0`` is known in closed form, and
its truncation (``y(T) = 0``) can be solved as a BVP and compared with it.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import GapViolationError, InputError
from . import ode_bvp


@dataclass(frozen=True)
class GapData:
    """Constants ``K, alpha, beta, L`` and the weight ``sigma`` (default midpoint)."""

    K: float
    alpha: float
    beta: float
    L: float
    sigma: float = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.K >= 1.0:
            raise InputError(f"K must be >= 1, got {self.K}")
        if not self.alpha < self.beta:
            raise InputError(f"need alpha < beta, got alpha={self.alpha}, beta={self.beta}")
        if self.L < 0:
            raise InputError("L must be nonnegative")
        if self.sigma is None:
            object.__setattr__(self, "sigma", 0.5 * (self.alpha + self.beta))
        elif not self.alpha < self.sigma < self.beta:
            raise InputError("sigma must lie strictly between alpha and beta")

    @property
    def kappa(self):
        KL = self.K * self.L
        return max(KL / (self.sigma - self.alpha), KL / (self.beta - self.sigma))

    @property
    def gap_ok(self):
        """Whether ``L < (beta - alpha) / (2 K)`` and ``kappa < 1``."""
        return self.L < (self.beta - self.alpha) / (2 * self.K) and self.kappa < 1.0

    @property
    def C(self):
        k = self.kappa
        if k >= 1.0:
            raise GapViolationError(f"kappa = {k:.6g} >= 1: spectral gap too small for the bound")
        return np.exp(k) * k / (1.0 - k)

    def as_dict(self):
        out = {"K": self.K, "alpha": self.alpha, "beta": self.beta, "L": self.L,
               "sigma": self.sigma, "kappa": self.kappa, "gap_ok": self.gap_ok,
               "provenance": dict(self.provenance)}
        if self.kappa < 1.0:
            out["C"] = self.C
        return out


def truncation_bound(g: GapData, x0_norm, t0, T):
    """``C ||x0|| exp((alpha - sigma)(T - t0))``; vectorized over ``T``."""
    if x0_norm < 0:
        raise InputError("x0_norm must be nonnegative")
    return g.C * x0_norm * np.exp((g.alpha - g.sigma) * (np.asarray(T, dtype=float) - t0))


def t_lower_bound(g: GapData, tol, x0_norm, t0=0.0):
    """Smallest ``T`` for which :func:`truncation_bound` is at most ``tol``."""
    if tol <= 0:
        raise InputError("tol must be positive")
    if x0_norm < 0:
        raise InputError("x0_norm must be nonnegative")
    C = g.C
    if x0_norm == 0.0:
        return float(t0)
    ratio = tol / (C * x0_norm)
    if ratio >= 1.0:
        return float(t0)
    return float(t0 + np.log(ratio) / (g.alpha - g.sigma))


# --- linear stable-manifold harness ------------------------------------------

def _diag_blocks(problem):
    B, A, G = problem._B, problem._A, problem._G
    if not (np.allclose(B, np.diag(np.diag(B))) and np.allclose(A, np.diag(np.diag(A)))):
        raise InputError("closed form needs diagonal A and B blocks")
    if problem.eps != 0.0:
        raise InputError("closed form needs the nonlinear switch off (eps = 0)")
    return np.diag(B), np.diag(A), G


def stable_manifold_exact(problem, x0, t0, t):
    """Bounded-forward solution ``(y, x)`` through ``x(t0) = x0`` at times ``t``."""
    b, a, G = _diag_blocks(problem)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x0 = np.asarray(x0, dtype=float)
    ex = np.exp(np.outer(t - t0, a)) * x0                      # (m, q)
    y = -ex @ (G / (b[:, None] - a[None, :])).T                # (m, p)
    return y, ex


def stable_manifold_truncated(problem, x0, t0, T, tol=1e-9, nodes=41):
    """Solve the truncated problem ``x(t0) = x0``, ``y(T) = 0`` by collocation."""
    M = problem._M
    p = problem.p
    x0 = np.asarray(x0, dtype=float)

    def fun(t, Y):
        return Y @ M.T

    def bc(ya, yb):
        return np.concatenate([ya[p:] - x0, yb[:p]])

    mesh = np.linspace(t0, T, nodes)
    guess = np.zeros((nodes, problem.dim))
    _, ex = stable_manifold_exact(problem, x0, t0, mesh)
    guess[:, p:] = ex
    return ode_bvp.solve(ode_bvp.BvpSpec(fun=fun, bc=bc, mesh=mesh, guess=guess, tol=tol,
                                         bc_tol=tol))


def weighted_error(problem, x0, t0, T, sigma, tol=1e-9, samples=401):
    """``sup_{t0<=t<=T} exp(-sigma (t - t0)) |phi(t) - phi_T(t)|`` on a sample grid."""
    sol = stable_manifold_truncated(problem, x0, t0, T, tol=tol)
    ts = np.linspace(t0, T, samples)
    num = np.array([sol.sample(t)[0] for t in ts])
    y, x = stable_manifold_exact(problem, x0, t0, ts)
    diff = np.linalg.norm(num - np.concatenate([y, x], axis=1), axis=1)
    return float(np.max(np.exp(-sigma * (ts - t0)) * diff))


def estimate_gapdata(samples, p, lipschitz=None, K=1.0):
    """Heuristic ``GapData`` from a decoupled trajectory.

    ``samples`` is a sequence of ``(t, BlockD)`` pairs (or an object with a
    ``blocks`` attribute holding them). ``beta`` is the smallest time-averaged
    diagonal entry of the leading block, ``alpha`` the largest real part of
    the time-averaged trailing block. ``lipschitz`` is a sampled Lipschitz
    constant of the rotated nonlinearity (0 if omitted).
    """
    samples = list(getattr(samples, "blocks", samples))
    if not samples:
        raise InputError("empty trajectory sample")
    ts = np.array([s[0] for s in samples], dtype=float)
    D11 = np.array([np.diag(s[1].D11) for s in samples])
    D22 = np.array([s[1].D22 for s in samples])
    if len(ts) > 1 and ts[-1] != ts[0]:
        span = ts[-1] - ts[0]
        avg11 = np.trapezoid(D11, ts, axis=0) / span
        avg22 = np.trapezoid(D22, ts, axis=0) / span
    else:
        avg11, avg22 = D11.mean(axis=0), D22.mean(axis=0)
    beta = float(avg11.min()) if p else np.inf
    alpha = float(np.linalg.eigvals(avg22).real.max())
    flags = {"alpha": "estimated", "beta": "estimated", "K": "default"}
    L = 0.0
    if lipschitz is not None:
        L = float(lipschitz)
        flags["L"] = "estimated"
    else:
        flags["L"] = "assumed-zero"
    if alpha >= beta:
        raise InputError(f"no gap in the sample: alpha={alpha:.4g} >= beta={beta:.4g}")
    return GapData(K=float(K), alpha=alpha, beta=beta, L=L, provenance=flags)


def sampled_lipschitz(problem, states, t=0.0, radius=1e-3, n_dirs=8, seed=0):
    """Largest finite-difference ratio ``|N(u+h) - N(u)| / |h|`` over sample states.

    ``N`` is the nonlinearity relative to the Jacobian at each sample state.
    """
    rng = np.random.default_rng(seed)
    best = 0.0
    for u in np.atleast_2d(states):
        C = problem.jacobian(t, u)
        N0 = problem.nonlinearity(t, u, C)
        for _ in range(n_dirs):
            h = rng.normal(size=u.size)
            h *= radius * max(1.0, np.linalg.norm(u)) / np.linalg.norm(h)
            N1 = problem.nonlinearity(t, u + h, C)
            best = max(best, np.linalg.norm(N1 - N0) / np.linalg.norm(h))
    return float(best)
