"""Built-in test problems.

Every problem is an immutable object with batch-first ``rhs(t, u)`` and
``jacobian(t, u)`` (``u`` of shape ``(..., d)``). Problems are plain classes
so they pickle into worker processes.
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InputError


def fd_jacobian(rhs, t, u, step=1e-6):
    """Central-difference Jacobian of ``rhs`` at a single state ``u``."""
    u = np.asarray(u, dtype=float)
    d = u.size
    J = np.empty((d, d))
    for j in range(d):
        h = step * max(1.0, abs(u[j]))
        up, um = u.copy(), u.copy()
        up[j] += h
        um[j] -= h
        J[:, j] = (rhs(t, up) - rhs(t, um)) / (2 * h)
    return J


class Problem:
    """Base class: ``u' = f(u, t)`` split as ``C(t) u + N(u, t)``."""

    name = "problem"
    dim = 0
    autonomous = False

    def rhs(self, t, u):
        raise NotImplementedError

    def jacobian(self, t, u):
        u = np.asarray(u, dtype=float)
        if u.ndim == 1:
            return fd_jacobian(self.rhs, t, u)
        flat = u.reshape(-1, u.shape[-1])
        tt = np.broadcast_to(t, u.shape[:-1]).ravel()
        return np.array([fd_jacobian(self.rhs, ti, ui) for ti, ui in zip(tt, flat)]).reshape(
            u.shape + (u.shape[-1],))

    def anchor(self, t):
        """Reference state the linear part is taken about (the origin by default)."""
        return np.zeros(np.shape(t) + (self.dim,))

    def linear_part(self, t):
        """``C(t) = f'(anchor(t), t)``, batched over ``t``."""
        if self.autonomous:
            C = self.__dict__.get("_C0")
            if C is None:
                C = self.jacobian(0.0, self.anchor(0.0))
                object.__setattr__(self, "_C0", C)
            return np.broadcast_to(C, np.shape(t) + C.shape)
        return self.jacobian(t, self.anchor(t))

    def nonlinearity(self, t, u, C):
        """``N(u, t) = f(u, t) - C u`` for a frozen linear part ``C``."""
        return self.rhs(t, u) - np.einsum("...ij,...j->...i", C, u)

    def manifold_residual(self, t, u):
        return None

    @property
    def has_residual(self):
        return False

    def params(self):
        return {}

    def describe(self):
        return {"name": self.name, "dim": self.dim, **self.params()}


@dataclass(frozen=True)
class Rotating2D(Problem):
    """Two-dimensional nonautonomous test problem in rotating coordinates.

    With ``a = v cos t - w sin t`` and ``b = v sin t + w cos t`` the system is
    ``a' = -a b``, ``b' = -b + a^2 - 2 b^2 + sigma cos t``, whose slow manifold
    is close to ``b = a^2 + sigma (cos t + sin t) / 2``.
    """

    sigma: float = 0.1
    name = "rotating_2d"
    dim = 2

    def _ab(self, t, u):
        c, s = np.cos(t), np.sin(t)
        v, w = u[..., 0], u[..., 1]
        return v * c - w * s, v * s + w * c, c, s

    def rhs(self, t, u):
        u = np.asarray(u, dtype=float)
        a, b, c, s = self._ab(t, u)
        g = -b + a * a - 2 * b * b + self.sigma * c
        ab = a * b
        return np.stack([u[..., 1] - ab * c + g * s, -u[..., 0] + ab * s + g * c], axis=-1)

    def jacobian(self, t, u):
        u = np.asarray(u, dtype=float)
        a, b, c, s = self._ab(t, u)
        dab_v = b * c + a * s
        dab_w = -b * s + a * c
        dg_v = -s + 2 * a * c - 4 * b * s
        dg_w = -c - 2 * a * s - 4 * b * c
        J = np.empty(u.shape + (2,))
        J[..., 0, 0] = -c * dab_v + s * dg_v
        J[..., 0, 1] = 1 - c * dab_w + s * dg_w
        J[..., 1, 0] = -1 + s * dab_v + c * dg_v
        J[..., 1, 1] = s * dab_w + c * dg_w
        return J

    def manifold_residual(self, t, u):
        u = np.asarray(u, dtype=float)
        a, b, c, s = self._ab(t, u)
        return b - a * a - 0.5 * self.sigma * (c + s)

    @property
    def has_residual(self):
        return True

    def params(self):
        return {"sigma": self.sigma}


def _kse_tensor(n):
    # N_k = (k/2) sum_{j+l=k} a_j a_l - k sum_l a_l a_{l+k}, modes 1..n
    T = np.zeros((n, n, n))
    for k in range(1, n + 1):
        for j in range(1, k):
            T[k - 1, j - 1, k - j - 1] += 0.5 * k
        for l in range(1, n - k + 1):
            T[k - 1, l - 1, l + k - 1] -= 0.5 * k
            T[k - 1, l + k - 1, l - 1] -= 0.5 * k
    return T


@dataclass(frozen=True)
class KSEGalerkin(Problem):
    """Sine-Galerkin truncation of ``w_s = (w^2)_y - w_yy - xi w_yyyy``.

    ``w(s, y) = sum_{k=1}^n a_k(s) sin(k y)`` (odd, 2 pi periodic).
    """

    n_modes: int = 15
    xi: float = 0.02991
    name = "kse_galerkin"
    autonomous = True

    def __post_init__(self):
        if self.n_modes < 1:
            raise InputError("n_modes must be >= 1")
        k = np.arange(1, self.n_modes + 1, dtype=float)
        object.__setattr__(self, "_lin", k ** 2 - self.xi * k ** 4)
        object.__setattr__(self, "_T", _kse_tensor(self.n_modes))

    @property
    def dim(self):
        return self.n_modes

    @property
    def theta(self):
        return 4.0 / self.xi

    def quadratic(self, a):
        return np.einsum("kjl,...j,...l->...k", self._T, a, a)

    def rhs(self, t, u):
        u = np.asarray(u, dtype=float)
        return self._lin * u + self.quadratic(u)

    def jacobian(self, t, u):
        u = np.asarray(u, dtype=float)
        J = np.einsum("kjl,...l->...kj", self._T + self._T.transpose(0, 2, 1), u)
        J[..., np.arange(self.dim), np.arange(self.dim)] += self._lin
        return J

    def to_original_frame(self, s, a):
        """Map ``(s, a)`` to the unscaled KSE variables: ``tau = xi s / 4``, ``u~ = -2 w``."""
        return self.xi * np.asarray(s) / 4.0, -2.0 * np.asarray(a)

    def from_original_frame(self, tau, coeffs):
        return 4.0 * np.asarray(tau) / self.xi, -0.5 * np.asarray(coeffs)

    def params(self):
        return {"n_modes": self.n_modes, "xi": self.xi}


@dataclass(frozen=True)
class TwoLayerLorenz(Problem):
    """Two-scale Lorenz-96 system.

    State ordering: ``x_1..x_K`` then ``y_{1,1}, y_{2,1}, .., y_{J,1}, y_{1,2}, ..``
    (the fast index ``j`` runs fastest). Both layers are cyclic; ``j`` wraps
    within each ``k``.
    """

    K: int = 5
    J: int = 4
    eps: float = 0.5
    h_x: float = -1.0
    h_y: float = 1.0
    F: float = 8.0
    name = "two_layer_lorenz"
    autonomous = True

    @property
    def dim(self):
        return self.K + self.J * self.K

    def _split(self, u):
        x = u[..., :self.K]
        y = u[..., self.K:].reshape(u.shape[:-1] + (self.K, self.J))
        return x, y

    def rhs(self, t, u):
        u = np.asarray(u, dtype=float)
        x, y = self._split(u)
        z = self.h_x / self.J * y.sum(axis=-1)
        dx = (np.roll(x, 1, -1) * (np.roll(x, -1, -1) - np.roll(x, 2, -1)) - x + self.F + z)
        yp1, ym1, yp2 = np.roll(y, -1, -1), np.roll(y, 1, -1), np.roll(y, -2, -1)
        dy = (yp1 * (ym1 - yp2) - y + self.h_y * x[..., None]) / self.eps
        return np.concatenate([dx, dy.reshape(u.shape[:-1] + (self.K * self.J,))], axis=-1)

    def jacobian(self, t, u):
        u = np.asarray(u, dtype=float)
        K, Jn = self.K, self.J
        x, y = self._split(u)
        Jac = np.zeros(u.shape + (self.dim,))
        for k in range(K):
            km1, kp1, km2 = (k - 1) % K, (k + 1) % K, (k - 2) % K
            Jac[..., k, km1] += x[..., kp1] - x[..., km2]
            Jac[..., k, kp1] += x[..., km1]
            Jac[..., k, km2] -= x[..., km1]
            Jac[..., k, k] -= 1.0
            for j in range(Jn):
                Jac[..., k, K + k * Jn + j] += self.h_x / Jn
            for j in range(Jn):
                r = K + k * Jn + j
                jp1, jm1, jp2 = (j + 1) % Jn, (j - 1) % Jn, (j + 2) % Jn
                Jac[..., r, K + k * Jn + jp1] += (y[..., k, jm1] - y[..., k, jp2]) / self.eps
                Jac[..., r, K + k * Jn + jm1] += y[..., k, jp1] / self.eps
                Jac[..., r, K + k * Jn + jp2] -= y[..., k, jp1] / self.eps
                Jac[..., r, r] -= 1.0 / self.eps
                Jac[..., r, k] += self.h_y / self.eps
        return Jac

    def params(self):
        return {"K": self.K, "J": self.J, "eps": self.eps, "h_x": self.h_x,
                "h_y": self.h_y, "F": self.F}


@dataclass(frozen=True)
class LinearBenchmark(Problem):
    """Block-triangular test system with known gap constants and manifold.

    ``u = (y; x)``, ``y' = B y + coupling x + eps sin(y)``,
    ``x' = A x + eps sin(x)``. The slow block ``B`` comes first. ``x = 0`` is
    invariant for every ``eps``, so the inertial manifold is ``x = 0``.
    """

    B_block: tuple
    A_block: tuple
    coupling: tuple
    eps: float = 0.0
    name = "linear_benchmark"
    autonomous = True

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B_block, dtype=float))
        A = np.atleast_2d(np.asarray(self.A_block, dtype=float))
        G = np.asarray(self.coupling, dtype=float).reshape(B.shape[0], A.shape[0])
        M = np.block([[B, G], [np.zeros((A.shape[0], B.shape[0])), A]])
        object.__setattr__(self, "_M", M)
        object.__setattr__(self, "_B", B)
        object.__setattr__(self, "_A", A)
        object.__setattr__(self, "_G", G)

    @classmethod
    def build(cls, B, A, coupling, eps=0.0):
        tup = lambda m: tuple(map(tuple, np.atleast_2d(np.asarray(m, dtype=float))))
        return cls(B_block=tup(B), A_block=tup(A), coupling=tup(coupling), eps=float(eps))

    @property
    def dim(self):
        return self._M.shape[0]

    @property
    def p(self):
        return self._B.shape[0]

    def rhs(self, t, u):
        u = np.asarray(u, dtype=float)
        return np.einsum("ij,...j->...i", self._M, u) + self.eps * np.sin(u)

    def jacobian(self, t, u):
        u = np.asarray(u, dtype=float)
        J = np.broadcast_to(self._M, u.shape + (self.dim,)).copy()
        J[..., np.arange(self.dim), np.arange(self.dim)] += self.eps * np.cos(u)
        return J

    def manifold_residual(self, t, u):
        u = np.asarray(u, dtype=float)
        return np.linalg.norm(u[..., self.p:], axis=-1)

    @property
    def has_residual(self):
        return True

    def gap_data(self):
        """Exact ``(K, alpha, beta, L)`` for normal blocks; ``K`` is sampled otherwise."""
        from .bounds import GapData

        lamA = np.linalg.eigvals(self._A).real
        lamB = np.linalg.eigvals(self._B).real
        alpha, beta = float(lamA.max()), float(lamB.min())
        normal = all(np.allclose(X @ X.T, X.T @ X) for X in (self._A, self._B))
        if normal:
            K, flags = 1.0, {}
        else:
            from scipy.linalg import expm

            taus = np.linspace(0.0, 20.0, 401)
            KA = max(np.linalg.norm(expm(self._A * s), 2) * np.exp(-alpha * s) for s in taus)
            KB = max(np.linalg.norm(expm(-self._B * s), 2) * np.exp(beta * s) for s in taus)
            K, flags = float(max(KA, KB, 1.0)), {"K": "sampled"}
        L = float(np.linalg.norm(self._G, 2) + abs(self.eps))
        return GapData(K=K, alpha=alpha, beta=beta, L=L, provenance=flags)

    def params(self):
        return {"B_block": [list(r) for r in self.B_block], "A_block": [list(r) for r in self.A_block],
                "coupling": [list(r) for r in self.coupling], "eps": self.eps}


def rotating_2d(sigma=0.1):
    return Rotating2D(sigma=sigma)


def kse_galerkin(n_modes=15, xi=0.02991):
    return KSEGalerkin(n_modes=n_modes, xi=xi)


def two_layer_lorenz(K=5, J=4, eps=0.5, h_x=-1.0, h_y=1.0, F=8.0):
    return TwoLayerLorenz(K=K, J=J, eps=eps, h_x=h_x, h_y=h_y, F=F)


def linear_benchmark(B_block, A_block, coupling, eps=0.0):
    return LinearBenchmark.build(B_block, A_block, coupling, eps)


REGISTRY = {
    "rotating_2d": rotating_2d,
    "kse_galerkin": kse_galerkin,
    "two_layer_lorenz": two_layer_lorenz,
    "linear_benchmark": linear_benchmark,
}


def make_problem(name, **params):
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise InputError(f"unknown problem {name!r}; choose from {sorted(REGISTRY)}") from None
    return factory(**params)
