"""Time-dependent Householder frames for decoupling a linear variational part.

The orthogonal frame is ``Q^T = Q_p ... Q_1`` with ``Q_i = diag(I_{i-1}, P_i)``
and ``P_i = I - 2 w w^T / (w^T w)``, ``w = [1, what_i]``. Only the tail
coordinates ``what_i`` (length ``d - i``) are stored. They follow the ODE

    what' = (m11 + what.c1 - 2 w.M w / w.w) what + (1 - w.w / 2) c1 + Chat what

with ``M = [[m11, .], [c1, Chat]]`` the trailing block of ``C_{i-1}``; this is
the condition that column ``i`` of ``C_i = Q_i C_{i-1} Q_i - Q_i dQ_i/dt`` has
zeros below the diagonal.

The coordinates are a chart: ``what`` and ``-what / (what.what)`` describe
reflectors that send the same tracked column to ``+r e_1`` and ``-r e_1``.
``sigma`` records which one is in use; the chart with ``what.what <= 1`` is
the numerically stable one.

Every array helper below is batched over leading axes (``what_i`` of shape
``(..., d - i)``, ``C`` of shape ``(..., d, d)``).
"""
from dataclasses import dataclass

import numpy as np

from .errors import InputError, InvariantError

LEAK_TOL = 1e-10


# --- array-level kernels ----------------------------------------------------

def _beta(what):
    return 2.0 / (1.0 + np.einsum("...i,...i->...", what, what))


def _w(what):
    one = np.ones(what.shape[:-1] + (1,))
    return np.concatenate([one, what], axis=-1)


def reflect_vectors(what, X, offset):
    """Apply ``Q_i`` to vectors ``X[..., d]``; the reflector starts at ``offset``."""
    w = _w(what)
    beta = _beta(what)
    X = np.array(X, dtype=float, copy=True)
    blk = X[..., offset:]
    X[..., offset:] = blk - (beta * np.einsum("...i,...i->...", w, blk))[..., None] * w
    return X


def frame_T(whats, u):
    """``z = Q^T u``: apply ``Q_1`` first, then ``Q_2``, ... ."""
    z = np.asarray(u, dtype=float)
    for i, wh in enumerate(whats):
        z = reflect_vectors(wh, z, i)
    return z


def frame(whats, z):
    """``u = Q z``: apply ``Q_p`` first."""
    u = np.asarray(z, dtype=float)
    for i in range(len(whats) - 1, -1, -1):
        u = reflect_vectors(whats[i], u, i)
    return u


def what_dot(what, M):
    """Right-hand side of one reflector ODE given the trailing block ``M``."""
    m11 = M[..., 0, 0]
    c1 = M[..., 1:, 0]
    Ch = M[..., 1:, 1:]
    w = _w(what)
    s = np.einsum("...i,...i->...", what, what)
    wMw = np.einsum("...i,...ij,...j->...", w, M, w)
    coef = m11 + np.einsum("...i,...i->...", what, c1) - 2.0 * wMw / (1.0 + s)
    return (coef[..., None] * what + (0.5 * (1.0 - s))[..., None] * c1
            + np.einsum("...ij,...j->...i", Ch, what))


def update_C(C_prev, what_i, dwhat_i):
    """One ``(C, Q_i)`` update: ``C_i = Q_i C_{i-1} Q_i - Q_i dQ_i/dt``.

    The reflector index is implied by ``len(what_i) = d - i``. Leading rows and
    columns outside the trailing block are only multiplied by ``P_i``.
    """
    C = np.array(C_prev, dtype=float, copy=True)
    d = C.shape[-1]
    what_i = np.asarray(what_i, dtype=float)
    dwhat_i = np.asarray(dwhat_i, dtype=float)
    nb = what_i.shape[-1] + 1
    k0 = d - nb
    if k0 < 0:
        raise InputError("reflector longer than the matrix")
    w = _w(what_i)
    wdot = np.concatenate([np.zeros(dwhat_i.shape[:-1] + (1,)), dwhat_i], axis=-1)
    ww = 1.0 + np.einsum("...i,...i->...", what_i, what_i)
    assert np.all(ww >= 1.0)
    beta = (2.0 / ww)[..., None, None]
    M = C[..., k0:, k0:]
    Mw = np.einsum("...ij,...j->...i", M, w)
    wM = np.einsum("...i,...ij->...j", w, M)
    wMw = np.einsum("...i,...i->...", w, Mw)[..., None, None]
    ww_outer = w[..., :, None] * w[..., None, :]
    PMP = (M - beta * w[..., :, None] * wM[..., None, :] - beta * Mw[..., :, None] * w[..., None, :]
           + beta ** 2 * wMw * ww_outer)
    skew = w[..., :, None] * wdot[..., None, :] - wdot[..., :, None] * w[..., None, :]
    C[..., k0:, k0:] = PMP - beta * skew
    if k0:
        X = C[..., :k0, k0:]
        C[..., :k0, k0:] = X - beta * np.einsum("...ij,...j->...i", X, w)[..., :, None] * w[..., None, :]
        Y = C[..., k0:, :k0]
        C[..., k0:, :k0] = Y - beta * w[..., :, None] * np.einsum("...i,...ij->...j", w, Y)[..., None, :]
    return C


def sweep(whats, C):
    """All reflector derivatives and the fully updated ``C_p`` (= D)."""
    C = np.asarray(C, dtype=float)
    d = C.shape[-1]
    dwhats = []
    for i, wh in enumerate(whats):
        dw = what_dot(wh, C[..., i:, i:])
        dwhats.append(dw)
        C = update_C(C, wh, dw)
    return dwhats, C


def frame_columns(whats, d):
    """First ``p`` columns of ``Q`` (as rows of a ``(p, d)`` array) for one node."""
    return frame(whats, np.eye(d)[:len(whats)])


def columns_to_whats(cols, stabilize=False):
    """Rebuild reflector coordinates from the first ``p`` frame columns.

    The stack is unique: reflector ``j`` must send the partially reduced
    column ``c`` to ``e_1``, which forces ``what_j = -c[1:] / (1 - c[0])``.
    With ``stabilize`` a column whose reduced leading entry is positive is
    negated first so that ``what_j . what_j <= 1``. Returns the coordinates
    and the per-column negation flags.
    """
    A = np.array(cols, dtype=float, copy=True)
    p = A.shape[0]
    whats, negated = [], []
    for j in range(p):
        c = A[j, j:] / np.linalg.norm(A[j, j:])
        neg = bool(stabilize and c[0] > 0.0)
        if neg:
            A[j] = -A[j]
            c = -c
        if 1.0 - c[0] < 1e-300:
            raise InvariantError(f"column {j} is +e_1: its reflector chart is at infinity")
        wh = -c[1:] / (1.0 - c[0])
        whats.append(wh)
        negated.append(neg)
        A = reflect_vectors(wh, A, j)
    return whats, negated


def switch_charts(whats, flips, z=None, stabilize=False):
    """Change chart for the reflectors flagged in ``flips`` (one node).

    Flipping reflector ``i`` negates frame column ``i``; the later reflectors
    are rebuilt so every other leading column is kept, and the trailing
    complement only rotates within itself. When ``z`` is given it is carried
    across so that ``u = Q z`` is unchanged. Returns ``(whats, z, flips)``
    where the returned flags include any columns negated by ``stabilize``.
    """
    whats = [np.asarray(w, dtype=float) for w in whats]
    if not whats:
        return whats, z, []
    d = whats[0].size + 1
    cols = frame_columns(whats, d)
    sign = np.where(np.asarray(flips, dtype=bool), -1.0, 1.0)
    new, neg = columns_to_whats(cols * sign[:, None], stabilize=stabilize)
    total = [bool(f) != n for f, n in zip(flips, neg)]
    if z is not None:
        z = frame_T(new, frame(whats, z))
    return new, z, total


def stabilize_whats(whats, z=None):
    """Switch charts until every coordinate lies in the closed unit ball.

    Returns ``(whats, z, flips)``; ``flips`` is all False if nothing changed.
    """
    s = [float(w @ w) for w in whats]
    bad = [i for i, v in enumerate(s) if v > 1.0]
    if not bad:
        return list(whats), z, [False] * len(whats)
    # columns before the first offender already sit in their stable chart,
    # so the stabilizing rebuild leaves them alone
    flips = [k == bad[0] for k in range(len(whats))]
    return switch_charts(whats, flips, z=z, stabilize=True)


# --- value types ------------------------------------------------------------

@dataclass(frozen=True)
class ReflectorStack:
    d: int
    what: tuple
    sigma: tuple

    def __post_init__(self):
        p = len(self.what)
        if not 0 <= p < self.d:
            raise InputError(f"need 0 <= p < d, got p={p}, d={self.d}")
        if len(self.sigma) != p:
            raise InputError("one sign per reflector required")
        for i, wh in enumerate(self.what):
            if np.shape(wh) != (self.d - i - 1,):
                raise InputError(f"what[{i}] must have length {self.d - i - 1}")
            if float(np.dot(wh, wh)) > 1.0 + 1e-12:
                raise InvariantError(f"what[{i}] outside the unit ball; reembed it first")

    @property
    def p(self):
        return len(self.what)

    @classmethod
    def raw(cls, d, what, sigma):
        """Build without the unit-ball check (intermediate or test states)."""
        out = object.__new__(cls)
        object.__setattr__(out, "d", d)
        object.__setattr__(out, "what", tuple(np.asarray(w, dtype=float) for w in what))
        object.__setattr__(out, "sigma", tuple(sigma))
        return out

    @classmethod
    def from_boundary(cls, d, whats):
        """Stack from raw boundary values, moved to the stable chart if needed.

        The tracked frame is the one the raw values describe; out-of-ball
        coordinates are switched chart by chart, which flips the sign of the
        corresponding frame column.
        """
        whs = [np.asarray(w, dtype=float) for w in whats]
        new, _, flips = stabilize_whats(whs)
        return cls(d=d, what=tuple(new), sigma=tuple(-1 if f else 1 for f in flips))

    @classmethod
    def zeros(cls, d, p):
        return cls(d=d, what=tuple(np.zeros(d - i - 1) for i in range(p)), sigma=(1,) * p)

    def flat(self):
        return np.concatenate(self.what) if self.p else np.zeros(0)

    @classmethod
    def from_flat(cls, d, p, flat, sigma=None):
        out, k = [], 0
        for i in range(p):
            n = d - i - 1
            out.append(np.asarray(flat[k:k + n], dtype=float))
            k += n
        return cls(d=d, what=tuple(out), sigma=tuple(sigma) if sigma is not None else (1,) * p)


@dataclass(frozen=True)
class DecoupledState:
    y: np.ndarray
    x: np.ndarray
    t: float = 0.0


@dataclass(frozen=True)
class BlockD:
    D11: np.ndarray
    D12: np.ndarray
    D22: np.ndarray
    leak11: float = 0.0   # max |strict lower part of D11| as computed
    leak21: float = 0.0   # max |(2,1) block| as computed, before zeroing

    def assembled(self):
        p = self.D11.shape[0]
        n = self.D22.shape[0]
        return np.block([[self.D11, self.D12], [np.zeros((n, p)), self.D22]])


# --- operations on stacks ---------------------------------------------------

def v_from_what(what_i, sigma_i):
    """Unit reflector vector ``v = -sigma [1, what] / ||[1, what]||``."""
    what_i = np.asarray(what_i, dtype=float)
    if what_i @ what_i > 1.0 + 1e-12:
        raise InvariantError("what outside the unit ball")
    w = np.concatenate([[1.0], what_i])
    return -sigma_i * w / np.linalg.norm(w)


def what_rhs(stack, C, t=None):
    """Derivatives of all reflector coordinates for coefficient matrix ``C``."""
    dwhats, _ = sweep(stack.what, np.asarray(C, dtype=float))
    return dwhats


def needs_reembed(stack):
    return [i for i, wh in enumerate(stack.what) if float(wh @ wh) > 1.0]


def reembed(stack, i):
    """Switch reflector ``i`` to its other chart, keeping the frame's columns.

    ``what_i -> -what_i / (what_i . what_i)`` and ``sigma_i -> -sigma_i``;
    later reflectors are re-derived so that columns other than ``i`` are
    unchanged (their signs included).
    """
    wh = np.asarray(stack.what[i], dtype=float)
    if float(wh @ wh) == 0.0:
        raise InvariantError("cannot reembed what = 0: the opposite chart is at infinity")
    flips = [k == i for k in range(stack.p)]
    new, _, total = switch_charts(stack.what, flips)
    sig = tuple(-s if f else s for s, f in zip(stack.sigma, total))
    return ReflectorStack.raw(stack.d, new, sig)


def assemble_Q(stack):
    return frame(stack.what, np.eye(stack.d)).T


def to_rotated(stack, u, t=0.0):
    u = np.asarray(u, dtype=float)
    if u.shape != (stack.d,):
        raise InputError(f"state must have length {stack.d}")
    z = frame_T(stack.what, u)
    return DecoupledState(y=z[:stack.p], x=z[stack.p:], t=t)


def from_rotated(stack, s):
    y, x = np.asarray(s.y, dtype=float), np.asarray(s.x, dtype=float)
    if y.shape != (stack.p,) or x.shape != (stack.d - stack.p,):
        raise InputError("block sizes do not match the stack")
    return frame(stack.what, np.concatenate([y, x]))


def assemble_D(stack, C, dwhat=None):
    """Block form of ``D = Q^T C Q - Q^T dQ/dt`` from the update recursion."""
    C = np.asarray(C, dtype=float)
    if dwhat is None:
        dwhat = what_rhs(stack, C)
    for wh, dw in zip(stack.what, dwhat):
        C = update_C(C, wh, dw)
    p = stack.p
    D11 = C[:p, :p].copy()
    leak11 = float(np.max(np.abs(np.tril(D11, -1)))) if p > 1 else 0.0
    leak21 = float(np.max(np.abs(C[p:, :p]))) if p else 0.0
    return BlockD(D11=D11, D12=C[:p, p:].copy(), D22=C[p:, p:].copy(), leak11=leak11, leak21=leak21)
