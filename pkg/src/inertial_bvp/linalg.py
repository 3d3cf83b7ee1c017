"""Dense kernels: reflector application plus QR/eigenvalue oracles.

The oracles here (``qr_oracle``, ``eig_real_parts``) are used for tests and
diagnostics only; the decoupling engine never calls them.
"""
import numpy as np

from .errors import DegeneracyError, InputError, NumericalError

UNIT_TOL = 1e-12
PIVOT_TOL = 1e-13


def householder_apply(v, M, side="left"):
    """Return ``(I - 2 v v^T) M`` (``side="left"``) or ``M (I - 2 v v^T)``.

    The reflector is never formed; cost is one rank-1 update.
    """
    v = np.asarray(v, dtype=float)
    M = np.asarray(M, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
        raise InputError(f"reflector vector must be unit length, got norm {np.linalg.norm(v)!r}")
    if side == "left":
        if M.ndim == 1:
            return M - 2.0 * v * (v @ M)
        return M - 2.0 * np.outer(v, v @ M)
    if side == "right":
        if M.ndim == 1:
            return M - 2.0 * (M @ v) * v
        return M - 2.0 * np.outer(M @ v, v)
    raise InputError(f"side must be 'left' or 'right', got {side!r}")


def qr_oracle(M, sign_convention=None):
    """QR factorization with prescribed signs on ``diag(R)``.

    ``sign_convention`` is a sequence of +-1 (default all +1).
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InputError(f"qr_oracle needs a square matrix, got shape {M.shape}")
    n = M.shape[0]
    signs = np.ones(n) if sign_convention is None else np.asarray(sign_convention, dtype=float)
    if signs.shape != (n,) or not np.all(np.abs(signs) == 1.0):
        raise InputError("sign_convention must hold one +-1 per column")
    Q, R = np.linalg.qr(M)
    diag = np.diag(R)
    if np.any(np.abs(diag) < PIVOT_TOL):
        col = int(np.argmin(np.abs(diag)))
        raise DegeneracyError(f"rank-deficient column {col}: pivot {abs(diag[col]):.3e}")
    flip = signs * np.sign(diag)
    return Q * flip, flip[:, None] * R


def eig_real_parts(M):
    """Real parts of all eigenvalues of ``M``, sorted descending."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InputError(f"eig_real_parts needs a square matrix, got shape {M.shape}")
    try:
        lam = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        # LAPACK reports the failing QR sweep index in the message
        raise NumericalError(f"eigenvalue iteration did not converge: {exc}") from exc
    return np.sort(lam.real)[::-1]
