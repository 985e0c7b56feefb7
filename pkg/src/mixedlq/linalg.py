"""Small dense helpers shared by the solvers.

Multi-noise contractions are handled by lifting: the d diffusion blocks are
stacked vertically (``Cbar = [C_1; ...; C_d]``) and the value matrix is
replaced by ``kron(I_d, S)``.  Then ``sum_j C_j' S D_j == Cbar' Sbar Dbar``
and every single-noise formula carries over verbatim.
"""
import numpy as np
from scipy.linalg import cho_solve


def sym(M):
    return 0.5 * (M + M.T)


def stack_noise(X):
    """(d, n, m) -> (d*n, m)."""
    d, n, m = X.shape
    return X.reshape(d * n, m)


def lift(S, d):
    return S if d == 1 else np.kron(np.eye(d), S)


def chol_solve(M, rhs, exc, *, time=None, what=""):
    """Solve ``M x = rhs`` for symmetric positive definite ``M``.

    Raises ``exc`` (with ``time`` attached) when the Cholesky factorization
    fails; there is deliberately no pseudo-inverse fallback.
    """
    if M.shape[0] == 0:
        return np.zeros((0,) + rhs.shape[1:])
    try:
        L = np.linalg.cholesky(sym(M))
    except np.linalg.LinAlgError:
        lam = np.linalg.eigvalsh(sym(M)).min()
        raise exc(f"{what} not positive definite (min eig {lam:.3e})", time=time) from None
    return cho_solve((L, True), rhs)


def min_eig(M):
    if M.size == 0:
        return np.inf
    return float(np.linalg.eigvalsh(sym(M)).min())


def fro(M):
    return float(np.sqrt(np.sum(M * M)))
